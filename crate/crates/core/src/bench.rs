//! Bundled benchmark configurations and a scalable n-dimensional system.

use crate::io::config::{Config, ConfigError};

/// `(name, config text)` for every bundled benchmark.
pub const BUNDLED: &[(&str, &str)] = &[
    ("robot_safety", include_str!("../configs/robot_safety.cfg")),
    ("robot_reach_avoid", include_str!("../configs/robot_reach_avoid.cfg")),
    ("room_temp_3d", include_str!("../configs/room_temp_3d.cfg")),
    ("room_temp_5d", include_str!("../configs/room_temp_5d.cfg")),
    ("traffic_3d", include_str!("../configs/traffic_3d.cfg")),
    ("traffic_5d", include_str!("../configs/traffic_5d.cfg")),
    ("vehicle_3d", include_str!("../configs/vehicle_3d.cfg")),
    ("bmw_7d", include_str!("../configs/bmw_7d.cfg")),
];

pub fn bundled(name: &str) -> Option<Config> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Config::parse(text).expect("bundled configs are valid"))
}

/// Autonomous linear system on `[-1, 1]^n` with two grid points per
/// dimension (`2^n` states), weak coupling to the next coordinate, and
/// unit-variance normal noise. The tiny cutting probability keeps full
/// windows in every dimension up to 20, so a row has `2^n` entries.
pub fn scalable_config(n: usize, horizon: usize) -> Result<Config, ConfigError> {
    assert!(n >= 1);
    let mut text = format!(
        "states.dim = {n};\nstates.lb = -1;\nstates.ub = 1;\nstates.eta = 2;\n\
         noise.type = normal;\nnoise.sigma = 1;\nnoise.cutting_probability = 1e-12;\n\
         spec.type = safety;\nspec.time_steps = {horizon};\n"
    );
    for i in 0..n {
        let next = (i + 1) % n;
        if n == 1 {
            text.push_str("dynamics.x0 = 0.9*x0;\n");
        } else {
            text.push_str(&format!("dynamics.x{i} = 0.8*x{i} + 0.1*x{next};\n"));
        }
    }
    Config::parse(&text)
}
