//! Browser demo: a coarse version of the planar robot, small enough to
//! synthesize in a page. Each operation has a plain Rust function (used by
//! the native tests) and a thin `wasm_bindgen` wrapper.

use stochsynth::io::config::Config;
use stochsynth::model::SystemModel;
use stochsynth::noise::{Cutting, NoiseSpec};
use stochsynth::sim::{simulate, DisturbanceMode, SimOptions};
use stochsynth::synthesis::{synthesize, SynthesisMode, SynthesisOptions, SynthesisResult};
use wasm_bindgen::prelude::*;

/// Coarse robot: 1.0 state cells, 0.5 input cells, 5 disturbance points.
fn robot_config(objective: &str, sigma: f64, gamma: f64, horizon: usize) -> Result<Config, String> {
    if !(sigma > 0.0) {
        return Err("sigma must be positive".into());
    }
    let spec = match objective {
        "safety" => String::from("spec.type = safety;\n"),
        "reach-avoid" => String::from(
            "spec.type = reach-avoid;\ntarget.lb = {5, 5};\ntarget.ub = {7, 7};\navoid.lb = {-2, -2};\navoid.ub = {2, 2};\n",
        ),
        other => return Err(format!("unknown objective `{other}`")),
    };
    let text = format!(
        "states.dim = 2;\nstates.lb = {{-10, -10}};\nstates.ub = {{10, 10}};\nstates.eta = {{1, 1}};\n\
         inputs.dim = 2;\ninputs.lb = {{-1, -1}};\ninputs.ub = {{1, 1}};\ninputs.eta = {{0.5, 0.5}};\n\
         disturbances.dim = 1;\ndisturbances.lb = {{-1}};\ndisturbances.ub = {{1}};\ndisturbances.eta = {{0.5}};\n\
         constants.tau = 10;\n\
         dynamics.x0 = x0 + tau*u0*cos(u1) + w0;\ndynamics.x1 = x1 + tau*u1*sin(u1) + w0;\n\
         noise.type = normal;\nnoise.sigma = {sigma:?};\nnoise.cutting_probability = {gamma:?};\n\
         spec.time_steps = {horizon};\n{spec}"
    );
    Config::parse(&text).map_err(|e| e.to_string())
}

fn solve(objective: &str, sigma: f64, gamma: f64, horizon: usize) -> Result<(SystemModel, SynthesisResult), String> {
    let cfg = robot_config(objective, sigma, gamma, horizon)?;
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let opts = SynthesisOptions {
        mode: SynthesisMode::OnTheFly,
        threads: 1,
        mem_budget: None,
    };
    let res = synthesize(&model, &cfg.build_spec(), &opts).map_err(|e| e.to_string())?;
    Ok((model, res))
}

/// Values with the whole horizon remaining, row-major over the state grid,
/// prefixed by the grid shape: `[rows, cols, lb0, lb1, eta0, eta1, v...]`.
pub fn value_map(objective: &str, sigma: f64, gamma: f64, horizon: usize) -> Result<Vec<f64>, String> {
    let (model, res) = solve(objective, sigma, gamma, horizon)?;
    let g = &model.state;
    let mut out = vec![
        g.counts()[0] as f64,
        g.counts()[1] as f64,
        g.lb()[0],
        g.lb()[1],
        g.eta()[0],
        g.eta()[1],
    ];
    out.extend_from_slice(res.values_at(1));
    Ok(out)
}

/// Cutting window of a 2-D normal law with standard deviation `sigma` on a
/// grid of width `eta`, centred at offset `(dx, dy)` from a grid point.
/// Returns `[radius, half_width, width, mass_inside, row_mass, cells...]`
/// with `width * width` cell masses, row-major.
pub fn cutting_window(sigma: f64, gamma: f64, eta: f64, dx: f64, dy: f64) -> Result<Vec<f64>, String> {
    if !(eta > 0.0) {
        return Err("eta must be positive".into());
    }
    let noise = NoiseSpec::normal(vec![sigma, sigma], gamma).map_err(|e| e.to_string())?;
    let radius = match noise.cutting_radius() {
        Cutting::Radius(r) => r[0],
        Cutting::Full => f64::INFINITY,
    };
    let half = noise
        .window_half_widths(&[eta, eta])
        .map(|h| h[0])
        .filter(|h| *h <= 60)
        .ok_or("window too large to draw; raise the cutting probability")?;
    let width = 2 * half + 1;
    let per_axis = |offset: f64| -> Result<Vec<f64>, String> {
        (0..width)
            .map(|j| {
                let p = (j as f64 - half as f64) * eta;
                noise
                    .interval_mass(0, offset, p - 0.5 * eta, p + 0.5 * eta, 1.0)
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let (px, py) = (per_axis(dx)?, per_axis(dy)?);
    let mut cells = Vec::with_capacity(width * width);
    for a in &px {
        for b in &py {
            cells.push(a * b);
        }
    }
    let row_mass: f64 = cells.iter().sum();
    let mut out = vec![radius, half as f64, width as f64, noise.normal_mass_inside().unwrap_or(1.0), row_mass];
    out.extend(cells);
    Ok(out)
}

/// Closed-loop runs of the reach-avoid controller from `(x, y)`. Returns
/// `[runs, satisfied_runs, value, then per run: len, ok, x0, y0, x1, y1, ...]`.
pub fn trajectories(sigma: f64, gamma: f64, horizon: usize, x: f64, y: f64, runs: usize, seed: u64) -> Result<Vec<f64>, String> {
    let (model, res) = solve("reach-avoid", sigma, gamma, horizon)?;
    let x0 = vec![x, y];
    let i0 = model.state.point_to_index(&x0).map_err(|e| e.to_string())?;
    let opts = SimOptions {
        x0,
        runs,
        seed,
        disturbance: DisturbanceMode::Random,
        threads: 1,
    };
    let batch = simulate(&model, &res, &opts).map_err(|e| e.to_string())?;
    let ok = batch.runs.iter().filter(|r| r.satisfied).count();
    let mut out = vec![runs as f64, ok as f64, res.value(1, i0)];
    for run in &batch.runs {
        out.push((run.steps + 1) as f64);
        out.push(if run.satisfied { 1.0 } else { 0.0 });
        out.extend_from_slice(&run.states);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = valueMap)]
pub fn value_map_js(objective: &str, sigma: f64, gamma: f64, horizon: usize) -> Result<Vec<f64>, JsError> {
    value_map(objective, sigma, gamma, horizon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cuttingWindow)]
pub fn cutting_window_js(sigma: f64, gamma: f64, eta: f64, dx: f64, dy: f64) -> Result<Vec<f64>, JsError> {
    cutting_window(sigma, gamma, eta, dx, dy).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trajectories)]
pub fn trajectories_js(
    sigma: f64,
    gamma: f64,
    horizon: usize,
    x: f64,
    y: f64,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    trajectories(sigma, gamma, horizon, x, y, runs, seed).map_err(|e| JsError::new(&e))
}
