//! Independent reference implementations shared by the integration tests
//! and the acceptance harness. Everything here is deliberately naive: dense
//! rows over the whole state grid and straightforward loops.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochsynth::expr::{Dims, Expr};
use stochsynth::grid::{HyperRect, UniformGrid};
use stochsynth::model::SystemModel;
use stochsynth::noise::{Family, NoiseMode, NoiseSpec};
use stochsynth::synthesis::Spec;

pub struct Fixture {
    pub name: String,
    pub model: SystemModel,
    pub spec: Spec,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn random_grid(rng: &mut ChaCha8Rng, dim: usize, max_count: usize) -> UniformGrid {
    let mut lb = Vec::new();
    let mut ub = Vec::new();
    let mut eta = Vec::new();
    for _ in 0..dim {
        let e = round3(rng.random_range(0.3..0.7));
        let c = rng.random_range(2..=max_count);
        let l = round3(rng.random_range(-1.5..-0.5));
        lb.push(l);
        ub.push(l + (c - 1) as f64 * e);
        eta.push(e);
    }
    UniformGrid::new(lb, ub, eta).unwrap()
}

fn coef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> String {
    format!("{:?}", round3(rng.random_range(lo..hi)))
}

fn random_box(rng: &mut ChaCha8Rng, grid: &UniformGrid) -> HyperRect {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for d in 0..grid.dim() {
        let n = grid.counts()[d];
        let a = rng.random_range(0..n);
        let b = rng.random_range(a..n.min(a + 2));
        // slightly inside the cell edges so snapping is not at the boundary
        lo.push(grid.coord(d, a) - 0.1 * grid.eta()[d]);
        hi.push(grid.coord(d, b) + 0.1 * grid.eta()[d]);
    }
    HyperRect::new(lo, hi)
}

/// Small random system. `family` picks normal, uniform, exponential or beta
/// (0..4); `seed` drives everything else.
pub fn random_fixture(seed: u64, family: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let max_count = [0, 9, 6, 4][n];
    let state = random_grid(&mut rng, n, max_count);
    let m = rng.random_range(1..=2usize);
    let input = random_grid(&mut rng, m, 3);
    let disturbance = if rng.random_bool(0.5) {
        Some(random_grid(&mut rng, 1, 3))
    } else {
        None
    };
    let p = disturbance.as_ref().map_or(0, |g| g.dim());
    let dims = Dims::new(n, m, p);
    let mut dynamics = Vec::new();
    for i in 0..n {
        let mut text = format!(
            "{}*x{i} + {}*x{} + {}*u{} + {}*sin(x{})",
            coef(&mut rng, 0.5, 1.0),
            coef(&mut rng, -0.2, 0.2),
            (i + 1) % n,
            coef(&mut rng, -0.8, 0.8),
            i % m,
            coef(&mut rng, -0.2, 0.2),
            (i + n - 1) % n,
        );
        if p > 0 {
            text.push_str(&format!(" + {}*w0", coef(&mut rng, -0.5, 0.5)));
        }
        dynamics.push(Expr::parse(&text, dims, &BTreeMap::new()).unwrap());
    }
    let eta = state.eta().to_vec();
    let family_value = match family % 4 {
        0 => Family::Normal {
            sigma: eta.iter().map(|e| round3(e * rng.random_range(0.3..1.2))).collect(),
        },
        1 => Family::Uniform {
            lo: eta.iter().map(|e| -round3(e * rng.random_range(0.2..1.5))).collect(),
            hi: eta.iter().map(|e| round3(e * rng.random_range(0.2..1.5))).collect(),
        },
        2 => Family::Exponential {
            rate: eta.iter().map(|e| round3(rng.random_range(0.8..3.0) / e)).collect(),
        },
        _ => Family::Beta {
            alpha: (0..n).map(|_| round3(rng.random_range(0.7..4.0))).collect(),
            beta: (0..n).map(|_| round3(rng.random_range(0.7..4.0))).collect(),
        },
    };
    let mode = if rng.random_bool(0.2) {
        NoiseMode::Multiplicative
    } else {
        NoiseMode::Additive
    };
    let gamma = [1e-1, 1e-2, 1e-3][rng.random_range(0..3)];
    let noise = NoiseSpec::new(family_value, mode, gamma).unwrap();
    let horizon = rng.random_range(2..=5);
    let spec = match rng.random_range(0..3) {
        0 => Spec::safety(horizon),
        1 => Spec::reachability(horizon, random_box(&mut rng, &state)),
        _ => {
            let target = random_box(&mut rng, &state);
            let avoid = random_box(&mut rng, &state);
            Spec::reach_avoid(horizon, target, Some(avoid))
        }
    };
    let name = format!(
        "seed {seed}: n={n} m={m} p={p} {} {:?} gamma={gamma} {}",
        noise.family_name(),
        mode,
        spec.kind
    );
    let model = SystemModel::new(state, input, disturbance, dynamics, noise).unwrap();
    Fixture { name, model, spec }
}

/// `count` fixtures cycling through all four noise families.
pub fn fixtures(count: usize) -> Vec<Fixture> {
    (0..count).map(|i| random_fixture(1000 + i as u64, i)).collect()
}

/// Cutting radius straight from the density threshold definition.
fn oracle_radius(noise: &NoiseSpec) -> Option<(Vec<f64>, bool)> {
    if noise.mode == NoiseMode::Multiplicative {
        return None;
    }
    let g = noise.gamma;
    match &noise.family {
        Family::Normal { sigma } => {
            let n = sigma.len() as f64;
            let peak = 1.0 / ((2.0 * std::f64::consts::PI).powf(n / 2.0) * sigma.iter().product::<f64>());
            let r = if g >= peak {
                vec![0.0; sigma.len()]
            } else {
                // pdf(r e_i) = peak * exp(-r^2 / (2 sigma_i^2)) = gamma
                sigma.iter().map(|s| s * (2.0 * (peak / g).ln()).sqrt()).collect()
            };
            Some((r, false))
        }
        Family::Exponential { rate } => {
            let peak: f64 = rate.iter().product();
            Some((rate.iter().map(|r| ((peak / g).ln() / r).max(0.0)).collect(), false))
        }
        Family::Uniform { lo, hi } => Some((lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs())).collect(), true)),
        Family::Beta { alpha, .. } => Some((vec![1.0; alpha.len()], true)),
        Family::Custom(_) => unimplemented!("oracle covers the built-in families"),
    }
}

/// Per-dimension index ranges `[start, start + width)` of the cutting
/// window around `mean`, or the whole grid without cutting.
pub fn oracle_window(model: &SystemModel, mean: &[f64]) -> Vec<(usize, usize)> {
    let grid = &model.state;
    let radius = oracle_radius(&model.noise);
    (0..grid.dim())
        .map(|d| {
            let count = grid.counts()[d];
            let Some((r, bounded)) = &radius else {
                return (0, count);
            };
            let cells = r[d] / grid.eta()[d];
            let h = if *bounded { (cells - 1e-12).ceil() } else { (cells + 1e-12).floor() } as usize;
            let width = (2 * h + 1).min(count);
            let c = ((mean[d] - grid.lb()[d]) / grid.eta()[d] + 0.5).floor() as i64;
            let start = (c - h as i64).clamp(0, (count - width) as i64) as usize;
            (start, width)
        })
        .collect()
}

pub struct DenseRow {
    pub mean: Vec<f64>,
    /// Probability of every cell of the state grid, no cutting.
    pub full: Vec<f64>,
    pub window: Vec<(usize, usize)>,
}

impl DenseRow {
    pub fn in_window(&self, grid: &UniformGrid, post: usize) -> bool {
        let multi = grid.multi_index(post).unwrap();
        multi
            .iter()
            .zip(&self.window)
            .all(|(j, (s, w))| *j >= *s && *j < s + w)
    }

    /// The cut row: full probabilities inside the window, zero outside.
    pub fn cut(&self, grid: &UniformGrid) -> Vec<f64> {
        (0..self.full.len())
            .map(|i| if self.in_window(grid, i) { self.full[i] } else { 0.0 })
            .collect()
    }
}

pub fn point(grid: &UniformGrid, i: usize) -> Vec<f64> {
    grid.index_to_point(i).unwrap()
}

/// Dense transition row of `(x, u, w)` by integrating the noise law over
/// every cell of the grid.
pub fn dense_row(model: &SystemModel, x: usize, u: usize, w: usize) -> DenseRow {
    let xs = point(&model.state, x);
    let us = point(&model.input, u);
    let ws = match &model.disturbance {
        Some(g) => point(g, w),
        None => Vec::new(),
    };
    let mean: Vec<f64> = model.dynamics.iter().map(|f| f.eval(&xs, &us, &ws).unwrap()).collect();
    let full = (0..model.n_states())
        .map(|j| {
            let cell = model.state.cell_bounds(j).unwrap();
            model.noise.cell_probability(&mean, &cell, Some(&xs)).unwrap()
        })
        .collect();
    let window = oracle_window(model, &mean);
    DenseRow { mean, full, window }
}

/// Cells whose representatives lie in every box of `sets` (1e-9 slack),
/// as the union of those cells; `None` if there are none.
fn snapped(grid: &UniformGrid, sets: &[&HyperRect]) -> Option<HyperRect> {
    let inside: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let p = point(grid, i);
            sets.iter().all(|b| (0..p.len()).all(|d| p[d] >= b.lo[d] - 1e-9 && p[d] <= b.hi[d] + 1e-9))
        })
        .collect();
    if inside.is_empty() {
        return None;
    }
    let n = grid.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for i in inside {
        let cell = grid.cell_bounds(i).unwrap();
        for d in 0..n {
            lo[d] = lo[d].min(cell.lo[d]);
            hi[d] = hi[d].max(cell.hi[d]);
        }
    }
    Some(HyperRect::new(lo, hi))
}

fn rep_in(b: &HyperRect, p: &[f64]) -> bool {
    (0..p.len()).all(|d| p[d] >= b.lo[d] - 1e-9 && p[d] <= b.hi[d] + 1e-9)
}

/// Absorbing post-states: representatives in the target or the avoid set.
pub fn oracle_absorbing(grid: &UniformGrid, spec: &Spec) -> Vec<bool> {
    (0..grid.len())
        .map(|i| {
            let p = point(grid, i);
            spec.target.as_ref().is_some_and(|t| rep_in(t, &p)) || spec.avoid.as_ref().is_some_and(|a| rep_in(a, &p))
        })
        .collect()
}

/// One-step probability of landing in a target cell that is not an avoid
/// cell.
pub fn oracle_hit(model: &SystemModel, spec: &Spec, x: usize, mean: &[f64]) -> f64 {
    let Some(t) = &spec.target else {
        return 0.0;
    };
    let xs = point(&model.state, x);
    let mass = |b: &HyperRect| model.noise.cell_probability(mean, b, Some(&xs)).unwrap();
    let Some(tb) = snapped(&model.state, &[t]) else {
        return 0.0;
    };
    let overlap = spec.avoid.as_ref().and_then(|a| snapped(&model.state, &[t, a]));
    (mass(&tb) - overlap.map_or(0.0, |o| mass(&o))).max(0.0)
}

pub struct DenseSolution {
    /// `values[k - 1][x]` for `k = 1..=T + 1`.
    pub values: Vec<Vec<f64>>,
    /// `policy[k - 1][x]` for `k = 1..=T`.
    pub policy: Vec<Vec<u32>>,
}

/// Backward max-min recursion over dense cut rows.
pub fn dense_synthesis(model: &SystemModel, spec: &Spec) -> DenseSolution {
    let (nx, nu, nw) = (model.n_states(), model.n_inputs(), model.n_disturbances());
    let reach = spec.target.is_some();
    let absorbing = if reach { oracle_absorbing(&model.state, spec) } else { vec![false; nx] };
    // rows[(x * nu + u) * nw + w] = (cut row, hit)
    let mut rows = Vec::with_capacity(nx * nu * nw);
    for x in 0..nx {
        for u in 0..nu {
            for w in 0..nw {
                let r = dense_row(model, x, u, w);
                let hit = if reach { oracle_hit(model, spec, x, &r.mean) } else { 0.0 };
                rows.push((r.cut(&model.state), hit));
            }
        }
    }
    let t = spec.horizon;
    let terminal = if reach { 0.0 } else { 1.0 };
    let mut values = vec![vec![0.0; nx]; t + 1];
    values[t] = (0..nx).map(|x| if absorbing[x] { 0.0 } else { terminal }).collect();
    let mut policy = vec![vec![0u32; nx]; t];
    for k in (0..t).rev() {
        for x in 0..nx {
            if absorbing[x] {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for u in 0..nu {
                let mut low = f64::INFINITY;
                for w in 0..nw {
                    let (row, hit) = &rows[(x * nu + u) * nw + w];
                    let mut acc = 0.0;
                    for j in 0..nx {
                        if !absorbing[j] {
                            acc += row[j] * values[k + 1][j];
                        }
                    }
                    low = low.min(acc + hit);
                }
                if low > best {
                    best = low;
                    arg = u as u32;
                }
            }
            values[k][x] = best.clamp(0.0, 1.0);
            policy[k][x] = arg;
        }
    }
    DenseSolution { values, policy }
}
