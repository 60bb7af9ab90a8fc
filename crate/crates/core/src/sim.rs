//! Closed-loop Monte Carlo simulation of a synthesized controller.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::EvalError;
use crate::model::SystemModel;
use crate::noise::NoiseError;
use crate::parallel;
use crate::synthesis::{SpecKind, SynthesisResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("initial state has {got} coordinates, expected {want}")]
    InitialDimension { got: usize, want: usize },
    #[error("initial state {0:?} is outside the quantized state region")]
    InitialOutside(Vec<f64>),
    #[error("synthesis result does not match the model grids")]
    Mismatch,
    #[error("no runs requested")]
    NoRuns,
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("dynamics failed during simulation: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// Uniform over the disturbance grid.
    Random,
    /// The minimizing disturbance stored by synthesis.
    WorstCase,
}

impl DisturbanceMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(DisturbanceMode::Random),
            "worst" | "worst-case" => Some(DisturbanceMode::WorstCase),
            _ => None,
        }
    }
}

/// One simulated run. `states` holds `steps + 1` points, `inputs` and
/// `disturbances` hold `steps` points, all flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub disturbances: Vec<f64>,
    pub steps: usize,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub state_dim: usize,
    pub input_dim: usize,
    pub disturbance_dim: usize,
    pub runs: Vec<Run>,
}

impl Run {
    pub fn state(&self, k: usize, n: usize) -> &[f64] {
        &self.states[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub x0: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub disturbance: DisturbanceMode,
    pub threads: usize,
}

/// Simulates `opts.runs` closed-loop runs. Run `i` draws from the ChaCha
/// stream `i` of `opts.seed`, so batches are reproducible and independent of
/// the thread count.
///
/// Safety runs fail as soon as the state leaves the quantized region. Reach
/// runs succeed when the state's representative enters the target and fail
/// when it enters the avoid set; both stop the run. A reach run that leaves
/// the region keeps going, using the policy of the nearest boundary cell.
pub fn simulate(model: &SystemModel, res: &SynthesisResult, opts: &SimOptions) -> Result<TrajectoryBatch, SimError> {
    if res.state != model.state || res.input != model.input || res.disturbance != model.disturbance {
        return Err(SimError::Mismatch);
    }
    let n = model.state.dim();
    if opts.x0.len() != n {
        return Err(SimError::InitialDimension {
            got: opts.x0.len(),
            want: n,
        });
    }
    if !model.state.in_region(&opts.x0) {
        return Err(SimError::InitialOutside(opts.x0.clone()));
    }
    if opts.runs == 0 {
        return Err(SimError::NoRuns);
    }
    let runs = parallel::map_range(opts.threads, opts.runs, |i| simulate_one(model, res, opts, i));
    Ok(TrajectoryBatch {
        state_dim: n,
        input_dim: model.input.dim(),
        disturbance_dim: model.disturbance_dim(),
        runs: runs.into_iter().collect::<Result<_, _>>()?,
    })
}

enum Status {
    Running,
    Done(bool),
}

fn status(model: &SystemModel, res: &SynthesisResult, x: &[f64], rep: &mut [f64]) -> Status {
    let Ok(i) = model.state.point_to_index(x) else {
        return match res.spec.kind {
            SpecKind::Safety => Status::Done(false),
            _ => Status::Running,
        };
    };
    if res.spec.kind == SpecKind::Safety {
        return Status::Running;
    }
    model.state.write_point(i, rep).expect("index in range");
    if res.spec.in_avoid(rep) {
        Status::Done(false)
    } else if res.spec.in_target(rep) {
        Status::Done(true)
    } else {
        Status::Running
    }
}

fn simulate_one(model: &SystemModel, res: &SynthesisResult, opts: &SimOptions, run: usize) -> Result<Run, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(run as u64);
    let (n, m, p) = (model.state.dim(), model.input.dim(), model.disturbance_dim());
    let horizon = res.horizon();
    let mut out = Run {
        states: opts.x0.clone(),
        inputs: Vec::with_capacity(horizon * m),
        disturbances: Vec::with_capacity(horizon * p),
        steps: 0,
        satisfied: false,
    };
    let mut x = opts.x0.clone();
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; p];
    let mut next = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut rep = vec![0.0; n];

    for k in 1..=horizon {
        if let Status::Done(ok) = status(model, res, &x, &mut rep) {
            out.satisfied = ok;
            return Ok(out);
        }
        let i = model.state.clamped_index(&x);
        model.input.write_point(res.policy_index(k, i), &mut u).expect("policy in range");
        let w_index = match opts.disturbance {
            DisturbanceMode::Random => rng.random_range(0..model.n_disturbances()),
            DisturbanceMode::WorstCase => res.worst_index(k, i),
        };
        model.write_disturbance(w_index, &mut w);
        model.successor_mean(&x, &u, &w, &mut next)?;
        model.noise.sample(&mut rng, Some(&x), &mut noise)?;
        for (a, b) in next.iter_mut().zip(&noise) {
            *a += b;
        }
        std::mem::swap(&mut x, &mut next);
        out.states.extend_from_slice(&x);
        out.inputs.extend_from_slice(&u);
        out.disturbances.extend_from_slice(&w);
        out.steps = k;
    }
    out.satisfied = match status(model, res, &x, &mut rep) {
        Status::Done(ok) => ok,
        // safety held for the whole horizon; reach ran out of time
        Status::Running => res.spec.kind == SpecKind::Safety,
    };
    Ok(out)
}

/// Fraction of satisfied runs.
pub fn empirical_rate(batch: &TrajectoryBatch) -> Result<f64, SimError> {
    if batch.runs.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let ok = batch.runs.iter().filter(|r| r.satisfied).count();
    Ok(ok as f64 / batch.runs.len() as f64)
}

/// Writes one CSV row per (run, step): `run,k,x0..,u0..,w0..,satisfied`.
/// The final state of a run has empty input and disturbance columns.
pub fn write_csv<W: Write>(batch: &TrajectoryBatch, mut out: W) -> io::Result<()> {
    let (n, m, p) = (batch.state_dim, batch.input_dim, batch.disturbance_dim);
    let mut header = vec!["run".to_string(), "k".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..p).map(|i| format!("w{i}")));
    header.push("satisfied".into());
    writeln!(out, "{}", header.join(","))?;
    let mut row = String::new();
    for (r, run) in batch.runs.iter().enumerate() {
        for k in 0..=run.steps {
            row.clear();
            row.push_str(&format!("{r},{k}"));
            for v in run.state(k, n) {
                row.push_str(&format!(",{v:?}"));
            }
            let active = k < run.steps;
            for (vals, width) in [(&run.inputs, m), (&run.disturbances, p)] {
                for j in 0..width {
                    row.push(',');
                    if active {
                        row.push_str(&format!("{:?}", vals[k * width + j]));
                    }
                }
            }
            row.push_str(if run.satisfied { ",1" } else { ",0" });
            writeln!(out, "{row}")?;
        }
    }
    out.flush()
}
