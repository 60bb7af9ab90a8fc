//! End-to-end runs behind the command-line verbs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::abstraction::{build_matrix, build_target_hit, mask_absorbing, memory_estimate, MemoryEstimate, TransitionMatrix};
use crate::error::Error;
use crate::io::config::Config;
use crate::io::container::{read_results, write_matrix, write_results};
use crate::io::prism::export_prism;
use crate::model::SystemModel;
use crate::parallel::default_threads;
use crate::sim::{empirical_rate, simulate, write_csv, DisturbanceMode, SimOptions, TrajectoryBatch};
use crate::synthesis::{synthesize, StoredAbstraction, SynthesisMode, SynthesisResult, synthesize_with};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub mode: Option<SynthesisMode>,
    pub mem_budget: Option<u128>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub output: Option<String>,
    pub horizon: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub disturbance_mode: Option<DisturbanceMode>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        let e = &mut cfg.exec;
        if let Some(v) = self.threads {
            e.threads = v;
        }
        if let Some(v) = self.mode {
            e.mode = v;
        }
        if let Some(v) = self.mem_budget {
            e.mem_budget = Some(v);
        }
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.runs {
            e.runs = v;
        }
        if let Some(v) = &self.output {
            e.output = Some(v.clone());
        }
        if let Some(v) = &self.x0 {
            e.x0 = Some(v.clone());
        }
        if let Some(v) = self.disturbance_mode {
            e.disturbance_mode = v;
        }
        if let Some(v) = self.horizon {
            cfg.spec.time_steps = v;
        }
    }
}

/// Stable `key: value` lines describing a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    pub entries: Vec<(String, String)>,
}

impl Profile {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    fn time(&mut self, key: &str, since: Instant) {
        self.push(key, format!("{:.6}", since.elapsed().as_secs_f64()));
    }
}

fn describe(profile: &mut Profile, model: &SystemModel, est: &MemoryEstimate) {
    profile.push("state_dim", model.state.dim());
    profile.push("states", model.n_states());
    profile.push("inputs", model.n_inputs());
    profile.push("disturbances", model.n_disturbances());
    profile.push("state_input_pairs", model.n_states() as u128 * model.n_inputs() as u128);
    profile.push("rows", est.rows);
    profile.push("row_width", est.row_width);
    profile.push("matrix_bytes", est.payload_bytes);
    profile.push("total_bytes", est.total_bytes);
}

fn threads_used(cfg: &Config) -> usize {
    if cfg.exec.threads == 0 {
        default_threads()
    } else {
        cfg.exec.threads
    }
}

/// Sizes and memory of the abstraction, without building anything.
pub fn estimate(cfg: &Config) -> Result<Profile, Error> {
    let model = cfg.build_model()?;
    let est = memory_estimate(&model)?;
    let mut p = Profile::default();
    describe(&mut p, &model, &est);
    if let Some(b) = cfg.exec.mem_budget {
        p.push("mem_budget", b);
        p.push("fits_budget", est.total_bytes <= b);
    }
    Ok(p)
}

fn check_budget(cfg: &Config, est: &MemoryEstimate) -> Result<(), Error> {
    match cfg.exec.mem_budget {
        Some(budget) if est.total_bytes > budget => Err(Error::Memory {
            needed: est.total_bytes,
            budget,
        }),
        _ => Ok(()),
    }
}

/// Builds (and for reach objectives, masks) the transition matrix.
pub fn build_abstraction(cfg: &Config, profile: &mut Profile) -> Result<(SystemModel, TransitionMatrix), Error> {
    let model = cfg.build_model()?;
    let est = memory_estimate(&model)?;
    describe(profile, &model, &est);
    check_budget(cfg, &est)?;
    let t = Instant::now();
    let mut tm = build_matrix(&model, cfg.exec.threads)?;
    mask_absorbing(&mut tm, &model.state, &cfg.build_spec());
    profile.time("time_abstraction_s", t);
    profile.push("nonzeros", tm.nonzeros());
    Ok((model, tm))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// `abstract`: builds the matrix and optionally dumps it.
pub fn run_abstract(cfg: &Config, out: Option<&Path>) -> Result<Profile, Error> {
    let mut p = Profile::default();
    p.push("threads", threads_used(cfg));
    let (_, tm) = build_abstraction(cfg, &mut p)?;
    if let Some(path) = out {
        let t = Instant::now();
        write_matrix(&tm, create(path)?).map_err(|e| Error::format(path, e))?;
        p.time("time_write_s", t);
        p.push("output", path.display());
    }
    Ok(p)
}

/// `synthesize`: abstraction (or on-the-fly evaluation) plus dynamic
/// programming. Writes the result container when an output path is set.
pub fn run_synthesize(cfg: &Config) -> Result<(SynthesisResult, Profile), Error> {
    let start = Instant::now();
    let model = cfg.build_model()?;
    let spec = cfg.build_spec();
    let est = memory_estimate(&model)?;
    let mut p = Profile::default();
    p.push("threads", threads_used(cfg));
    describe(&mut p, &model, &est);
    let mode = match cfg.exec.mode {
        SynthesisMode::Auto if cfg.exec.mem_budget.is_some_and(|b| est.total_bytes > b) => SynthesisMode::OnTheFly,
        SynthesisMode::Auto => SynthesisMode::Matrix,
        m => m,
    };
    p.push("mode", mode);
    p.push("spec", spec.kind);
    p.push("time_steps", spec.horizon);
    let res = if mode == SynthesisMode::Matrix {
        check_budget(cfg, &est)?;
        let t = Instant::now();
        let mut tm = build_matrix(&model, cfg.exec.threads)?;
        let hit = if spec.is_reach() {
            mask_absorbing(&mut tm, &model.state, &spec);
            Some(build_target_hit(&model, &spec, cfg.exec.threads)?)
        } else {
            None
        };
        p.time("time_abstraction_s", t);
        let t = Instant::now();
        let source = StoredAbstraction {
            matrix: &tm,
            hit: hit.as_ref(),
        };
        let res = synthesize_with(&source, &model, &spec, cfg.exec.threads, mode)?;
        p.time("time_synthesis_s", t);
        res
    } else {
        let t = Instant::now();
        let opts = cfg.synthesis_options();
        let res = synthesize(&model, &spec, &crate::synthesis::SynthesisOptions { mode, ..opts })?;
        p.time("time_synthesis_s", t);
        res
    };
    if let Some(x0) = &cfg.exec.x0 {
        if let Ok(i) = model.state.point_to_index(x0) {
            if spec.horizon > 0 {
                p.push("value_x0", format!("{:?}", res.value(1, i)));
            }
        }
    }
    if let Some(out) = &cfg.exec.output {
        let path = PathBuf::from(out);
        write_results(&res, create(&path)?).map_err(|e| Error::format(&path, e))?;
        p.push("output", path.display());
    }
    p.time("time_total_s", start);
    Ok((res, p))
}

pub fn load_results(path: &Path) -> Result<SynthesisResult, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_results(BufReader::new(f)).map_err(|e| Error::format(path, e))
}

/// `simulate`: closed-loop runs from `exec.x0`, using a stored result when
/// given and synthesizing otherwise. Writes the trajectory CSV to `csv`.
pub fn run_simulate(cfg: &Config, result: Option<&Path>, csv: Option<&Path>) -> Result<(TrajectoryBatch, Profile), Error> {
    let model = cfg.build_model()?;
    let x0 = cfg
        .exec
        .x0
        .clone()
        .ok_or_else(|| Error::Usage("simulation needs an initial state (exec.x0 or --x0)".into()))?;
    let (res, mut p) = match result {
        Some(path) => {
            let res = load_results(path)?;
            if res.spec != cfg.build_spec() {
                return Err(Error::Mismatch(format!("{} was synthesized for a different specification", path.display())));
            }
            (res, Profile::default())
        }
        None => {
            let mut cfg = cfg.clone();
            cfg.exec.output = None;
            run_synthesize(&cfg)?
        }
    };
    let opts = SimOptions {
        x0,
        runs: cfg.exec.runs,
        seed: cfg.exec.seed,
        disturbance: cfg.exec.disturbance_mode,
        threads: cfg.exec.threads,
    };
    let t = Instant::now();
    let batch = simulate(&model, &res, &opts)?;
    p.time("time_simulation_s", t);
    p.push("runs", batch.runs.len());
    p.push("empirical_rate", empirical_rate(&batch)?);
    if let Some(path) = csv {
        write_csv(&batch, create(path)?).map_err(|e| Error::io(path, e))?;
        p.push("trajectories", path.display());
    }
    Ok((batch, p))
}

/// `export-prism`: builds the matrix and writes it as an explicit
/// transition file.
pub fn run_export_prism(cfg: &Config, out: &Path) -> Result<Profile, Error> {
    let mut p = Profile::default();
    p.push("threads", threads_used(cfg));
    let (_, tm) = build_abstraction(cfg, &mut p)?;
    let t = Instant::now();
    let mut w = create(out)?;
    export_prism(&tm, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(out, e))?;
    p.time("time_write_s", t);
    p.push("output", out.display());
    Ok(p)
}
