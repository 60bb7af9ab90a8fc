//! Finite-horizon max-min dynamic programming over the abstraction.
//!
//! Values are indexed by time step `k = 1..=horizon+1`, where `horizon+1`
//! holds the terminal values (1 for safety, 0 for reach objectives). A step
//! computes, for every state,
//! `V_k(x) = max_u min_w [ sum_x' T(x'|x,u,w) V_{k+1}(x') + hit(x,u,w) ]`,
//! with ties broken toward the lowest input and disturbance index. For reach
//! objectives states in the target or avoid set are absorbing and keep value
//! 0; reaching the target is credited through `hit`.

use std::fmt;

use thiserror::Error;

use crate::abstraction::{
    build_matrix, build_target_hit, mask_absorbing, memory_estimate, AbstractionError, RowKernel, RowScratch,
    TargetHitVector, TransitionMatrix,
};
use crate::grid::{GridError, HyperRect, UniformGrid};
use crate::model::SystemModel;
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("abstraction needs {needed} bytes, over the budget of {budget} bytes")]
    MemoryBudget { needed: u128, budget: u128 },
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("time step {k} outside 1..={max}")]
    TimeStep { k: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    Safety,
    Reachability,
    ReachAvoid,
}

impl SpecKind {
    pub fn name(self) -> &'static str {
        match self {
            SpecKind::Safety => "safety",
            SpecKind::Reachability => "reachability",
            SpecKind::ReachAvoid => "reach-avoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "safety" => Some(SpecKind::Safety),
            "reachability" | "reach" => Some(SpecKind::Reachability),
            "reach-avoid" | "reach_avoid" | "reachavoid" => Some(SpecKind::ReachAvoid),
            _ => None,
        }
    }
}

impl fmt::Display for SpecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spec {
    pub kind: SpecKind,
    pub horizon: usize,
    pub target: Option<HyperRect>,
    pub avoid: Option<HyperRect>,
}

impl Spec {
    pub fn safety(horizon: usize) -> Self {
        Spec {
            kind: SpecKind::Safety,
            horizon,
            target: None,
            avoid: None,
        }
    }

    pub fn reachability(horizon: usize, target: HyperRect) -> Self {
        Spec {
            kind: SpecKind::Reachability,
            horizon,
            target: Some(target),
            avoid: None,
        }
    }

    pub fn reach_avoid(horizon: usize, target: HyperRect, avoid: Option<HyperRect>) -> Self {
        Spec {
            kind: SpecKind::ReachAvoid,
            horizon,
            target: Some(target),
            avoid,
        }
    }

    pub fn is_reach(&self) -> bool {
        self.kind != SpecKind::Safety
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), SynthesisError> {
        if self.is_reach() && self.target.is_none() {
            return Err(SynthesisError::Spec(format!("{} needs a target set", self.kind)));
        }
        for (name, set) in [("target", &self.target), ("avoid", &self.avoid)] {
            if let Some(r) = set {
                if r.dim() != state_dim {
                    return Err(SynthesisError::Spec(format!(
                        "{name} set has dimension {}, state has {state_dim}",
                        r.dim()
                    )));
                }
                if r.lo.iter().zip(&r.hi).any(|(l, h)| !(l <= h)) {
                    return Err(SynthesisError::Spec(format!("{name} set has lower bound above upper bound")));
                }
            }
        }
        if self.kind == SpecKind::Safety && (self.target.is_some() || self.avoid.is_some()) {
            return Err(SynthesisError::Spec("safety takes no target or avoid set".into()));
        }
        Ok(())
    }

    pub fn terminal_value(&self) -> f64 {
        if self.is_reach() {
            0.0
        } else {
            1.0
        }
    }

    /// Union of the cells whose representatives lie in the target, as one
    /// box. `None` when no representative is inside.
    pub fn target_cells(&self, grid: &UniformGrid) -> Option<HyperRect> {
        snapped_cells(grid, &[self.target.as_ref()?])
    }

    /// Cells whose representatives lie in both the target and the avoid set.
    pub fn overlap_cells(&self, grid: &UniformGrid) -> Option<HyperRect> {
        snapped_cells(grid, &[self.target.as_ref()?, self.avoid.as_ref()?])
    }

    /// Whether a state (by its representative) is in the target.
    pub fn in_target(&self, point: &[f64]) -> bool {
        self.target.as_ref().is_some_and(|t| t.contains(point))
    }

    pub fn in_avoid(&self, point: &[f64]) -> bool {
        self.avoid.as_ref().is_some_and(|a| a.contains(point))
    }

    /// States whose representative lies in the target or avoid set. All
    /// false for safety.
    pub fn absorbing_mask(&self, grid: &UniformGrid) -> Vec<bool> {
        let mut mask = vec![false; grid.len()];
        if !self.is_reach() {
            return mask;
        }
        let mut p = vec![0.0; grid.dim()];
        for (i, m) in mask.iter_mut().enumerate() {
            grid.write_point(i, &mut p).expect("index in range");
            *m = self.in_target(&p) || self.in_avoid(&p);
        }
        mask
    }
}

/// Box covering the cells whose representatives lie in every one of `sets`.
fn snapped_cells(grid: &UniformGrid, sets: &[&HyperRect]) -> Option<HyperRect> {
    let mut lo = Vec::with_capacity(grid.dim());
    let mut hi = Vec::with_capacity(grid.dim());
    for d in 0..grid.dim() {
        let mut inside = (0..grid.counts()[d]).filter(|&j| {
            let c = grid.coord(d, j);
            sets.iter().all(|t| c >= t.lo[d] - 1e-9 && c <= t.hi[d] + 1e-9)
        });
        let first = inside.next()?;
        let last = inside.last().unwrap_or(first);
        lo.push(grid.cell_edges(d, first).0);
        hi.push(grid.cell_edges(d, last).1);
    }
    Some(HyperRect::new(lo, hi))
}

/// Where transition probabilities come from during synthesis.
pub trait TransitionSource: Sync {
    type Scratch: Send;

    fn scratch(&self) -> Self::Scratch;

    /// `sum_x' T(x'|x,u,w) next(x') + hit(x,u,w)`.
    fn backup(&self, s: &mut Self::Scratch, x: usize, u: usize, w: usize, next: &[f64]) -> Result<f64, AbstractionError>;
}

/// A precomputed (and masked) matrix with its target-hit vector.
#[derive(Debug, Clone, Copy)]
pub struct StoredAbstraction<'a> {
    pub matrix: &'a TransitionMatrix,
    pub hit: Option<&'a TargetHitVector>,
}

impl TransitionSource for StoredAbstraction<'_> {
    type Scratch = ();

    fn scratch(&self) {}

    #[inline]
    fn backup(&self, _: &mut (), x: usize, u: usize, w: usize, next: &[f64]) -> Result<f64, AbstractionError> {
        let r = self.matrix.row_index(x, u, w);
        let mut v = self.matrix.dot(r, next);
        if let Some(h) = self.hit {
            v += h.values[r];
        }
        Ok(v)
    }
}

/// Rows recomputed on demand; nothing is stored.
impl TransitionSource for RowKernel<'_> {
    type Scratch = RowScratch;

    fn scratch(&self) -> RowScratch {
        RowKernel::scratch(self)
    }

    #[inline]
    fn backup(&self, s: &mut RowScratch, x: usize, u: usize, w: usize, next: &[f64]) -> Result<f64, AbstractionError> {
        let origin = self.prepare(s, x, u, w)?;
        let mut v = self.dot(s, origin, next);
        if self.absorbing().is_some() {
            v += self.target_mass(s)?;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    /// Build and store the transition matrix, then iterate.
    Matrix,
    /// Recompute transition rows inside every step.
    OnTheFly,
    /// Matrix when it fits the memory budget, on-the-fly otherwise.
    Auto,
}

impl SynthesisMode {
    pub fn name(self) -> &'static str {
        match self {
            SynthesisMode::Matrix => "matrix",
            SynthesisMode::OnTheFly => "ofa",
            SynthesisMode::Auto => "auto",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matrix" => Some(SynthesisMode::Matrix),
            "ofa" | "on-the-fly" => Some(SynthesisMode::OnTheFly),
            "auto" => Some(SynthesisMode::Auto),
            _ => None,
        }
    }
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub mode: SynthesisMode,
    /// `0` picks the number of available cores.
    pub threads: usize,
    /// Byte limit for the stored abstraction, `None` for no limit.
    pub mem_budget: Option<u128>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            mode: SynthesisMode::Auto,
            threads: 0,
            mem_budget: None,
        }
    }
}

/// Values, policy and worst-case disturbances for every time step, plus the
/// grids and specification needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub state: UniformGrid,
    pub input: UniformGrid,
    pub disturbance: Option<UniformGrid>,
    pub spec: Spec,
    pub gamma: f64,
    /// Mode actually used (never `Auto`).
    pub mode: SynthesisMode,
    /// `(horizon + 1) * n_states` values, step-major.
    pub values: Vec<f64>,
    /// `horizon * n_states` input indices, step-major.
    pub policy: Vec<u32>,
    /// `horizon * n_states` minimizing disturbance indices under the policy.
    pub worst: Vec<u32>,
}

impl SynthesisResult {
    pub fn n_states(&self) -> usize {
        self.state.len()
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Values at step `k` in `1..=horizon+1`.
    pub fn values_at(&self, k: usize) -> &[f64] {
        let n = self.n_states();
        &self.values[(k - 1) * n..k * n]
    }

    pub fn value(&self, k: usize, x: usize) -> f64 {
        self.values[(k - 1) * self.n_states() + x]
    }

    /// Input index chosen at step `k` in `1..=horizon`.
    pub fn policy_index(&self, k: usize, x: usize) -> usize {
        self.policy[(k - 1) * self.n_states() + x] as usize
    }

    pub fn worst_index(&self, k: usize, x: usize) -> usize {
        self.worst[(k - 1) * self.n_states() + x] as usize
    }

    /// Input to apply at step `k` from continuous state `x`, which is first
    /// quantized to the state grid.
    pub fn query_policy(&self, x: &[f64], k: usize) -> Result<Vec<f64>, SynthesisError> {
        if k == 0 || k > self.horizon() {
            return Err(SynthesisError::TimeStep { k, max: self.horizon() });
        }
        let i = self.state.point_to_index(x)?;
        Ok(self.input.index_to_point(self.policy_index(k, i))?)
    }
}

/// Output of one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub values: Vec<f64>,
    pub policy: Vec<u32>,
    pub worst: Vec<u32>,
}

/// One backward step: `max_u min_w backup(x, u, w)` per state, clamped to
/// `[0, 1]`. Absorbing states get value 0 and input 0. Ties go to the lowest
/// index, so the result does not depend on `threads`.
pub fn bellman_step<S: TransitionSource>(
    source: &S,
    next: &[f64],
    absorbing: &[bool],
    n_inputs: usize,
    n_disturbances: usize,
    threads: usize,
) -> Result<StepResult, AbstractionError> {
    const CHUNK: usize = 64;
    let mut step = vec![(0.0, 0u32, 0u32); absorbing.len()];
    parallel::for_each_chunk(threads, &mut step, CHUNK, || source.scratch(), |s, chunk, out| {
        for (j, slot) in out.iter_mut().enumerate() {
            let x = chunk * CHUNK + j;
            if absorbing[x] {
                continue;
            }
            let mut best = (f64::NEG_INFINITY, 0u32, 0u32);
            for u in 0..n_inputs {
                let mut low = (f64::INFINITY, 0u32);
                for w in 0..n_disturbances {
                    let v = source.backup(s, x, u, w, next)?;
                    if v < low.0 {
                        low = (v, w as u32);
                    }
                }
                if low.0 > best.0 {
                    best = (low.0, u as u32, low.1);
                }
            }
            *slot = (best.0.clamp(0.0, 1.0), best.1, best.2);
        }
        Ok::<(), AbstractionError>(())
    })?;
    Ok(StepResult {
        values: step.iter().map(|s| s.0).collect(),
        policy: step.iter().map(|s| s.1).collect(),
        worst: step.iter().map(|s| s.2).collect(),
    })
}

/// Runs the backward recursion against any transition source.
pub fn synthesize_with<S: TransitionSource>(
    source: &S,
    model: &SystemModel,
    spec: &Spec,
    threads: usize,
    mode: SynthesisMode,
) -> Result<SynthesisResult, SynthesisError> {
    spec.validate(model.state.dim())?;
    let (n_x, n_u, n_w) = (model.n_states(), model.n_inputs(), model.n_disturbances());
    let horizon = spec.horizon;
    let absorbing = spec.absorbing_mask(&model.state);
    let mut values = vec![0.0; (horizon + 1) * n_x];
    let mut policy = vec![0u32; horizon * n_x];
    let mut worst = vec![0u32; horizon * n_x];
    let terminal = spec.terminal_value();
    for (v, a) in values[horizon * n_x..].iter_mut().zip(&absorbing) {
        *v = if *a { 0.0 } else { terminal };
    }

    for k in (1..=horizon).rev() {
        let (head, tail) = values.split_at_mut(k * n_x);
        let step = bellman_step(source, &tail[..n_x], &absorbing, n_u, n_w, threads)?;
        head[(k - 1) * n_x..].copy_from_slice(&step.values);
        policy[(k - 1) * n_x..k * n_x].copy_from_slice(&step.policy);
        worst[(k - 1) * n_x..k * n_x].copy_from_slice(&step.worst);
    }

    Ok(SynthesisResult {
        state: model.state.clone(),
        input: model.input.clone(),
        disturbance: model.disturbance.clone(),
        spec: spec.clone(),
        gamma: model.noise.gamma,
        mode,
        values,
        policy,
        worst,
    })
}

/// Builds the abstraction (or not, in on-the-fly mode) and synthesizes a
/// controller.
pub fn synthesize(model: &SystemModel, spec: &Spec, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
    spec.validate(model.state.dim())?;
    let mode = match opts.mode {
        SynthesisMode::Auto => {
            let fits = match opts.mem_budget {
                None => true,
                Some(b) => memory_estimate(model).is_ok_and(|e| e.total_bytes <= b),
            };
            if fits {
                SynthesisMode::Matrix
            } else {
                SynthesisMode::OnTheFly
            }
        }
        m => m,
    };
    match mode {
        SynthesisMode::Matrix => {
            let est = memory_estimate(model)?;
            if let Some(budget) = opts.mem_budget {
                if est.total_bytes > budget {
                    return Err(SynthesisError::MemoryBudget {
                        needed: est.total_bytes,
                        budget,
                    });
                }
            }
            let mut matrix = build_matrix(model, opts.threads)?;
            let hit = if spec.is_reach() {
                mask_absorbing(&mut matrix, &model.state, spec);
                Some(build_target_hit(model, spec, opts.threads)?)
            } else {
                None
            };
            let source = StoredAbstraction {
                matrix: &matrix,
                hit: hit.as_ref(),
            };
            synthesize_with(&source, model, spec, opts.threads, mode)
        }
        _ => {
            let kernel = RowKernel::with_spec(model, spec);
            synthesize_with(&kernel, model, spec, opts.threads, SynthesisMode::OnTheFly)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::expr::{Dims, Expr};
    use crate::noise::NoiseSpec;

    fn drift_model(sigma: f64) -> SystemModel {
        let dims = Dims::new(1, 1, 0);
        SystemModel::new(
            UniformGrid::new(vec![0.0], vec![4.0], vec![1.0]).unwrap(),
            UniformGrid::new(vec![-1.0], vec![1.0], vec![1.0]).unwrap(),
            None,
            vec![Expr::parse("x0 + u0", dims, &BTreeMap::new()).unwrap()],
            NoiseSpec::normal(vec![sigma], 1e-4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn snapped_target_and_mask() {
        let g = UniformGrid::new(vec![0.0], vec![4.0], vec![1.0]).unwrap();
        let spec = Spec::reach_avoid(2, HyperRect::new(vec![2.5], vec![4.0]), Some(HyperRect::new(vec![0.0], vec![0.0])));
        assert_eq!(spec.target_cells(&g), Some(HyperRect::new(vec![2.5], vec![4.5])));
        assert_eq!(spec.absorbing_mask(&g), vec![true, false, false, true, true]);
        assert_eq!(Spec::safety(1).absorbing_mask(&g), vec![false; 5]);
    }

    #[test]
    fn spec_validation() {
        let bad = Spec {
            kind: SpecKind::Reachability,
            horizon: 1,
            target: None,
            avoid: None,
        };
        assert!(bad.validate(1).is_err());
        let wrong_dim = Spec::reachability(1, HyperRect::new(vec![0.0, 0.0], vec![1.0, 1.0]));
        assert!(wrong_dim.validate(1).is_err());
        let flipped = Spec::reachability(1, HyperRect::new(vec![1.0], vec![0.0]));
        assert!(flipped.validate(1).is_err());
        assert_eq!(SpecKind::parse("reach-avoid"), Some(SpecKind::ReachAvoid));
        assert_eq!(SynthesisMode::parse("ofa"), Some(SynthesisMode::OnTheFly));
    }

    #[test]
    fn reach_policy_steers_toward_target() {
        let model = drift_model(0.1);
        let spec = Spec::reachability(3, HyperRect::new(vec![4.0], vec![4.0]));
        let res = synthesize(&model, &spec, &SynthesisOptions { threads: 1, ..Default::default() }).unwrap();
        assert_eq!(res.mode, SynthesisMode::Matrix);
        // from 3 the target is one step away with the input +1
        assert_eq!(res.policy_index(3, 3), 2);
        assert!(res.value(3, 3) > 0.99);
        // from 0 the target needs four steps, more than three available
        assert!(res.value(1, 0) < 0.01);
        assert!(res.value(1, 1) > 0.99);
        assert_eq!(res.value(1, 4), 0.0);
        assert_eq!(res.query_policy(&[2.9], 3).unwrap(), vec![1.0]);
        assert!(res.query_policy(&[2.9], 4).is_err());
        assert!(res.query_policy(&[9.0], 1).is_err());
    }

    #[test]
    fn modes_agree_bitwise() {
        let model = drift_model(0.3);
        for spec in [
            Spec::safety(4),
            Spec::reach_avoid(4, HyperRect::new(vec![3.0], vec![4.0]), Some(HyperRect::new(vec![0.0], vec![0.4]))),
        ] {
            let run = |mode, threads| {
                synthesize(&model, &spec, &SynthesisOptions { mode, threads, mem_budget: None }).unwrap()
            };
            let a = run(SynthesisMode::Matrix, 1);
            let b = run(SynthesisMode::OnTheFly, 3);
            assert_eq!(a.values, b.values);
            assert_eq!(a.policy, b.policy);
            assert_eq!(a.worst, b.worst);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let model = drift_model(0.3);
        let opts = SynthesisOptions {
            mode: SynthesisMode::Matrix,
            threads: 1,
            mem_budget: Some(10),
        };
        assert!(matches!(
            synthesize(&model, &Spec::safety(1), &opts),
            Err(SynthesisError::MemoryBudget { budget: 10, .. })
        ));
        let auto = SynthesisOptions {
            mode: SynthesisMode::Auto,
            ..opts
        };
        assert_eq!(synthesize(&model, &Spec::safety(1), &auto).unwrap().mode, SynthesisMode::OnTheFly);
    }
}
