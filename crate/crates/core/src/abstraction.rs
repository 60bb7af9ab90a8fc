//! Finite MDP abstraction: the transition matrix over `(x, u, w)` rows and
//! the one-step target-hit probabilities.
//!
//! Rows have a uniform width `R` fixed before allocation: the cutting window
//! of the noise law, `prod_i min(2 h_i + 1, n_i)` grid points with `h_i` the
//! window half width in cells. Each row stores the flat index of its window
//! origin; windows are centered on the nearest representative of the
//! successor mean and shifted to stay inside the state grid. Mass that falls
//! outside the window (or outside the grid) is dropped, never renormalized.

use thiserror::Error;

use crate::expr::EvalError;
use crate::grid::{window_width, HyperRect, UniformGrid};
use crate::model::SystemModel;
use crate::noise::NoiseError;
use crate::parallel;
use crate::synthesis::Spec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbstractionError {
    #[error("dynamics failed at state {x}, input {u}, disturbance {w}: {source}")]
    Domain {
        x: usize,
        u: usize,
        w: usize,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("matrix size overflows addressable memory")]
    Overflow,
    #[error("state grid has {0} points; window origins are limited to 32 bits")]
    TooManyStates(usize),
}

/// Shape of the per-row window shared by every row of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLayout {
    /// Half width per dimension, `None` when rows span the whole grid.
    pub half: Option<Vec<usize>>,
    pub shape: Vec<usize>,
    /// Flat state-index offset of every column relative to the row origin.
    pub offsets: Vec<usize>,
}

impl WindowLayout {
    pub fn for_model(model: &SystemModel) -> Self {
        let grid = &model.state;
        let half = model.noise.window_half_widths(grid.eta());
        let shape: Vec<usize> = match &half {
            Some(h) => h.iter().zip(grid.counts()).map(|(h, n)| window_width(*h, *n)).collect(),
            None => grid.counts().to_vec(),
        };
        let offsets = grid.window_offsets(&shape);
        WindowLayout { half, shape, offsets }
    }

    pub fn row_width(&self) -> usize {
        self.offsets.len()
    }

    /// Row width computed from the shape alone, without materializing offsets.
    pub fn width_for(model: &SystemModel) -> Option<usize> {
        let grid = &model.state;
        match model.noise.window_half_widths(grid.eta()) {
            Some(h) => h
                .iter()
                .zip(grid.counts())
                .try_fold(1usize, |acc, (h, n)| acc.checked_mul(window_width(*h, *n))),
            None => Some(grid.len()),
        }
    }
}

/// Per-thread working memory for row evaluation.
#[derive(Debug, Clone)]
pub struct RowScratch {
    x: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    pub mean: Vec<f64>,
    start: Vec<usize>,
    probs: Vec<Vec<f64>>,
    cached: (usize, usize),
    interior: bool,
}

impl RowScratch {
    /// Whether the last prepared window lies inside the grid without being
    /// shifted.
    pub fn window_interior(&self) -> bool {
        self.interior
    }
}

/// Evaluates abstraction rows for one model. Shared by the stored matrix
/// builder and the on-the-fly synthesis path so both produce identical
/// numbers.
#[derive(Debug, Clone)]
pub struct RowKernel<'a> {
    pub model: &'a SystemModel,
    pub layout: WindowLayout,
    /// Snapped target box for reach objectives.
    target: Option<HyperRect>,
    /// Snapped cells in both the target and the avoid set; they count as
    /// avoid.
    overlap: Option<HyperRect>,
    /// Post-states whose entries are zeroed (target or avoid cells).
    absorbing: Option<Vec<bool>>,
}

impl<'a> RowKernel<'a> {
    pub fn new(model: &'a SystemModel) -> Self {
        RowKernel {
            model,
            layout: WindowLayout::for_model(model),
            target: None,
            overlap: None,
            absorbing: None,
        }
    }

    /// Kernel for a reach objective: masks absorbing post-states and
    /// evaluates target-hit masses.
    pub fn with_spec(model: &'a SystemModel, spec: &Spec) -> Self {
        let mut k = RowKernel::new(model);
        if spec.is_reach() {
            k.target = spec.target_cells(&model.state);
            k.overlap = spec.overlap_cells(&model.state);
            k.absorbing = Some(spec.absorbing_mask(&model.state));
        }
        k
    }

    pub fn absorbing(&self) -> Option<&[bool]> {
        self.absorbing.as_deref()
    }

    pub fn scratch(&self) -> RowScratch {
        let m = self.model;
        RowScratch {
            x: vec![0.0; m.state.dim()],
            u: vec![0.0; m.input.dim()],
            w: vec![0.0; m.disturbance_dim()],
            mean: vec![0.0; m.state.dim()],
            start: vec![0; m.state.dim()],
            probs: self.layout.shape.iter().map(|&n| vec![0.0; n]).collect(),
            cached: (usize::MAX, usize::MAX),
            interior: false,
        }
    }

    /// Computes the successor mean and the per-dimension cell masses of row
    /// `(x, u, w)`. Returns the flat index of the window origin.
    pub fn prepare(&self, s: &mut RowScratch, x: usize, u: usize, w: usize) -> Result<usize, AbstractionError> {
        let m = self.model;
        let grid = &m.state;
        if s.cached.0 != x {
            grid.write_point(x, &mut s.x).expect("state index in range");
        }
        if s.cached.1 != u {
            m.input.write_point(u, &mut s.u).expect("input index in range");
        }
        s.cached = (x, u);
        m.write_disturbance(w, &mut s.w);
        m.successor_mean(&s.x, &s.u, &s.w, &mut s.mean)
            .map_err(|source| AbstractionError::Domain { x, u, w, source })?;

        match &self.layout.half {
            Some(half) => {
                grid.fixed_window(&s.mean, half, &mut s.start);
                s.interior = (0..grid.dim()).all(|d| {
                    let c = grid.nearest_raw(d, s.mean[d]);
                    let h = half[d] as i64;
                    c - h >= 0 && c + h < grid.counts()[d] as i64
                });
            }
            None => {
                s.start.iter_mut().for_each(|v| *v = 0);
                s.interior = true;
            }
        }
        let mut origin = 0;
        for d in 0..grid.dim() {
            let scale = m.noise.scale(d, Some(&s.x))?;
            let start = s.start[d];
            origin += start * grid.strides()[d];
            for (j, p) in s.probs[d].iter_mut().enumerate() {
                let (lo, hi) = grid.cell_edges(d, start + j);
                *p = m.noise.interval_mass(d, s.mean[d], lo, hi, scale)?;
            }
        }
        Ok(origin)
    }

    /// Writes the prepared row (products of per-dimension masses, row-major
    /// over the window) into `out`, zeroing masked post-states.
    pub fn fill(&self, s: &RowScratch, origin: usize, out: &mut [f64]) {
        let mut c = 0;
        walk(&s.probs, 0, 1.0, &mut |p| {
            out[c] = p;
            c += 1;
        });
        if let Some(mask) = &self.absorbing {
            for (v, off) in out.iter_mut().zip(&self.layout.offsets) {
                if mask[origin + off] {
                    *v = 0.0;
                }
            }
        }
    }

    /// `sum_c T(c) * values[post(c)]` over the prepared row, in column order.
    pub fn dot(&self, s: &RowScratch, origin: usize, values: &[f64]) -> f64 {
        let offsets = &self.layout.offsets;
        let mut c = 0;
        let mut acc = 0.0;
        match &self.absorbing {
            Some(mask) => walk(&s.probs, 0, 1.0, &mut |p| {
                let post = origin + offsets[c];
                if !mask[post] {
                    acc += p * values[post];
                }
                c += 1;
            }),
            None => walk(&s.probs, 0, 1.0, &mut |p| {
                acc += p * values[origin + offsets[c]];
                c += 1;
            }),
        }
        acc
    }

    /// Sum of the prepared (masked) row.
    pub fn row_sum(&self, s: &RowScratch, origin: usize) -> f64 {
        let mut c = 0;
        let mut acc = 0.0;
        let offsets = &self.layout.offsets;
        walk(&s.probs, 0, 1.0, &mut |p| {
            let post = origin + offsets[c];
            if !self.absorbing.as_ref().is_some_and(|m| m[post]) {
                acc += p;
            }
            c += 1;
        });
        acc
    }

    /// Mass of the successor distribution of the prepared row inside the
    /// target cells.
    pub fn target_mass(&self, s: &RowScratch) -> Result<f64, AbstractionError> {
        let Some(t) = &self.target else {
            return Ok(0.0);
        };
        let p = self.box_mass(s, t)?;
        match &self.overlap {
            Some(o) => Ok((p - self.box_mass(s, o)?).max(0.0)),
            None => Ok(p),
        }
    }

    fn box_mass(&self, s: &RowScratch, b: &HyperRect) -> Result<f64, AbstractionError> {
        let m = self.model;
        let mut p = 1.0;
        for d in 0..m.state.dim() {
            let scale = m.noise.scale(d, Some(&s.x))?;
            p *= m.noise.interval_mass(d, s.mean[d], b.lo[d], b.hi[d], scale)?;
        }
        Ok(p)
    }
}

/// Visits the products of one entry per dimension in row-major order. The
/// product is accumulated left to right, so entry values are bit-identical
/// to `prod_d probs[d][j_d]` evaluated in dimension order.
#[inline]
fn walk<F: FnMut(f64)>(probs: &[Vec<f64>], d: usize, prefix: f64, f: &mut F) {
    let last = d + 1 == probs.len();
    for &p in &probs[d] {
        let v = if d == 0 { p } else { prefix * p };
        if last {
            f(v);
        } else {
            walk(probs, d + 1, v, f);
        }
    }
}

/// Transition probabilities with fixed-width rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub n_states: usize,
    pub n_inputs: usize,
    pub n_disturbances: usize,
    pub layout: WindowLayout,
    /// Flat index of the window origin of each row.
    pub origins: Vec<u32>,
    /// Row-major payload, `rows * row_width` entries.
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn rows(&self) -> usize {
        self.origins.len()
    }

    pub fn row_width(&self) -> usize {
        self.layout.row_width()
    }

    #[inline]
    pub fn row_index(&self, x: usize, u: usize, w: usize) -> usize {
        (x * self.n_inputs + u) * self.n_disturbances + w
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let width = self.row_width();
        &self.data[r * width..(r + 1) * width]
    }

    pub fn origin(&self, r: usize) -> usize {
        self.origins[r] as usize
    }

    /// Post-state flat index of column `c` in row `r`.
    #[inline]
    pub fn post_state(&self, r: usize, c: usize) -> usize {
        self.origin(r) + self.layout.offsets[c]
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).iter().sum()
    }

    /// `sum_c T(c) * values[post(c)]` for row `r`.
    #[inline]
    pub fn dot(&self, r: usize, values: &[f64]) -> f64 {
        let origin = self.origin(r);
        let mut acc = 0.0;
        for (p, off) in self.row(r).iter().zip(&self.layout.offsets) {
            acc += p * values[origin + off];
        }
        acc
    }

    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|p| **p > 0.0).count()
    }

    /// Dense copy of row `r` over all states.
    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (c, p) in self.row(r).iter().enumerate() {
            out[self.post_state(r, c)] = *p;
        }
        out
    }
}

/// One-step probability of landing in the target, per `(x, u, w)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetHitVector {
    pub values: Vec<f64>,
}

fn check_states(model: &SystemModel) -> Result<(), AbstractionError> {
    if model.n_states() > u32::MAX as usize {
        return Err(AbstractionError::TooManyStates(model.n_states()));
    }
    Ok(())
}

/// Builds the transition matrix, parallel over `(x, u)` pairs; the
/// disturbance loop runs inside each task.
pub fn build_matrix(model: &SystemModel, threads: usize) -> Result<TransitionMatrix, AbstractionError> {
    check_states(model)?;
    let kernel = RowKernel::new(model);
    let (n_x, n_u, n_w) = (model.n_states(), model.n_inputs(), model.n_disturbances());
    let width = kernel.layout.row_width();
    let rows = n_x
        .checked_mul(n_u)
        .and_then(|v| v.checked_mul(n_w))
        .ok_or(AbstractionError::Overflow)?;
    let len = rows.checked_mul(width).ok_or(AbstractionError::Overflow)?;
    let mut data = vec![0.0f64; len];
    let mut origins = vec![0u32; rows];
    parallel::for_each_chunk2(
        threads,
        &mut data,
        n_w * width,
        &mut origins,
        n_w,
        || kernel.scratch(),
        |s, pair, block, orig| {
            let (x, u) = (pair / n_u, pair % n_u);
            for w in 0..n_w {
                let origin = kernel.prepare(s, x, u, w)?;
                kernel.fill(s, origin, &mut block[w * width..(w + 1) * width]);
                orig[w] = origin as u32;
            }
            Ok::<(), AbstractionError>(())
        },
    )?;
    Ok(TransitionMatrix {
        n_states: n_x,
        n_inputs: n_u,
        n_disturbances: n_w,
        layout: kernel.layout.clone(),
        origins,
        data,
    })
}

/// Target-hit masses; zero for source states inside the target or avoid set.
pub fn build_target_hit(model: &SystemModel, spec: &Spec, threads: usize) -> Result<TargetHitVector, AbstractionError> {
    let kernel = RowKernel::with_spec(model, spec);
    let (n_x, n_u, n_w) = (model.n_states(), model.n_inputs(), model.n_disturbances());
    let mut values = vec![0.0; n_x * n_u * n_w];
    if kernel.target.is_none() {
        return Ok(TargetHitVector { values });
    }
    let absorbing = spec.absorbing_mask(&model.state);
    parallel::for_each_chunk(threads, &mut values, n_w, || kernel.scratch(), |s, pair, out| {
        let (x, u) = (pair / n_u, pair % n_u);
        if absorbing[x] {
            return Ok::<(), AbstractionError>(());
        }
        for (w, slot) in out.iter_mut().enumerate() {
            kernel.prepare(s, x, u, w)?;
            *slot = kernel.target_mass(s)?;
        }
        Ok(())
    })?;
    Ok(TargetHitVector { values })
}

/// Zeros every stored probability whose post-state lies in the target or
/// avoid set.
pub fn mask_absorbing(tm: &mut TransitionMatrix, state: &UniformGrid, spec: &Spec) {
    if !spec.is_reach() {
        return;
    }
    let mask = spec.absorbing_mask(state);
    let width = tm.row_width();
    for r in 0..tm.rows() {
        let origin = tm.origins[r] as usize;
        let row = &mut tm.data[r * width..(r + 1) * width];
        for (p, off) in row.iter_mut().zip(&tm.layout.offsets) {
            if mask[origin + off] {
                *p = 0.0;
            }
        }
    }
}

/// Row statistics computed without storing the matrix: sum and whether the
/// cutting window sits inside the grid unshifted.
pub fn row_sums(model: &SystemModel, threads: usize) -> Result<Vec<(f64, bool)>, AbstractionError> {
    let kernel = RowKernel::new(model);
    let (n_x, n_u, n_w) = (model.n_states(), model.n_inputs(), model.n_disturbances());
    let mut out = vec![(0.0, false); n_x * n_u * n_w];
    parallel::for_each_chunk(threads, &mut out, n_w, || kernel.scratch(), |s, pair, block| {
        let (x, u) = (pair / n_u, pair % n_u);
        for (w, slot) in block.iter_mut().enumerate() {
            let origin = kernel.prepare(s, x, u, w)?;
            *slot = (kernel.row_sum(s, origin), s.window_interior());
        }
        Ok::<(), AbstractionError>(())
    })?;
    Ok(out)
}

/// Memory needed to store a model's abstraction, computed from grid sizes
/// only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub rows: u128,
    pub row_width: u128,
    /// `rows * row_width * 8`
    pub payload_bytes: u128,
    /// Payload plus per-row origins and the target-hit vector.
    pub total_bytes: u128,
}

pub fn memory_estimate(model: &SystemModel) -> Result<MemoryEstimate, AbstractionError> {
    let rows = (model.n_states() as u128)
        .checked_mul(model.n_inputs() as u128)
        .and_then(|v| v.checked_mul(model.n_disturbances() as u128))
        .ok_or(AbstractionError::Overflow)?;
    let width = WindowLayout::width_for(model).ok_or(AbstractionError::Overflow)? as u128;
    let payload = rows
        .checked_mul(width)
        .and_then(|v| v.checked_mul(8))
        .ok_or(AbstractionError::Overflow)?;
    // origins (u32) + target-hit vector (f64)
    let overhead = rows.checked_mul(12).ok_or(AbstractionError::Overflow)?;
    Ok(MemoryEstimate {
        rows,
        row_width: width,
        payload_bytes: payload,
        total_bytes: payload.checked_add(overhead).ok_or(AbstractionError::Overflow)?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::expr::{Dims, Expr};
    use crate::noise::{Family, NoiseMode, NoiseSpec};
    use crate::synthesis::{Spec, SpecKind};

    fn line_model(sigma: f64, gamma: f64) -> SystemModel {
        let dims = Dims::new(1, 1, 0);
        SystemModel::new(
            UniformGrid::new(vec![0.0], vec![1.0], vec![0.5]).unwrap(),
            UniformGrid::new(vec![0.0], vec![0.0], vec![1.0]).unwrap(),
            None,
            vec![Expr::parse("x0 + u0", dims, &BTreeMap::new()).unwrap()],
            NoiseSpec::normal(vec![sigma], gamma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn tiny_noise_is_identity() {
        let tm = build_matrix(&line_model(1e-3, 1e-6), 1).unwrap();
        assert_eq!(tm.rows(), 3);
        for r in 0..3 {
            let dense = tm.dense_row(r);
            assert!((dense[r] - 1.0).abs() < 1e-12);
            assert!((tm.row_sum(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_cutting_stores_one_cell() {
        let model = line_model(1.0, 0.5);
        let tm = build_matrix(&model, 1).unwrap();
        assert_eq!(tm.row_width(), 1);
        for r in 0..3 {
            assert_eq!(tm.post_state(r, 0), r);
        }
        let est = memory_estimate(&model).unwrap();
        assert_eq!(est.row_width, 1);
        assert_eq!(est.payload_bytes, 3 * 8);
    }

    #[test]
    fn multiplicative_rows_are_full() {
        let mut model = line_model(1.0, 0.1);
        model.noise = NoiseSpec::new(Family::Normal { sigma: vec![1.0] }, NoiseMode::Multiplicative, 0.1).unwrap();
        let tm = build_matrix(&model, 1).unwrap();
        assert_eq!(tm.row_width(), 3);
        assert_eq!(memory_estimate(&model).unwrap().row_width, 3);
        // x = 0 has no noise: point mass on its own cell
        assert_eq!(tm.dense_row(0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn target_hit_uses_snapped_target_cells() {
        let model = line_model(1.0, 1e-3);
        let spec = Spec::reach_avoid(3, HyperRect::new(vec![0.9], vec![1.0]), None);
        let hit = build_target_hit(&model, &spec, 1).unwrap();
        // target cell of x = 1.0 is [0.75, 1.25); source 0.5 maps to mean 0.5
        let z = |v: f64| libm::erf(v / std::f64::consts::SQRT_2);
        let want = 0.5 * (z(0.75) - z(0.25));
        assert!((hit.values[1] - want).abs() < 1e-12);
        assert_eq!(hit.values[2], 0.0, "source inside the target is absorbing");
        let empty = Spec::reach_avoid(3, HyperRect::new(vec![0.6], vec![0.7]), None);
        assert!(build_target_hit(&model, &empty, 1).unwrap().values.iter().all(|v| *v == 0.0));
        let safety = Spec::safety(3);
        assert!(build_target_hit(&model, &safety, 1).unwrap().values.iter().all(|v| *v == 0.0));
        assert_eq!(safety.kind, SpecKind::Safety);
    }

    #[test]
    fn masking() {
        let model = line_model(1.0, 1e-3);
        let mut tm = build_matrix(&model, 1).unwrap();
        let before = tm.clone();
        mask_absorbing(&mut tm, &model.state, &Spec::safety(2));
        assert_eq!(tm, before);
        let whole = Spec::reach_avoid(2, HyperRect::new(vec![0.0], vec![1.0]), None);
        mask_absorbing(&mut tm, &model.state, &whole);
        assert!(tm.data.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn domain_error_reports_triple() {
        let dims = Dims::new(1, 1, 0);
        let model = SystemModel::new(
            UniformGrid::new(vec![0.0], vec![1.0], vec![0.5]).unwrap(),
            UniformGrid::new(vec![0.0], vec![1.0], vec![1.0]).unwrap(),
            None,
            vec![Expr::parse("1 / (x0 - 0.5) + u0", dims, &BTreeMap::new()).unwrap()],
            NoiseSpec::normal(vec![1.0], 0.01).unwrap(),
        )
        .unwrap();
        for threads in [1, 3] {
            match build_matrix(&model, threads) {
                Err(AbstractionError::Domain { x: 1, u: 0, w: 0, .. }) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
    }
}
