//! Uniform quantization of hyper-rectangles.
//!
//! A grid over `[lb, ub]` with widths `eta` has `floor((ub - lb) / eta) + 1`
//! points per dimension, placed at `lb + j * eta`. Flat indices are the
//! row-major mixed-radix encoding of the per-dimension indices (the last
//! dimension varies fastest). Each point owns the cell `[p - eta/2, p + eta/2)`;
//! cells are not clipped at the domain edge, so every cell has the same volume.

use thiserror::Error;

/// Slack used when converting real ratios to counts, so that e.g.
/// `0.6 / 0.1 = 5.999999999999999` still counts 7 points.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid needs at least one dimension")]
    NoDimensions,
    #[error("bounds/width vectors have mismatched lengths ({lb}, {ub}, {eta})")]
    LengthMismatch { lb: usize, ub: usize, eta: usize },
    #[error("dimension {dim}: quantization width must be positive and finite, got {eta}")]
    NonPositiveWidth { dim: usize, eta: f64 },
    #[error("dimension {dim}: lower bound {lb} exceeds upper bound {ub}")]
    InvertedBounds { dim: usize, lb: f64, ub: f64 },
    #[error("grid has too many points to index")]
    TooLarge,
    #[error("index {index} out of range (grid has {total} points)")]
    IndexOutOfRange { index: usize, total: usize },
    #[error("dimension {dim}: value {value} lies outside the quantized region [{lo}, {hi}]")]
    OutsideRegion { dim: usize, value: f64, lo: f64, hi: f64 },
    #[error("point has {got} coordinates, grid has {want} dimensions")]
    WrongArity { got: usize, want: usize },
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperRect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl HyperRect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        HyperRect { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).max(0.0)).product()
    }

    /// Closed-box membership with a tiny tolerance for representatives that
    /// sit on the boundary up to rounding.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - COUNT_EPS && *v <= h + COUNT_EPS)
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    lb: Vec<f64>,
    ub: Vec<f64>,
    eta: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl UniformGrid {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>, eta: Vec<f64>) -> Result<Self, GridError> {
        if lb.len() != ub.len() || lb.len() != eta.len() {
            return Err(GridError::LengthMismatch {
                lb: lb.len(),
                ub: ub.len(),
                eta: eta.len(),
            });
        }
        if lb.is_empty() {
            return Err(GridError::NoDimensions);
        }
        let mut counts = Vec::with_capacity(lb.len());
        for dim in 0..lb.len() {
            let e = eta[dim];
            if !(e > 0.0 && e.is_finite()) {
                return Err(GridError::NonPositiveWidth { dim, eta: e });
            }
            if !(lb[dim] <= ub[dim]) {
                return Err(GridError::InvertedBounds {
                    dim,
                    lb: lb[dim],
                    ub: ub[dim],
                });
            }
            let ratio = (ub[dim] - lb[dim]) / e;
            let c = (ratio + COUNT_EPS).floor();
            if c >= u32::MAX as f64 {
                return Err(GridError::TooLarge);
            }
            counts.push(c as usize + 1);
        }
        let mut strides = vec![1usize; counts.len()];
        for d in (0..counts.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1].checked_mul(counts[d + 1]).ok_or(GridError::TooLarge)?;
        }
        let total = strides[0].checked_mul(counts[0]).ok_or(GridError::TooLarge)?;
        Ok(UniformGrid {
            lb,
            ub,
            eta,
            counts,
            strides,
            total,
        })
    }

    /// A zero-width single-point grid at the origin, used for absent
    /// disturbance sets.
    pub fn singleton(dim: usize) -> Self {
        UniformGrid::new(vec![0.0; dim.max(1)], vec![0.0; dim.max(1)], vec![1.0; dim.max(1)])
            .expect("singleton grid is valid")
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn lb(&self) -> &[f64] {
        &self.lb
    }

    pub fn ub(&self) -> &[f64] {
        &self.ub
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// State discretization parameter: the largest quantization width.
    pub fn delta(&self) -> f64 {
        self.eta.iter().copied().fold(0.0, f64::max)
    }

    /// Representative coordinate of per-dimension index `j` in dimension `dim`.
    #[inline]
    pub fn coord(&self, dim: usize, j: usize) -> f64 {
        self.lb[dim] + j as f64 * self.eta[dim]
    }

    /// Lower and upper edge of cell `j` along `dim`.
    #[inline]
    pub fn cell_edges(&self, dim: usize, j: usize) -> (f64, f64) {
        let p = self.coord(dim, j);
        let half = 0.5 * self.eta[dim];
        (p - half, p + half)
    }

    pub fn check_index(&self, index: usize) -> Result<(), GridError> {
        if index >= self.total {
            Err(GridError::IndexOutOfRange {
                index,
                total: self.total,
            })
        } else {
            Ok(())
        }
    }

    /// Per-dimension indices of a flat index.
    pub fn unflatten(&self, index: usize, out: &mut [usize]) {
        let mut rem = index;
        for d in 0..self.dim() {
            out[d] = rem / self.strides[d];
            rem %= self.strides[d];
        }
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(j, s)| j * s).sum()
    }

    pub fn multi_index(&self, index: usize) -> Result<Vec<usize>, GridError> {
        self.check_index(index)?;
        let mut out = vec![0; self.dim()];
        self.unflatten(index, &mut out);
        Ok(out)
    }

    pub fn index_to_point(&self, index: usize) -> Result<Vec<f64>, GridError> {
        let mut out = vec![0.0; self.dim()];
        self.write_point(index, &mut out)?;
        Ok(out)
    }

    /// Writes the representative of `index` into `out` without allocating.
    pub fn write_point(&self, index: usize, out: &mut [f64]) -> Result<(), GridError> {
        self.check_index(index)?;
        let mut rem = index;
        for d in 0..self.dim() {
            let j = rem / self.strides[d];
            rem %= self.strides[d];
            out[d] = self.coord(d, j);
        }
        Ok(())
    }

    /// Nearest per-dimension index, unclamped; ties round toward +inf.
    #[inline]
    pub fn nearest_raw(&self, dim: usize, value: f64) -> i64 {
        ((value - self.lb[dim]) / self.eta[dim] + 0.5).floor() as i64
    }

    /// Lower and upper limit of the quantized region along `dim`: the union
    /// of all cells.
    pub fn region(&self, dim: usize) -> (f64, f64) {
        let half = 0.5 * self.eta[dim];
        (self.lb[dim] - half, self.coord(dim, self.counts[dim] - 1) + half)
    }

    pub fn in_region(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(d, v)| {
                let (lo, hi) = self.region(d);
                *v >= lo && *v <= hi
            })
    }

    /// Flat index of the nearest representative (the quantization map).
    pub fn point_to_index(&self, x: &[f64]) -> Result<usize, GridError> {
        if x.len() != self.dim() {
            return Err(GridError::WrongArity {
                got: x.len(),
                want: self.dim(),
            });
        }
        let mut index = 0;
        for (d, &v) in x.iter().enumerate() {
            let (lo, hi) = self.region(d);
            if !(v >= lo && v <= hi) {
                return Err(GridError::OutsideRegion { dim: d, value: v, lo, hi });
            }
            let j = self.nearest_raw(d, v).clamp(0, self.counts[d] as i64 - 1) as usize;
            index += j * self.strides[d];
        }
        Ok(index)
    }

    /// Flat index of the nearest representative, clamping points outside the
    /// region onto its boundary.
    pub fn clamped_index(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .enumerate()
            .map(|(d, &v)| self.nearest_raw(d, v).clamp(0, self.counts[d] as i64 - 1) as usize * self.strides[d])
            .sum()
    }

    /// Nearest representative point.
    pub fn quantize(&self, x: &[f64]) -> Result<Vec<f64>, GridError> {
        self.point_to_index(x).and_then(|i| self.index_to_point(i))
    }

    /// The partition cell owned by `index`.
    pub fn cell_bounds(&self, index: usize) -> Result<HyperRect, GridError> {
        let multi = self.multi_index(index)?;
        let (lo, hi) = multi.iter().enumerate().map(|(d, &j)| self.cell_edges(d, j)).unzip();
        Ok(HyperRect { lo, hi })
    }

    pub fn cell_volume(&self) -> f64 {
        self.eta.iter().product()
    }

    /// Indices whose representatives lie in `[center - radius, center + radius]`,
    /// clipped to the grid.
    pub fn window(&self, center: &[f64], radius: &[f64]) -> IndexWindow {
        let mut start = Vec::with_capacity(self.dim());
        let mut len = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let lo_t = (center[d] - radius[d] - self.lb[d]) / self.eta[d];
            let hi_t = (center[d] + radius[d] - self.lb[d]) / self.eta[d];
            let lo = (lo_t - COUNT_EPS).ceil().max(0.0);
            let hi = (hi_t + COUNT_EPS).floor().min(self.counts[d] as f64 - 1.0);
            if hi < lo {
                start.push(0);
                len.push(0);
            } else {
                start.push(lo as usize);
                len.push((hi - lo) as usize + 1);
            }
        }
        IndexWindow {
            start,
            len,
            strides: self.strides.clone(),
        }
    }

    /// Fixed-shape window of `2 * half + 1` points per dimension around the
    /// nearest representative of `center`, shifted to lie inside the grid
    /// (and truncated to the grid extent when it is wider).
    pub fn fixed_window(&self, center: &[f64], half: &[usize], start: &mut [usize]) {
        for d in 0..self.dim() {
            let width = window_width(half[d], self.counts[d]);
            let c = self.nearest_raw(d, center[d]);
            let lo = c.saturating_sub(half[d].min(self.counts[d]) as i64);
            let max_start = (self.counts[d] - width) as i64;
            start[d] = lo.clamp(0, max_start) as usize;
        }
    }

    /// Row-major iteration order of indices inside a window shape: flat
    /// offsets relative to the window origin.
    pub fn window_offsets(&self, shape: &[usize]) -> Vec<usize> {
        let total: usize = shape.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut m = vec![0usize; shape.len()];
        if total == 0 {
            return out;
        }
        loop {
            out.push(self.flatten(&m));
            let mut d = shape.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                m[d] += 1;
                if m[d] < shape[d] {
                    break;
                }
                m[d] = 0;
            }
        }
    }
}

/// Width of a fixed window with the given half width on an axis of `count`
/// points.
#[inline]
pub fn window_width(half: usize, count: usize) -> usize {
    half.saturating_mul(2).saturating_add(1).min(count)
}

/// Rectangular block of grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexWindow {
    pub start: Vec<usize>,
    pub len: Vec<usize>,
    strides: Vec<usize>,
}

impl IndexWindow {
    pub fn size(&self) -> usize {
        self.len.iter().product()
    }

    /// Flat grid indices in row-major order.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size());
        if self.size() == 0 {
            return out;
        }
        let n = self.len.len();
        let mut m = vec![0usize; n];
        loop {
            out.push((0..n).map(|d| (self.start[d] + m[d]) * self.strides[d]).sum());
            let mut d = n;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                m[d] += 1;
                if m[d] < self.len[d] {
                    break;
                }
                m[d] = 0;
            }
        }
    }
}
