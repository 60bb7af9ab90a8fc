//! Noise laws, cutting regions and exact cell-probability integration.
//!
//! Every built-in family is a product of independent per-dimension laws, so
//! the mass of a hyper-rectangle is the product of one-dimensional interval
//! masses. The successor along dimension `i` is `mean_i + s_i * Z_i` where
//! `s_i = 1` for additive noise and `s_i = x_i` (the current state) for
//! multiplicative noise.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Normal, Uniform};
use statrs::function::beta::beta_reg;
use libm::{erf, erfc};
use thiserror::Error;

use crate::grid::HyperRect;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("cutting probability must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("noise parameter `{name}` in dimension {dim} is invalid: {value}")]
    BadParameter { name: &'static str, dim: usize, value: f64 },
    #[error("noise has {got} dimensions, state has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("quadrature of custom density did not converge on [{lo}, {hi}]")]
    QuadratureFailed { lo: f64, hi: f64 },
    #[error("multiplicative noise needs the current state")]
    MissingState,
}

/// Per-dimension density `pdf(dim, z)` of the noise variable, with `z`
/// measured from the mean.
pub type DensityFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// User-supplied noise: a density per dimension and a box enclosing its
/// support.
#[derive(Clone)]
pub struct CustomDensity {
    pub pdf: DensityFn,
    pub support: HyperRect,
    /// Free-form description used in reports and serialized results.
    pub label: String,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("support", &self.support)
            .field("label", &self.label)
            .finish()
    }
}

impl PartialEq for CustomDensity {
    fn eq(&self, other: &Self) -> bool {
        self.support == other.support && self.label == other.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Zero-mean normal with per-dimension standard deviations (diagonal
    /// covariance).
    Normal { sigma: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Exponential { rate: Vec<f64> },
    Beta { alpha: Vec<f64>, beta: Vec<f64> },
    Custom(CustomDensity),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub family: Family,
    pub mode: NoiseMode,
    /// Cutting probability threshold.
    pub gamma: f64,
}

/// Cutting region of a noise law.
#[derive(Debug, Clone, PartialEq)]
pub enum Cutting {
    /// Per-dimension radius around the successor mean.
    Radius(Vec<f64>),
    /// No cutting: rows span the whole state grid.
    Full,
}

impl NoiseSpec {
    pub fn new(family: Family, mode: NoiseMode, gamma: f64) -> Result<Self, NoiseError> {
        let spec = NoiseSpec { family, mode, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn normal(sigma: Vec<f64>, gamma: f64) -> Result<Self, NoiseError> {
        NoiseSpec::new(Family::Normal { sigma }, NoiseMode::Additive, gamma)
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Normal { sigma } => sigma.len(),
            Family::Uniform { lo, .. } => lo.len(),
            Family::Exponential { rate } => rate.len(),
            Family::Beta { alpha, .. } => alpha.len(),
            Family::Custom(c) => c.support.dim(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match &self.family {
            Family::Normal { .. } => "normal",
            Family::Uniform { .. } => "uniform",
            Family::Exponential { .. } => "exponential",
            Family::Beta { .. } => "beta",
            Family::Custom(_) => "custom",
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(NoiseError::BadThreshold(self.gamma));
        }
        let positive = |name: &'static str, v: &[f64]| {
            v.iter().enumerate().try_for_each(|(dim, &value)| {
                if value > 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(NoiseError::BadParameter { name, dim, value })
                }
            })
        };
        let ordered = |lo: &[f64], hi: &[f64]| {
            if lo.len() != hi.len() {
                return Err(NoiseError::DimensionMismatch {
                    got: hi.len(),
                    want: lo.len(),
                });
            }
            lo.iter().zip(hi).enumerate().try_for_each(|(dim, (l, h))| {
                if l < h && l.is_finite() && h.is_finite() {
                    Ok(())
                } else {
                    Err(NoiseError::BadParameter {
                        name: "support",
                        dim,
                        value: *h,
                    })
                }
            })
        };
        match &self.family {
            Family::Normal { sigma } => positive("sigma", sigma),
            Family::Uniform { lo, hi } => ordered(lo, hi),
            Family::Exponential { rate } => positive("rate", rate),
            Family::Beta { alpha, beta } => {
                if alpha.len() != beta.len() {
                    return Err(NoiseError::DimensionMismatch {
                        got: beta.len(),
                        want: alpha.len(),
                    });
                }
                positive("alpha", alpha)?;
                positive("beta", beta)
            }
            Family::Custom(c) => ordered(&c.support.lo, &c.support.hi),
        }
    }

    /// Cutting radius per dimension.
    ///
    /// Normal: the on-axis root of `pdf(x* e_i | 0, Sigma) = gamma`, i.e.
    /// `x*_i = sigma_i * sqrt(-2 ln(gamma * (2 pi)^(n/2) * prod sigma))`, and
    /// zero when `gamma` is at or above the peak density. Exponential: the
    /// analogous root of the joint density along axis `i`. Bounded families
    /// return the largest distance from the mean to their support edge.
    /// Multiplicative noise and `gamma = 0` on unbounded families disable
    /// cutting.
    pub fn cutting_radius(&self) -> Cutting {
        if self.mode == NoiseMode::Multiplicative {
            return Cutting::Full;
        }
        match &self.family {
            Family::Normal { sigma } => {
                if self.gamma == 0.0 {
                    return Cutting::Full;
                }
                let n = sigma.len() as f64;
                let ln_norm = 0.5 * n * (2.0 * std::f64::consts::PI).ln() + sigma.iter().map(|s| s.ln()).sum::<f64>();
                // ln(gamma * c) with c the joint normalization constant
                let ln_gc = self.gamma.ln() + ln_norm;
                if ln_gc >= 0.0 {
                    return Cutting::Radius(vec![0.0; sigma.len()]);
                }
                Cutting::Radius(sigma.iter().map(|s| s * (-2.0 * ln_gc).sqrt()).collect())
            }
            Family::Exponential { rate } => {
                if self.gamma == 0.0 {
                    return Cutting::Full;
                }
                let ln_peak: f64 = rate.iter().map(|r| r.ln()).sum();
                let t = ln_peak - self.gamma.ln();
                Cutting::Radius(rate.iter().map(|r| (t / r).max(0.0)).collect())
            }
            Family::Uniform { lo, hi } => Cutting::Radius(lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs())).collect()),
            Family::Beta { alpha, .. } => Cutting::Radius(vec![1.0; alpha.len()]),
            Family::Custom(c) => Cutting::Radius(
                c.support
                    .lo
                    .iter()
                    .zip(&c.support.hi)
                    .map(|(l, h)| l.abs().max(h.abs()))
                    .collect(),
            ),
        }
    }

    /// Whether the cutting radius is exact (bounded support) rather than a
    /// density threshold.
    pub fn has_bounded_support(&self) -> bool {
        matches!(
            self.family,
            Family::Uniform { .. } | Family::Beta { .. } | Family::Custom(_)
        )
    }

    /// Window half widths, in grid cells, for a grid with widths `eta`.
    /// `None` means rows span the whole grid.
    pub fn window_half_widths(&self, eta: &[f64]) -> Option<Vec<usize>> {
        match self.cutting_radius() {
            Cutting::Full => None,
            Cutting::Radius(r) => {
                let bounded = self.has_bounded_support();
                Some(
                    r.iter()
                        .zip(eta)
                        .map(|(r, e)| {
                            let cells = r / e;
                            let h = if bounded {
                                // every cell overlapping the support
                                (cells - 1e-12).ceil()
                            } else {
                                (cells + 1e-12).floor()
                            };
                            if h.is_finite() && h < 1e12 {
                                h.max(0.0) as usize
                            } else {
                                usize::MAX / 4
                            }
                        })
                        .collect(),
                )
            }
        }
    }

    /// Mass of the normal law inside its cutting box: `prod erf(x*_i / (sigma_i sqrt 2))`.
    /// `None` for non-normal families.
    pub fn normal_mass_inside(&self) -> Option<f64> {
        let Family::Normal { sigma } = &self.family else {
            return None;
        };
        Some(match self.cutting_radius() {
            Cutting::Full => 1.0,
            Cutting::Radius(r) => r
                .iter()
                .zip(sigma)
                .map(|(x, s)| erf(x / (s * std::f64::consts::SQRT_2)))
                .product(),
        })
    }

    /// Probability that `mean_i + s_i Z_i` falls in `[lo, hi)` along `dim`.
    #[inline]
    pub fn interval_mass(&self, dim: usize, mean: f64, lo: f64, hi: f64, scale: f64) -> Result<f64, NoiseError> {
        if scale == 0.0 {
            return Ok(if mean >= lo && mean < hi { 1.0 } else { 0.0 });
        }
        let (mut a, mut b) = ((lo - mean) / scale, (hi - mean) / scale);
        if scale < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        let p = match &self.family {
            Family::Normal { sigma } => normal_mass(a, b, sigma[dim]),
            Family::Uniform { lo, hi } => {
                let (l, h) = (lo[dim], hi[dim]);
                (b.min(h) - a.max(l)).max(0.0) / (h - l)
            }
            Family::Exponential { rate } => {
                let r = rate[dim];
                let (a, b) = (a.max(0.0), b.max(0.0));
                // e^{-ra} - e^{-rb}, written to keep precision near zero
                (-r * a).exp() * -(-r * (b - a)).exp_m1()
            }
            Family::Beta { alpha, beta } => {
                let (a, b) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
                if b <= a {
                    0.0
                } else {
                    beta_reg(alpha[dim], beta[dim], b) - beta_reg(alpha[dim], beta[dim], a)
                }
            }
            Family::Custom(c) => {
                let (l, h) = (a.max(c.support.lo[dim]), b.min(c.support.hi[dim]));
                if h <= l {
                    0.0
                } else {
                    let f = |z: f64| (c.pdf)(dim, z);
                    adaptive_simpson(&f, l, h, 1e-10).ok_or(NoiseError::QuadratureFailed { lo: l, hi: h })?
                }
            }
        };
        Ok(p.clamp(0.0, 1.0))
    }

    /// Probability of landing in `cell` given the successor mean. `state` is
    /// required for multiplicative noise.
    pub fn cell_probability(&self, mean: &[f64], cell: &HyperRect, state: Option<&[f64]>) -> Result<f64, NoiseError> {
        let mut p = 1.0;
        for d in 0..mean.len() {
            let scale = self.scale(d, state)?;
            p *= self.interval_mass(d, mean[d], cell.lo[d], cell.hi[d], scale)?;
        }
        Ok(p)
    }

    #[inline]
    pub fn scale(&self, dim: usize, state: Option<&[f64]>) -> Result<f64, NoiseError> {
        match self.mode {
            NoiseMode::Additive => Ok(1.0),
            NoiseMode::Multiplicative => state.map(|s| s[dim]).ok_or(NoiseError::MissingState),
        }
    }

    /// Draws one noise vector (already scaled by the state in multiplicative
    /// mode).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, state: Option<&[f64]>, out: &mut [f64]) -> Result<(), NoiseError> {
        for (d, slot) in out.iter_mut().enumerate() {
            let z = match &self.family {
                Family::Normal { sigma } => Normal::new(0.0, sigma[d]).expect("validated sigma").sample(rng),
                Family::Uniform { lo, hi } => Uniform::new(lo[d], hi[d]).expect("validated support").sample(rng),
                Family::Exponential { rate } => Exp::new(rate[d]).expect("validated rate").sample(rng),
                Family::Beta { alpha, beta } => Beta::new(alpha[d], beta[d]).expect("validated shape").sample(rng),
                Family::Custom(c) => sample_custom(c, d, rng),
            };
            *slot = z * self.scale(d, state)?;
        }
        Ok(())
    }
}

/// `P(a <= Z < b)` for `Z ~ N(0, sigma^2)`, using the complementary error
/// function on the tails to avoid cancellation.
#[inline]
fn normal_mass(a: f64, b: f64, sigma: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let k = 1.0 / (sigma * std::f64::consts::SQRT_2);
    let (za, zb) = (a * k, b * k);
    if za >= 0.0 {
        0.5 * (erfc(za) - erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb) - erfc(-za))
    } else {
        0.5 * (erf(zb) - erf(za))
    }
}

/// Rejection sampling against a flat envelope over the support.
fn sample_custom<R: Rng + ?Sized>(c: &CustomDensity, dim: usize, rng: &mut R) -> f64 {
    let (lo, hi) = (c.support.lo[dim], c.support.hi[dim]);
    let probe = 512;
    let peak = (0..=probe)
        .map(|i| (c.pdf)(dim, lo + (hi - lo) * i as f64 / probe as f64))
        .fold(0.0, f64::max)
        * 1.25;
    if !(peak > 0.0) {
        return 0.5 * (lo + hi);
    }
    for _ in 0..100_000 {
        let z = rng.random_range(lo..hi);
        if rng.random::<f64>() * peak <= (c.pdf)(dim, z) {
            return z;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`; `None` if the
/// recursion depth is exhausted.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Option<f64> {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return None;
        }
        if delta.abs() <= 15.0 * tol || (b - a) < 1e-14 {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
        )
    }
    if b <= a {
        return Some(0.0);
    }
    // Seed with a few panels so narrow peaks are not missed.
    let panels = 16;
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for i in 0..panels {
        let (l, r) = (a + h * i as f64, a + h * (i + 1) as f64);
        let m = 0.5 * (l + r);
        let (fl, fm, fr) = (f(l), f(m), f(r));
        let whole = (r - l) / 6.0 * (fl + 4.0 * fm + fr);
        sum += rec(f, l, r, fl, fm, fr, whole, tol / panels as f64, 40)?;
    }
    Some(sum)
}
