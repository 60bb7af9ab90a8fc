//! Discrete-time stochastic control systems over uniform grids.

use thiserror::Error;

use crate::expr::{Dims, EvalError, Expr};
use crate::grid::UniformGrid;
use crate::noise::{NoiseError, NoiseSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{got} dynamics expressions for a {want}-dimensional state")]
    DynamicsCount { got: usize, want: usize },
    #[error("dynamics for x{index} reads {kind}{var}, beyond the declared dimension")]
    VariableOutOfRange { index: usize, kind: char, var: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// `x(k+1) = f(x(k), u(k), w(k)) + noise`, with noise either additive or
/// scaled by the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub state: UniformGrid,
    pub input: UniformGrid,
    /// `None` for disturbance-free systems.
    pub disturbance: Option<UniformGrid>,
    pub dynamics: Vec<Expr>,
    pub noise: NoiseSpec,
}

impl SystemModel {
    pub fn new(
        state: UniformGrid,
        input: UniformGrid,
        disturbance: Option<UniformGrid>,
        dynamics: Vec<Expr>,
        noise: NoiseSpec,
    ) -> Result<Self, ModelError> {
        let model = SystemModel {
            state,
            input,
            disturbance,
            dynamics,
            noise,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.state.dim();
        if self.dynamics.len() != n {
            return Err(ModelError::DynamicsCount {
                got: self.dynamics.len(),
                want: n,
            });
        }
        let dims = self.dims();
        for (index, e) in self.dynamics.iter().enumerate() {
            let used = e.used_dims();
            for (kind, var, limit) in [
                ('x', used.states, dims.states),
                ('u', used.inputs, dims.inputs),
                ('w', used.disturbances, dims.disturbances),
            ] {
                if var > limit {
                    return Err(ModelError::VariableOutOfRange {
                        index,
                        kind,
                        var: var - 1,
                    });
                }
            }
        }
        self.noise.validate()?;
        if self.noise.dim() != n {
            return Err(NoiseError::DimensionMismatch {
                got: self.noise.dim(),
                want: n,
            }
            .into());
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            self.state.dim(),
            self.input.dim(),
            self.disturbance.as_ref().map_or(0, |g| g.dim()),
        )
    }

    pub fn n_states(&self) -> usize {
        self.state.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input.len()
    }

    /// Number of disturbance points; 1 when the system has none.
    pub fn n_disturbances(&self) -> usize {
        self.disturbance.as_ref().map_or(1, |g| g.len())
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance.as_ref().map_or(0, |g| g.dim())
    }

    /// `|X x U|`, without allocating anything.
    pub fn state_input_pairs(&self) -> Option<u128> {
        (self.n_states() as u128).checked_mul(self.n_inputs() as u128)
    }

    /// Writes the disturbance point `w_index` into `out` (no-op without
    /// disturbances).
    pub fn write_disturbance(&self, w_index: usize, out: &mut [f64]) {
        if let Some(g) = &self.disturbance {
            g.write_point(w_index, out).expect("disturbance index in range");
        }
    }

    /// Noise-free successor `f(x, u, w)`.
    #[inline]
    pub fn successor_mean(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (slot, f) in out.iter_mut().zip(&self.dynamics) {
            *slot = f.eval(x, u, w)?;
        }
        Ok(())
    }
}
