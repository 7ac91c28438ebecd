//! Parametrix construction: the error kernel Φ, space-time convolution, the Neumann
//! series for p_t(x,y), residual norms and the condition integrals.

use thiserror::Error;

use crate::flow::FlowError;
use crate::frozen::FrozenError;
use crate::model::ModelError;
use crate::quad::QuadError;

pub mod bulk;
pub mod conditions;
pub mod convolution;
pub mod fourier;
pub mod lattice;
pub mod neumann;
pub mod phi;

pub use conditions::{condition_integral, condition_integrals, ConditionKind, ConditionSweep};
pub use phi::{phi_kernel, zero_order_at, PhiCache, PhiTerms};
pub use convolution::{convolution_weights, fit_line, spacetime_convolve, LineFit, SpaceTimeField, TimeMesh};
pub use neumann::{
    neumann_density, neumann_run, phi_norms, principal_term, residual_against, residual_norms, row_masses, tail_bound,
    NeumannRun, ResidualReport, SeriesDiagnostics,
};

#[derive(Debug, Error)]
pub enum ParametrixError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Frozen(#[from] FrozenError),
    #[error("quadrature failed: {0}")]
    Quad(#[from] QuadError),
    #[error("quadrature failed for term {term}: {source}")]
    Term {
        term: &'static str,
        #[source]
        source: QuadError,
    },
    #[error("atoms of σ(x,·) and σ(y,·) are not coupled: {0} vs {1} atoms")]
    Uncoupled(usize, usize),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("singularity record {0} is not integrable (needs < 1)")]
    Singularity(f64),
    #[error("Neumann series diverges: ‖Φ^{{⋆{k}}}‖ = {norm:e} after three consecutive increases")]
    Divergence { k: usize, norm: f64 },
    #[error("unsupported kernel structure: {0}")]
    Unsupported(String),
}
