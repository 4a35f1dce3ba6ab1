//! Model specification and the Gibbs/Metropolis–Hastings sampler.

mod fit;
mod gaussian;
mod model;
mod pg;
mod sampler;

pub use fit::{
    fit, run_chains, thread_budget, DrawMatrix, FitMeta, InteractionBlock, IterationLog, MoveLedger, PosteriorFit,
};
pub use gaussian::{node_effect_posterior, LinearPosterior};
pub use model::{DlmType, Family, InteractionMode, McmcControl, ModelSpec, SamplerHooks, Shrinkage};
pub use pg::{polya_gamma_mean, sample_polya_gamma};
