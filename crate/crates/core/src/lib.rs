//! Multilevel mixtures of latent trait analyzers (MLTA) for multi-layer
//! bipartite networks.
//!
//! Sending nodes are clustered into `G` groups whose prior membership follows
//! a multinomial logit in nodal covariates plus a discrete layer random
//! effect with `Q` support points; within a group, ties to the `R` receiving
//! nodes follow a logistic latent trait model with a `D`-dimensional Gaussian
//! trait. The trait integral is handled by the Jaakkola–Jordan variational
//! bound, and estimation runs a variational EM with a nested EM for the
//! trait parameters.

pub mod data;
pub mod em;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod par;
pub mod selection;
pub mod simulate;
pub mod varcore;

pub mod atomic;

pub use data::{
    load_network, read_model, write_model, write_network, FitResult, Loadings, ModelDims,
    NetworkData, Params, VarState,
};
pub use em::{fit_multistart, fit_one, FitConfig, Posteriors};
pub use error::{MltaError, Result};
