//! Outer variational EM: class priors, E-step posteriors, the M-step
//! updates, and the multi-start fitting loop.

mod estep;
mod fit;
mod logit;
mod priors;
mod zeta;

pub use estep::{e_step, posteriors_from_bounds, refresh_bounds, Posteriors};
pub use fit::{
    fit_all_starts, fit_multistart, fit_one, fit_one_traced, initial_params, loglik_at, start_rng,
    FitConfig, FitTrace, XI_INIT,
};
pub use logit::{logit_objective, m_step_logit, LogitFit, NrConfig};
pub use priors::{class_priors, ClassPriors};
pub use zeta::{update_rho, update_zeta};
