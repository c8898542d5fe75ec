use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{argmax, FitResult, Loadings, ModelDims, NetworkData, Params, VarState};
use crate::error::{MltaError, Result};
use crate::par;
use crate::selection::bic;
use crate::varcore::{inner_em_into, InnerConfig, Workspace};

use super::estep::{posteriors_from_bounds, Posteriors};
use super::logit::{m_step_logit, NrConfig};
use super::zeta::{update_rho, update_zeta};

/// Initial value of every variational parameter `ξ`.
pub const XI_INIT: f64 = 20.0;
/// A group whose largest posterior stays below this is considered empty.
const EMPTY_GROUP_MASS: f64 = 1e-6;
/// Consecutive empty iterations before a start is abandoned.
const EMPTY_GROUP_PATIENCE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_outer_iters: usize,
    /// Relative change of `ℓ̃` that ends the outer loop.
    pub outer_tol: f64,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub nr_max_iters: usize,
    pub nr_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_starts: 10,
            max_outer_iters: 500,
            outer_tol: 1e-6,
            inner_iters: 100,
            inner_tol: 1e-8,
            nr_max_iters: 50,
            nr_tol: 1e-8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_starts", self.n_starts),
            ("max_outer_iters", self.max_outer_iters),
            ("inner_iters", self.inner_iters),
            ("nr_max_iters", self.nr_max_iters),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(MltaError::InvalidInput(format!("{name} must be at least 1")));
        }
        let tols = [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("nr_tol", self.nr_tol),
        ];
        if let Some((name, _)) = tols.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(MltaError::InvalidInput(format!("{name} must be positive")));
        }
        Ok(())
    }

    fn inner(&self) -> InnerConfig {
        InnerConfig {
            max_iters: self.inner_iters,
            rel_tol: self.inner_tol,
        }
    }

    fn newton(&self) -> NrConfig {
        NrConfig {
            max_iters: self.nr_max_iters,
            tol: self.nr_tol,
        }
    }
}

/// A fit together with the `ℓ̃` value of every outer iteration.
#[derive(Clone, Debug)]
pub struct FitTrace {
    pub result: FitResult,
    pub loglik: Vec<f64>,
}

/// RNG substream for one start (or bootstrap replicate) of a seeded run.
pub fn start_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random start: `β = 0`, `γ` equally spaced on `[−1, 1]` and shifted so
/// `γ_1 = 0`, uniform `ρ`, and standard normal `b` and `w`.
pub fn initial_params(dims: &ModelDims, j: usize, r: usize, rng: &mut ChaCha8Rng) -> Params {
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let b: Vec<Vec<f64>> = (0..dims.g)
        .map(|_| (0..r).map(|_| normal()).collect())
        .collect();
    let w = if dims.parsimonious {
        Loadings::Shared(
            (0..r)
                .map(|_| (0..dims.d).map(|_| normal()).collect())
                .collect(),
        )
    } else {
        Loadings::PerGroup(
            (0..dims.g)
                .map(|_| {
                    (0..r)
                        .map(|_| (0..dims.d).map(|_| normal()).collect())
                        .collect()
                })
                .collect(),
        )
    };
    let gamma = if dims.q == 1 {
        vec![0.0]
    } else {
        (0..dims.q)
            .map(|q| 2.0 * q as f64 / (dims.q - 1) as f64)
            .collect()
    };
    Params {
        beta: vec![vec![0.0; j]; dims.g - 1],
        b,
        w,
        gamma,
        rho: vec![1.0 / dims.q as f64; dims.q],
    }
}

/// Refresh `μ`, `Σ`, `ξ` and `log f̃` for every node and group by running the
/// nested EM at the current `b` and `w`.
fn inner_sweep(data: &NetworkData, params: &Params, var: &mut VarState, cfg: InnerConfig) {
    let (g, r, d) = (var.g, var.r, var.d);
    par::for_each_mut(&mut var.nodes, |i, node| {
        let y = data.y_row(i);
        let mut ws = Workspace::new(d);
        for gg in 0..g {
            let lf = inner_em_into(
                y,
                &params.b[gg],
                params.w.group(gg),
                &mut node.xi[gg * r..(gg + 1) * r],
                cfg,
                &mut ws,
            );
            node.mu[gg * d..(gg + 1) * d].copy_from_slice(&ws.mu);
            node.sigma[gg * d * d..(gg + 1) * d * d].copy_from_slice(&ws.sigma);
            node.log_ftilde[gg] = lf;
        }
    });
}

/// Posteriors and `ℓ̃` at fixed parameters, with every `ξ` run to
/// convergence of the nested EM from [`XI_INIT`].
pub fn loglik_at(data: &NetworkData, params: &Params, cfg: &FitConfig) -> Result<(Posteriors, f64)> {
    let d = params.w.group(0).first().map_or(0, Vec::len);
    let mut var = VarState::new(
        data.n_nodes(),
        params.n_groups(),
        data.n_responses(),
        d,
        XI_INIT,
    );
    inner_sweep(data, params, &mut var, cfg.inner());
    let bounds: Vec<f64> = var.nodes.iter().flat_map(|v| v.log_ftilde.iter().copied()).collect();
    posteriors_from_bounds(data, params, &bounds)
}

fn finish(
    data: &NetworkData,
    dims: ModelDims,
    params: Params,
    post: &Posteriors,
    loglik: f64,
    converged: bool,
    n_iterations: usize,
) -> FitResult {
    let zhat: Vec<Vec<f64>> = (0..data.n_nodes()).map(|i| post.zhat_row(i).to_vec()).collect();
    let vhat: Vec<Vec<f64>> = (0..data.n_layers())
        .map(|h| post.vhat_row(h).to_vec())
        .collect();
    FitResult {
        dims,
        bic: bic(
            loglik,
            &dims,
            data.n_covariates(),
            data.n_responses(),
            data.n_nodes(),
        ),
        params,
        loglik,
        node_map: zhat.iter().map(|z| argmax(z)).collect(),
        layer_map: vhat.iter().map(|v| argmax(v)).collect(),
        zhat,
        vhat,
        converged,
        n_iterations,
        start_index: 0,
    }
}

/// Run the variational EM from `init` until the relative change of `ℓ̃`
/// drops below `cfg.outer_tol` or `cfg.max_outer_iters` is reached.
pub fn fit_one(
    data: &NetworkData,
    dims: &ModelDims,
    init: &Params,
    cfg: &FitConfig,
) -> Result<FitResult> {
    fit_one_traced(data, dims, init, cfg).map(|t| t.result)
}

/// [`fit_one`], also returning the `ℓ̃` trace. The reported fit is the
/// iterate with the largest `ℓ̃`: its parameters, posteriors and value.
pub fn fit_one_traced(
    data: &NetworkData,
    dims: &ModelDims,
    init: &Params,
    cfg: &FitConfig,
) -> Result<FitTrace> {
    dims.validate(data)?;
    cfg.validate()?;
    let (j, r, n) = (data.n_covariates(), data.n_responses(), data.n_nodes());
    init.check_shape(dims, j, r)?;

    let mut params = init.clone();
    params.gamma = params.gamma.iter().map(|g| g - init.gamma[0]).collect();
    if dims.g > 1 {
        for row in &mut params.beta {
            row[0] += init.gamma[0];
        }
    }
    let mut var = VarState::new(n, dims.g, r, dims.d, XI_INIT);
    let mut trace = Vec::new();
    let mut best: Option<(f64, Params, Posteriors)> = None;
    let mut empty_streak = vec![0usize; dims.g];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_outer_iters {
        iterations = iter;
        inner_sweep(data, &params, &mut var, cfg.inner());
        let bounds: Vec<f64> = var.nodes.iter().flat_map(|v| v.log_ftilde.iter().copied()).collect();
        let (post, ll) = posteriors_from_bounds(data, &params, &bounds)?;
        if !ll.is_finite() {
            return Err(MltaError::Numerical(format!(
                "approximate log-likelihood is {ll} at iteration {iter}"
            )));
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if best.as_ref().is_none_or(|(b, _, _)| ll >= *b) {
            best = Some((ll, params.clone(), post.clone()));
        }
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.outer_tol * ll.abs() {
                converged = true;
                break;
            }
        }
        if dims.g > 1 {
            for (gg, streak) in empty_streak.iter_mut().enumerate() {
                let top = (0..n).map(|i| post.zhat_row(i)[gg]).fold(0.0, f64::max);
                if top < EMPTY_GROUP_MASS {
                    *streak += 1;
                    if *streak >= EMPTY_GROUP_PATIENCE {
                        return Err(MltaError::Degenerate {
                            group: gg,
                            iteration: iter,
                        });
                    }
                } else {
                    *streak = 0;
                }
            }
        }
        if iter == cfg.max_outer_iters {
            break;
        }

        let logit = m_step_logit(data, &post, &params.beta, &params.gamma, cfg.newton())?;
        params.beta = logit.beta;
        params.gamma = logit.gamma;
        params.rho = update_rho(&post);
        let (b, w) = update_zeta(data, &post, &var, dims.parsimonious)?;
        params.b = b;
        params.w = w;
        if !params.is_finite() {
            return Err(MltaError::Numerical(format!(
                "non-finite parameters after M-step {iter}"
            )));
        }
    }

    let (ll, best_params, post) = best.expect("at least one iteration runs");
    Ok(FitTrace {
        result: finish(data, *dims, best_params, &post, ll, converged, iterations),
        loglik: trace,
    })
}

/// Fit every random start; entry `s` uses RNG substream `s` of `cfg.seed`.
pub fn fit_all_starts(
    data: &NetworkData,
    dims: &ModelDims,
    cfg: &FitConfig,
) -> Vec<Result<FitResult>> {
    let (j, r) = (data.n_covariates(), data.n_responses());
    par::map_indexed(cfg.n_starts, |s| {
        let mut rng = start_rng(cfg.seed, s as u64);
        let init = initial_params(dims, j, r, &mut rng);
        fit_one(data, dims, &init, cfg).map(|mut f| {
            f.start_index = s;
            f
        })
    })
}

/// Best fit (largest `ℓ̃`, earliest start on ties) over `cfg.n_starts`
/// random starts. Degenerate and failed starts are skipped.
pub fn fit_multistart(data: &NetworkData, dims: &ModelDims, cfg: &FitConfig) -> Result<FitResult> {
    dims.validate(data)?;
    cfg.validate()?;
    let mut best: Option<FitResult> = None;
    let mut failures = Vec::new();
    for (s, res) in fit_all_starts(data, dims, cfg).into_iter().enumerate() {
        match res {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.loglik > b.loglik) {
                    best = Some(f);
                }
            }
            Err(e) => failures.push(format!("start {s}: {e}")),
        }
    }
    best.ok_or(MltaError::AllStartsFailed(failures))
}
