use nalgebra::{DMatrix, DVector};

use crate::data::NetworkData;
use crate::error::{MltaError, Result};
use crate::par;

use super::estep::Posteriors;
use super::priors::{dot, log_sum_exp, offset_scores};

const CHUNK: usize = 256;
const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NrConfig {
    pub max_iters: usize,
    /// Stop when the gradient's ∞-norm is below this.
    pub tol: f64,
}

impl Default for NrConfig {
    fn default() -> Self {
        NrConfig {
            max_iters: 50,
            tol: 1e-8,
        }
    }
}

/// Weighted multinomial-logit objective `F(β, γ) = Σ â_{igq} log η_{igq}`
/// with its gradient and negated Hessian over the packed parameter vector
/// `(β_2, …, β_G, γ_2, …, γ_Q)`.
#[derive(Clone, Debug)]
pub struct LogitEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub neg_hess: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitFit {
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn n_free(g: usize, j: usize, q: usize) -> usize {
    (g - 1) * j + (q - 1)
}

fn pack(beta: &[Vec<f64>], gamma: &[f64]) -> DVector<f64> {
    let mut v: Vec<f64> = beta.iter().flatten().copied().collect();
    v.extend_from_slice(&gamma[1..]);
    DVector::from_vec(v)
}

fn unpack(theta: &DVector<f64>, g: usize, j: usize, q: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta = (0..g - 1)
        .map(|gg| theta.as_slice()[gg * j..(gg + 1) * j].to_vec())
        .collect();
    let mut gamma = vec![0.0];
    gamma.extend_from_slice(&theta.as_slice()[(g - 1) * j..]);
    debug_assert_eq!(gamma.len(), q);
    (beta, gamma)
}

/// Evaluate the objective, gradient and negated Hessian. Rows are reduced
/// in fixed-size chunks in a fixed order.
pub fn logit_objective(
    data: &NetworkData,
    ahat: &Posteriors,
    beta: &[Vec<f64>],
    gamma: &[f64],
) -> LogitEval {
    let g = beta.len() + 1;
    let q = gamma.len();
    let j = data.n_covariates();
    let p = n_free(g, j, q);
    let n = data.n_nodes();
    let n_chunks = n.div_ceil(CHUNK);

    let partial = par::map_indexed(n_chunks, |c| {
        let mut value = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        let mut lin = vec![0.0; g];
        let mut scores = vec![0.0; g];
        let mut prob = vec![0.0; g];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let x = data.x_row(i);
            for gg in 1..g {
                lin[gg] = dot(x, &beta[gg - 1]);
            }
            for qq in 0..q {
                let wsum: f64 = (0..g).map(|gg| ahat.ahat(i, gg, qq)).sum();
                if wsum <= 0.0 {
                    continue;
                }
                offset_scores(&lin, gamma[qq], &mut scores);
                let lse = log_sum_exp(&scores);
                for gg in 0..g {
                    prob[gg] = (scores[gg] - lse).exp();
                    let a = ahat.ahat(i, gg, qq);
                    if a > 0.0 {
                        value += a * (scores[gg] - lse);
                    }
                }
                let p0 = prob[0];
                let gamma_idx = (qq > 0).then(|| (g - 1) * j + qq - 1);
                for gg in 1..g {
                    let resid = ahat.ahat(i, gg, qq) - wsum * prob[gg];
                    let bi = (gg - 1) * j;
                    for (jj, xv) in x.iter().enumerate() {
                        grad[bi + jj] += resid * xv;
                    }
                    if let Some(gi) = gamma_idx {
                        grad[gi] += resid;
                    }
                    for gg2 in 1..g {
                        let coef = wsum
                            * (if gg == gg2 { prob[gg] } else { 0.0 } - prob[gg] * prob[gg2]);
                        let bj = (gg2 - 1) * j;
                        for (ja, xa) in x.iter().enumerate() {
                            for (jb, xb) in x.iter().enumerate() {
                                hess[(bi + ja) * p + bj + jb] += coef * xa * xb;
                            }
                        }
                    }
                    if let Some(gi) = gamma_idx {
                        let coef = wsum * prob[gg] * p0;
                        for (ja, xa) in x.iter().enumerate() {
                            hess[(bi + ja) * p + gi] += coef * xa;
                            hess[gi * p + bi + ja] += coef * xa;
                        }
                    }
                }
                if let Some(gi) = gamma_idx {
                    hess[gi * p + gi] += wsum * (1.0 - p0) * p0;
                }
            }
        }
        (value, grad, hess)
    });

    let mut value = 0.0;
    let mut grad = DVector::zeros(p);
    let mut neg_hess = DMatrix::zeros(p, p);
    for (v, gr, h) in partial {
        value += v;
        grad += DVector::from_vec(gr);
        neg_hess += DMatrix::from_row_slice(p, p, &h);
    }
    LogitEval {
        value,
        grad,
        neg_hess,
    }
}

/// Objective value only, for the line search.
fn logit_value(data: &NetworkData, ahat: &Posteriors, beta: &[Vec<f64>], gamma: &[f64]) -> f64 {
    let g = beta.len() + 1;
    let q = gamma.len();
    let n = data.n_nodes();
    let partial = par::map_indexed(n.div_ceil(CHUNK), |c| {
        let mut value = 0.0;
        let mut lin = vec![0.0; g];
        let mut scores = vec![0.0; g];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let x = data.x_row(i);
            for gg in 1..g {
                lin[gg] = dot(x, &beta[gg - 1]);
            }
            for qq in 0..q {
                offset_scores(&lin, gamma[qq], &mut scores);
                let lse = log_sum_exp(&scores);
                for (gg, s) in scores.iter().enumerate() {
                    let a = ahat.ahat(i, gg, qq);
                    if a > 0.0 {
                        value += a * (s - lse);
                    }
                }
            }
        }
        value
    });
    partial.into_iter().sum()
}

/// Solve `A x = rhs` for a symmetric positive semi-definite `A`, adding a
/// growing ridge when the factorization fails.
pub(crate) fn solve_psd(a: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let n = a.nrows();
    let mut ridge = 1e-8;
    while ridge <= 1e-2 {
        log::warn!("{what}: singular system, adding ridge {ridge:e}");
        let reg = a + DMatrix::<f64>::identity(n, n) * ridge;
        if let Some(ch) = reg.cholesky() {
            return Ok(ch.solve(rhs));
        }
        ridge *= 100.0;
    }
    Err(MltaError::Numerical(format!(
        "{what}: system is not positive definite even with ridge"
    )))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton–Raphson maximization of the weighted multinomial logit over
/// `β_2..β_G` and `γ_2..γ_Q` (`γ_1` stays 0), starting from `beta0`, `gamma0`.
/// Steps are halved while the objective would decrease.
pub fn m_step_logit(
    data: &NetworkData,
    ahat: &Posteriors,
    beta0: &[Vec<f64>],
    gamma0: &[f64],
    cfg: NrConfig,
) -> Result<LogitFit> {
    let g = beta0.len() + 1;
    let q = gamma0.len();
    let j = data.n_covariates();
    if g == 1 {
        // Layer offsets do not enter the priors of a single class.
        return Ok(LogitFit {
            beta: Vec::new(),
            gamma: gamma0.to_vec(),
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    let mut gamma_start = gamma0.to_vec();
    gamma_start[0] = 0.0;
    let mut theta = pack(beta0, &gamma_start);
    let (b, gm) = unpack(&theta, g, j, q);
    let mut eval = logit_objective(data, ahat, &b, &gm);
    let mut iterations = 0;
    while iterations < cfg.max_iters && inf_norm(&eval.grad) >= cfg.tol {
        iterations += 1;
        let delta = solve_psd(&eval.neg_hess, &eval.grad, "multinomial logit Newton step")?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + &delta * step;
            let (cb, cg) = unpack(&cand, g, j, q);
            let value = logit_value(data, ahat, &cb, &cg);
            if value.is_finite() && value >= eval.value {
                let ce = logit_objective(data, ahat, &cb, &cg);
                accepted = Some((cand, ce));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, ce)) => {
                theta = cand;
                eval = ce;
            }
            None => break,
        }
    }
    let (beta, gamma) = unpack(&theta, g, j, q);
    if beta.iter().flatten().chain(&gamma).any(|v| !v.is_finite()) {
        return Err(MltaError::Numerical(
            "multinomial logit update produced non-finite coefficients".into(),
        ));
    }
    Ok(LogitFit {
        beta,
        gamma,
        iterations,
        grad_norm: inf_norm(&eval.grad),
    })
}
