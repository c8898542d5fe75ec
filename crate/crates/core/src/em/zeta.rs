use nalgebra::{DMatrix, DVector};

use crate::data::{Loadings, NetworkData, VarState};
use crate::error::Result;
use crate::par;
use crate::varcore::lambda_fn;

use super::estep::Posteriors;
use super::logit::solve_psd;

/// Layer-group weights: column means of `vhat`.
pub fn update_rho(post: &Posteriors) -> Vec<f64> {
    let h = post.n_layers();
    let mut rho = vec![0.0; post.q];
    for l in 0..h {
        for (acc, v) in rho.iter_mut().zip(post.vhat_row(l)) {
            *acc += v;
        }
    }
    let total: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|v| *v /= total);
    rho
}

/// Update intercepts `b` and loadings `w` by maximizing the `ẑ`-weighted
/// expected bound at the current trait posteriors and `ξ`.
///
/// Each `(g, k)` solves `A ζ = c` for `ζ = (w_gk, b_gk)` with
/// `A = −2 Σ ẑ λ(ξ) E[α α′]`, `c = Σ ẑ (y − ½) E[α]`, `α = (u, 1)`.
/// With shared loadings, each `k` solves one system over
/// `(w_k, b_1k, …, b_Gk)`.
pub fn update_zeta(
    data: &NetworkData,
    post: &Posteriors,
    var: &VarState,
    parsimonious: bool,
) -> Result<(Vec<Vec<f64>>, Loadings)> {
    let g = post.g;
    let r = data.n_responses();
    let d = var.d;
    let n = data.n_nodes();

    if parsimonious {
        let m = d + g;
        let per_k = par::map_indexed(r, |k| -> Result<DVector<f64>> {
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut c = DVector::<f64>::zeros(m);
            for i in 0..n {
                let half_y = f64::from(data.y_row(i)[k]) - 0.5;
                for gg in 0..g {
                    let z = post.zhat_row(i)[gg];
                    if z == 0.0 {
                        continue;
                    }
                    let s = -2.0 * z * lambda_fn(var.xi(i, gg)[k]);
                    let mu = var.mu(i, gg);
                    let sig = var.sigma(i, gg);
                    let bi = d + gg;
                    for p in 0..d {
                        for t in 0..d {
                            a[(p, t)] += s * (sig[p * d + t] + mu[p] * mu[t]);
                        }
                        a[(p, bi)] += s * mu[p];
                        a[(bi, p)] += s * mu[p];
                        c[p] += z * half_y * mu[p];
                    }
                    a[(bi, bi)] += s;
                    c[bi] += z * half_y;
                }
            }
            solve_psd(&a, &c, "shared loading update")
        });
        let mut b = vec![vec![0.0; r]; g];
        let mut w = vec![vec![0.0; d]; r];
        for (k, sol) in per_k.into_iter().enumerate() {
            let sol = sol?;
            w[k].copy_from_slice(&sol.as_slice()[..d]);
            for (gg, row) in b.iter_mut().enumerate() {
                row[k] = sol[d + gg];
            }
        }
        Ok((b, Loadings::Shared(w)))
    } else {
        let m = d + 1;
        let per_gk = par::map_indexed(g * r, |idx| -> Result<DVector<f64>> {
            let (gg, k) = (idx / r, idx % r);
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut c = DVector::<f64>::zeros(m);
            for i in 0..n {
                let z = post.zhat_row(i)[gg];
                if z == 0.0 {
                    continue;
                }
                let half_y = f64::from(data.y_row(i)[k]) - 0.5;
                let s = -2.0 * z * lambda_fn(var.xi(i, gg)[k]);
                let mu = var.mu(i, gg);
                let sig = var.sigma(i, gg);
                for p in 0..d {
                    for t in 0..d {
                        a[(p, t)] += s * (sig[p * d + t] + mu[p] * mu[t]);
                    }
                    a[(p, d)] += s * mu[p];
                    a[(d, p)] += s * mu[p];
                    c[p] += z * half_y * mu[p];
                }
                a[(d, d)] += s;
                c[d] += z * half_y;
            }
            solve_psd(&a, &c, "loading update")
        });
        let mut b = vec![vec![0.0; r]; g];
        let mut w = vec![vec![vec![0.0; d]; r]; g];
        for (idx, sol) in per_gk.into_iter().enumerate() {
            let sol = sol?;
            let (gg, k) = (idx / r, idx % r);
            w[gg][k].copy_from_slice(&sol.as_slice()[..d]);
            b[gg][k] = sol[d];
        }
        Ok((b, Loadings::PerGroup(w)))
    }
}
