//! Property checks shared by the proptest suite and the acceptance run.
//! Each returns `Err` with a description of the first violation.

use itertools::Itertools;
use mlta::data::VarState;
use mlta::em::{e_step, logit_objective, loglik_at, update_zeta};
use mlta::inference::{apply_alignment, find_alignment, summarize_replicates, Alignment};
use mlta::metrics::ari;
use mlta::varcore::{inner_em, lambda_fn, InnerConfig};
use mlta::{FitConfig, Loadings, NetworkData, Params, Posteriors};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normal, random_network, random_params, rng};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub type Check = Result<(), String>;

/// Small random network, parameters and `ξ`.
pub fn small_case(seed: u64) -> (NetworkData, Params, VarState) {
    let mut rng = rng(seed);
    let h = rng.random_range(1..=4);
    let sizes: Vec<usize> = (0..h).map(|_| rng.random_range(1..=4)).collect();
    let r = rng.random_range(1..=5);
    let data = random_network(&mut rng, &sizes, r, 1);
    let g = rng.random_range(1..=4);
    let q = rng.random_range(1..=h.min(3));
    let params = random_params(&mut rng, g, q, 2, r);
    let mut var = VarState::new(data.n_nodes(), g, r, 1, 1.0);
    for node in &mut var.nodes {
        for v in &mut node.xi {
            *v = rng.random_range(0.05..6.0);
        }
    }
    (data, params, var)
}

/// Variational state with every `(node, group)` run to convergence from a
/// random `ξ`.
pub fn converged_state(data: &NetworkData, params: &Params, d: usize, rng: &mut ChaCha8Rng) -> VarState {
    let g = params.n_groups();
    let r = data.n_responses();
    let mut var = VarState::new(data.n_nodes(), g, r, d, 1.0);
    for i in 0..data.n_nodes() {
        for gg in 0..g {
            let mut xi: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..4.0)).collect();
            let m = inner_em(data.y_row(i), &params.b[gg], params.w.group(gg), &mut xi, InnerConfig::default());
            let node = &mut var.nodes[i];
            node.xi[gg * r..(gg + 1) * r].copy_from_slice(&xi);
            node.mu[gg * d..(gg + 1) * d].copy_from_slice(m.mu.as_slice());
            node.sigma[gg * d * d..(gg + 1) * d * d].copy_from_slice(m.sigma.as_slice());
            node.log_ftilde[gg] = m.log_ftilde;
        }
    }
    var
}

pub fn posterior_identities(seed: u64) -> Check {
    let (data, params, var) = small_case(seed);
    let (post, ll) = e_step(&data, &params, &var).map_err(|e| e.to_string())?;
    ensure!(ll.is_finite() && ll <= 0.0, "log-likelihood {ll}");
    let (g, q) = (post.g, post.q);
    for h in 0..data.n_layers() {
        let s: f64 = post.vhat_row(h).iter().sum();
        ensure!((s - 1.0).abs() < 1e-8, "layer {h}: vhat sums to {s}");
    }
    for i in 0..data.n_nodes() {
        let h = data.layer_of(i);
        let mut total = 0.0;
        for qq in 0..q {
            let col: f64 = (0..g).map(|gg| post.ahat(i, gg, qq)).sum();
            ensure!(
                (col - post.vhat_row(h)[qq]).abs() < 1e-8,
                "node {i}: sum over g of ahat differs from vhat"
            );
            total += col;
        }
        ensure!((total - 1.0).abs() < 1e-8, "node {i}: ahat sums to {total}");
        for gg in 0..g {
            let z: f64 = (0..q).map(|qq| post.ahat(i, gg, qq)).sum();
            ensure!((z - post.zhat_row(i)[gg]).abs() < 1e-8, "node {i}: zhat mismatch");
        }
    }
    Ok(())
}

pub fn gauge_invariance(seed: u64, c: f64) -> Check {
    let (data, params, _) = small_case(seed);
    let cfg = FitConfig::default();
    let (p0, l0) = loglik_at(&data, &params, &cfg).map_err(|e| e.to_string())?;
    let mut shifted = params.clone();
    shifted.gamma.iter_mut().for_each(|v| *v += c);
    shifted.beta.iter_mut().for_each(|row| row[0] -= c);
    let (p1, l1) = loglik_at(&data, &shifted, &cfg).map_err(|e| e.to_string())?;
    ensure!((l0 - l1).abs() <= 1e-8 * l0.abs().max(1.0), "loglik {l0} vs {l1}");
    for (a, b) in p0.ahat.iter().zip(&p1.ahat).chain(p0.vhat.iter().zip(&p1.vhat)) {
        ensure!((a - b).abs() < 1e-8, "posterior {a} vs {b}");
    }
    Ok(())
}

pub fn ari_invariance(a: &[usize], seed: u64) -> Check {
    let mut rng = rng(seed);
    let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
    let mut relabel: Vec<usize> = (0..=*a.iter().max().unwrap_or(&0)).map(|v| v * 7 + 3).collect();
    relabel.shuffle(&mut rng);
    let a2: Vec<usize> = a.iter().map(|&v| relabel[v]).collect();
    let ab = ari(a, &b).map_err(|e| e.to_string())?;
    ensure!((ab - ari(&b, a).unwrap()).abs() < 1e-12, "not symmetric");
    ensure!((ab - ari(&a2, &b).unwrap()).abs() < 1e-12, "not label invariant");
    ensure!((-1.0..=1.0 + 1e-12).contains(&ab), "out of range: {ab}");
    ensure!((ari(a, &a2).unwrap() - 1.0).abs() < 1e-12, "relabeling scores below 1");
    Ok(())
}

fn group_cost(reference: &Params, cand: &Params, perm: &[usize]) -> f64 {
    (0..perm.len())
        .map(|g| {
            reference.b[g]
                .iter()
                .zip(&cand.b[perm[g]])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn layer_cost(reference: &Params, cand: &Params, perm: &[usize]) -> f64 {
    (0..perm.len())
        .map(|q| {
            let c = cand.gamma[perm[q]] - cand.gamma[perm[0]];
            let r = reference.gamma[q] - reference.gamma[0];
            (c - r).powi(2)
        })
        .sum()
}

/// The chosen relabeling of a random `G = 3` candidate costs no more than
/// any of the `G!` (and `Q!`) alternatives.
pub fn alignment_optimal(seed: u64, q: usize) -> Check {
    let mut rng = rng(seed);
    let reference = random_params(&mut rng, 3, q, 2, 4);
    let cand = random_params(&mut rng, 3, q, 2, 4);
    let al = find_alignment(&reference, &cand).map_err(|e| e.to_string())?;
    let best_g = group_cost(&reference, &cand, &al.groups);
    for perm in (0..3).permutations(3) {
        ensure!(best_g <= group_cost(&reference, &cand, &perm) + 1e-12, "{perm:?} beats {:?}", al.groups);
    }
    let best_q = layer_cost(&reference, &cand, &al.layer_groups);
    for perm in (0..q).permutations(q) {
        ensure!(best_q <= layer_cost(&reference, &cand, &perm) + 1e-12, "{perm:?} beats {:?}", al.layer_groups);
    }
    Ok(())
}

/// Relabelings that keep the reference class (any relabeling when `Q = 1`)
/// leave `ℓ̃` unchanged.
pub fn relabel_likelihood(seed: u64) -> Check {
    let (data, params, _) = small_case(seed);
    let mut rng = rng(seed ^ 0x5eed);
    let (g, q) = (params.n_groups(), params.n_layer_groups());
    let mut groups: Vec<usize> = (0..g).collect();
    if q == 1 {
        groups.shuffle(&mut rng);
    } else {
        groups[1..].shuffle(&mut rng);
    }
    let mut layer_groups: Vec<usize> = (0..q).collect();
    layer_groups.shuffle(&mut rng);
    let signs = vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    let al = Alignment {
        groups,
        layer_groups,
        signs,
    };
    let moved = apply_alignment(&params, &al);
    let cfg = FitConfig::default();
    let (_, l0) = loglik_at(&data, &params, &cfg).map_err(|e| e.to_string())?;
    let (_, l1) = loglik_at(&data, &moved, &cfg).map_err(|e| e.to_string())?;
    ensure!((l0 - l1).abs() <= 1e-10 * l0.abs().max(1.0), "{l0} vs {l1} under {al:?}");
    Ok(())
}

pub fn bootstrap_psd(rows: Vec<Vec<f64>>) -> Check {
    let p = rows.first().map_or(0, Vec::len);
    let names = (0..p).map(|i| format!("t{i}")).collect();
    let res = summarize_replicates(names, vec![0.0; p], rows, 0);
    let m = DMatrix::from_row_slice(p, p, &res.covariance);
    ensure!((&m - m.transpose()).amax() < 1e-12, "covariance not symmetric");
    let scale = m.amax().max(1.0);
    let eig = SymmetricEigen::new(m);
    ensure!(
        eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale),
        "negative eigenvalue in {:?}",
        eig.eigenvalues
    );
    for (a, (lo, hi)) in res.ci.iter().enumerate() {
        ensure!(lo <= hi && res.se[a] >= 0.0, "interval {a} malformed");
    }
    Ok(())
}

/// Random posteriors consistent across `ahat`, `zhat` and `vhat`.
pub fn random_posteriors(rng: &mut ChaCha8Rng, layers: &[usize], g: usize, q: usize) -> Posteriors {
    let n: usize = layers.iter().sum();
    let mut vhat = Vec::new();
    for _ in layers {
        let raw: Vec<f64> = (0..q).map(|_| 0.1 + rng.random::<f64>()).collect();
        let t: f64 = raw.iter().sum();
        vhat.extend(raw.iter().map(|v| v / t));
    }
    let mut ahat = vec![0.0; n * g * q];
    let mut zhat = vec![0.0; n * g];
    let mut node = 0;
    for (h, &size) in layers.iter().enumerate() {
        for _ in 0..size {
            for qq in 0..q {
                let raw: Vec<f64> = (0..g).map(|_| 0.05 + rng.random::<f64>()).collect();
                let t: f64 = raw.iter().sum();
                for gg in 0..g {
                    let a = vhat[h * q + qq] * raw[gg] / t;
                    ahat[(node * g + gg) * q + qq] = a;
                    zhat[node * g + gg] += a;
                }
            }
            node += 1;
        }
    }
    Posteriors { g, q, zhat, vhat, ahat }
}

pub fn unpack(theta: &[f64], g: usize, j: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta = (0..g - 1).map(|c| theta[c * j..(c + 1) * j].to_vec()).collect();
    let mut gamma = vec![0.0];
    gamma.extend_from_slice(&theta[(g - 1) * j..]);
    (beta, gamma)
}

/// Analytic logit gradient and Hessian against central differences
/// (step 1e-5, relative error below 1e-4).
pub fn logit_finite_differences(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (g, q, j) = (3, 3, 2);
    let layers = [4, 5, 3];
    let data = random_network(&mut rng, &layers, 2, j - 1);
    let post = random_posteriors(&mut rng, &layers, g, q);
    let theta: Vec<f64> = (0..(g - 1) * j + q - 1).map(|_| 0.7 * normal(&mut rng)).collect();
    let (beta, gamma) = unpack(&theta, g, j);
    let ev = logit_objective(&data, &post, &beta, &gamma);
    let h = 1e-5;
    for p in 0..theta.len() {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[p] += h;
        dn[p] -= h;
        let (bu, gu) = unpack(&up, g, j);
        let (bd, gd) = unpack(&dn, g, j);
        let eu = logit_objective(&data, &post, &bu, &gu);
        let ed = logit_objective(&data, &post, &bd, &gd);
        let fd = (eu.value - ed.value) / (2.0 * h);
        ensure!(
            (fd - ev.grad[p]).abs() <= 1e-4 * ev.grad[p].abs().max(1.0),
            "gradient {p}: analytic {} vs {fd}",
            ev.grad[p]
        );
        for c in 0..theta.len() {
            let fd2 = -(eu.grad[c] - ed.grad[c]) / (2.0 * h);
            let an = ev.neg_hess[(c, p)];
            ensure!((fd2 - an).abs() <= 1e-4 * an.abs().max(1.0), "hessian ({c}, {p}): {an} vs {fd2}");
        }
    }
    Ok(())
}

/// `Σ_i ẑ_ig E[(y−½)(b + wᵀu) + λ(ξ)(b + wᵀu)²]` for one group and
/// response.
pub fn zeta_objective(
    data: &NetworkData,
    post: &Posteriors,
    var: &VarState,
    g: usize,
    k: usize,
    w: &[f64],
    b: f64,
) -> f64 {
    let d = var.d;
    let mut f = 0.0;
    for i in 0..data.n_nodes() {
        let z = post.zhat_row(i)[g];
        let s = f64::from(data.y_row(i)[k]) - 0.5;
        let lam = lambda_fn(var.xi(i, g)[k]);
        let mu = var.mu(i, g);
        let sig = var.sigma(i, g);
        let wmu: f64 = w.iter().zip(mu).map(|(a, c)| a * c).sum();
        let mut quad = 0.0;
        for a in 0..d {
            for c in 0..d {
                quad += w[a] * (sig[a * d + c] + mu[a] * mu[c]) * w[c];
            }
        }
        f += z * (s * (b + wmu) + lam * (b * b + 2.0 * b * wmu + quad));
    }
    f
}

/// Analytic gradient of [`zeta_objective`] in `(w, b)`.
pub fn zeta_gradient(
    data: &NetworkData,
    post: &Posteriors,
    var: &VarState,
    g: usize,
    k: usize,
    w: &[f64],
    b: f64,
) -> (Vec<f64>, f64) {
    let d = var.d;
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    for i in 0..data.n_nodes() {
        let z = post.zhat_row(i)[g];
        let s = f64::from(data.y_row(i)[k]) - 0.5;
        let lam = lambda_fn(var.xi(i, g)[k]);
        let mu = var.mu(i, g);
        let sig = var.sigma(i, g);
        let wmu: f64 = w.iter().zip(mu).map(|(a, c)| a * c).sum();
        gb += z * (s + 2.0 * lam * (b + wmu));
        for a in 0..d {
            let second: f64 = (0..d).map(|c| (sig[a * d + c] + mu[a] * mu[c]) * w[c]).sum();
            gw[a] += z * (s * mu[a] + 2.0 * lam * (b * mu[a] + second));
        }
    }
    (gw, gb)
}

/// After `update_zeta`, the expected bound is stationary in every `(g, k)`
/// block (analytic gradient below 1e-8, central differences below 1e-6),
/// for per-group and shared loadings.
pub fn zeta_stationary(seed: u64, d: usize) -> Check {
    let mut rng = rng(seed);
    let (g, r) = (3, 4);
    let data = random_network(&mut rng, &[8, 7], r, 1);
    let mut params = random_params(&mut rng, g, 1, 2, r);
    params.w = Loadings::PerGroup(
        (0..g)
            .map(|_| (0..r).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect())
            .collect(),
    );
    let var = converged_state(&data, &params, d, &mut rng);
    let (post, _) = e_step(&data, &params, &var).map_err(|e| e.to_string())?;
    let (b, w) = update_zeta(&data, &post, &var, false).map_err(|e| e.to_string())?;
    let h = 1e-5;
    for gg in 0..g {
        for k in 0..r {
            let wk = &w.group(gg)[k];
            let bk = b[gg][k];
            let (gw, gb) = zeta_gradient(&data, &post, &var, gg, k, wk, bk);
            ensure!(gb.abs() < 1e-8 && gw.iter().all(|v| v.abs() < 1e-8), "({gg}, {k}): gradient {gw:?}, {gb}");
            let fd_b = (zeta_objective(&data, &post, &var, gg, k, wk, bk + h)
                - zeta_objective(&data, &post, &var, gg, k, wk, bk - h))
                / (2.0 * h);
            ensure!(fd_b.abs() < 1e-6, "({gg}, {k}): finite-difference b slope {fd_b}");
            for a in 0..d {
                let mut up = wk.clone();
                let mut dn = wk.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (zeta_objective(&data, &post, &var, gg, k, &up, bk)
                    - zeta_objective(&data, &post, &var, gg, k, &dn, bk))
                    / (2.0 * h);
                ensure!(fd.abs() < 1e-6, "({gg}, {k}): finite-difference w slope {fd}");
            }
        }
    }
    let (bs, ws) = update_zeta(&data, &post, &var, true).map_err(|e| e.to_string())?;
    ensure!(ws.is_shared(), "shared update returned per-group loadings");
    for k in 0..r {
        let mut total = vec![0.0; d];
        for gg in 0..g {
            let (gw, gb) = zeta_gradient(&data, &post, &var, gg, k, &ws.group(gg)[k], bs[gg][k]);
            ensure!(gb.abs() < 1e-8, "shared ({gg}, {k}): b gradient {gb}");
            for a in 0..d {
                total[a] += gw[a];
            }
        }
        ensure!(total.iter().all(|v| v.abs() < 1e-8), "shared k = {k}: w gradient {total:?}");
    }
    Ok(())
}

/// Consecutive `ℓ̃` values never fall by more than `1e-6` relative.
pub fn monotone(trace: &[f64]) -> Check {
    for (t, w) in trace.windows(2).enumerate() {
        ensure!(w[1] >= w[0] - 1e-6 * w[0].abs(), "iteration {}: {} -> {}", t + 1, w[0], w[1]);
    }
    Ok(())
}
