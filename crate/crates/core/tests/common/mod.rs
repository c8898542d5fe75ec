#![allow(dead_code)]

pub mod props;

use mlta::{Loadings, NetworkData, Params};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gauss–Hermite rule for `E f(u)`, `u ~ N(0, 1)` (probabilists' weight),
/// from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jac[(k - 1, k)] = off;
        jac[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log Π_k f(y_k | u)` for the logistic latent trait model.
pub fn log_lik_given_u(y: &[u8], b: &[f64], w: &[Vec<f64>], u: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(k, &yk)| {
            let lin = b[k] + w[k].iter().zip(u).map(|(a, c)| a * c).sum::<f64>();
            if yk == 1 {
                log_sigmoid(lin)
            } else {
                log_sigmoid(-lin)
            }
        })
        .sum()
}

/// `∫ Π_k f(y_k | u) N(u; 0, I) du` by tensor-product Gauss–Hermite with
/// `nodes` points per dimension (`D` = 1 or 2).
pub fn marginal_quadrature(y: &[u8], b: &[f64], w: &[Vec<f64>], nodes: usize) -> f64 {
    let d = w[0].len();
    let (x, wt) = gauss_hermite(nodes);
    match d {
        1 => x
            .iter()
            .zip(&wt)
            .map(|(u, a)| a * log_lik_given_u(y, b, w, &[*u]).exp())
            .sum(),
        2 => {
            let mut total = 0.0;
            for (u1, a1) in x.iter().zip(&wt) {
                for (u2, a2) in x.iter().zip(&wt) {
                    total += a1 * a2 * log_lik_given_u(y, b, w, &[*u1, *u2]).exp();
                }
            }
            total
        }
        _ => panic!("quadrature implemented for D <= 2"),
    }
}

/// Random `(y, b, w)` with `R` responses and `D` trait dimensions.
pub fn random_component(rng: &mut ChaCha8Rng, r: usize, d: usize) -> (Vec<u8>, Vec<f64>, Vec<Vec<f64>>) {
    let y = (0..r).map(|_| u8::from(rng.random::<bool>())).collect();
    let b = (0..r).map(|_| 1.5 * normal(rng)).collect();
    let w = (0..r)
        .map(|_| (0..d).map(|_| normal(rng)).collect())
        .collect();
    (y, b, w)
}

/// Network with `layer_sizes`, random ties and `extra` N(1, 1) covariates
/// after the intercept.
pub fn random_network(rng: &mut ChaCha8Rng, layer_sizes: &[usize], r: usize, extra: usize) -> NetworkData {
    let n: usize = layer_sizes.iter().sum();
    let j = extra + 1;
    let y = (0..n * r).map(|_| u8::from(rng.random::<bool>())).collect();
    let mut x = Vec::with_capacity(n * j);
    for _ in 0..n {
        x.push(1.0);
        x.extend((0..extra).map(|_| 1.0 + normal(rng)));
    }
    let ids = (0..layer_sizes.len()).map(|h| format!("h{h}")).collect();
    NetworkData::new(ids, layer_sizes.to_vec(), r, y, j, x).unwrap()
}

/// Random parameters for `G` groups, `Q` layer groups, `D = 1`, per-group
/// loadings, `J` covariates and `R` responses; `γ_1 = 0`.
pub fn random_params(rng: &mut ChaCha8Rng, g: usize, q: usize, j: usize, r: usize) -> Params {
    let beta = (1..g)
        .map(|_| (0..j).map(|_| 0.5 * normal(rng)).collect())
        .collect();
    let b = (0..g)
        .map(|_| (0..r).map(|_| normal(rng)).collect())
        .collect();
    let w = Loadings::PerGroup(
        (0..g)
            .map(|_| (0..r).map(|_| vec![normal(rng)]).collect())
            .collect(),
    );
    let mut gamma: Vec<f64> = (0..q).map(|_| normal(rng)).collect();
    gamma[0] = 0.0;
    let raw: Vec<f64> = (0..q).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    Params {
        beta,
        b,
        w,
        gamma,
        rho: raw.iter().map(|v| v / total).collect(),
    }
}

/// Copy of `data` with a column of zeros appended to the covariates.
pub fn with_zero_covariate(data: &NetworkData) -> NetworkData {
    let j = data.n_covariates();
    let mut x = Vec::with_capacity(data.n_nodes() * (j + 1));
    for i in 0..data.n_nodes() {
        x.extend_from_slice(data.x_row(i));
        x.push(0.0);
    }
    NetworkData::new(
        data.layer_ids().to_vec(),
        data.layer_sizes(),
        data.n_responses(),
        data.y().to_vec(),
        j + 1,
        x,
    )
    .unwrap()
}

/// Class priors from the multinomial logit with reference class 1.
pub fn softmax_prior(x: &[f64], beta: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let mut s = vec![0.0];
    for row in beta {
        s.push(x.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + gamma);
    }
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let t: f64 = e.iter().sum();
    e.iter().map(|v| v / t).collect()
}

/// `(log-likelihood, vhat[h][q], ahat[i][g][q])`.
pub type Enumerated = (f64, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

/// Exact posteriors of the two-level mixture by enumerating every layer
/// group and class assignment, with `f[i][g]` standing in for the
/// component likelihood.
pub fn brute_force(
    data: &NetworkData,
    params: &Params,
    f: &[Vec<f64>],
) -> Enumerated {
    let (n, h) = (data.n_nodes(), data.n_layers());
    let (g, q) = (params.n_groups(), params.n_layer_groups());
    let mut total = 0.0;
    let mut vmass = vec![vec![0.0; q]; h];
    let mut amass = vec![vec![vec![0.0; q]; g]; n];
    let mut v = vec![0usize; h];
    for vcode in 0..q.pow(h as u32) {
        let mut c = vcode;
        for slot in v.iter_mut() {
            *slot = c % q;
            c /= q;
        }
        let mut z = vec![0usize; n];
        for zcode in 0..g.pow(n as u32) {
            let mut c = zcode;
            for slot in z.iter_mut() {
                *slot = c % g;
                c /= g;
            }
            let mut p: f64 = v.iter().map(|&vq| params.rho[vq]).product();
            for i in 0..n {
                let vq = v[data.layer_of(i)];
                p *= softmax_prior(data.x_row(i), &params.beta, params.gamma[vq])[z[i]] * f[i][z[i]];
            }
            total += p;
            for (l, &vq) in v.iter().enumerate() {
                vmass[l][vq] += p;
            }
            for i in 0..n {
                amass[i][z[i]][v[data.layer_of(i)]] += p;
            }
        }
    }
    for row in &mut vmass {
        row.iter_mut().for_each(|m| *m /= total);
    }
    for node in &mut amass {
        node.iter_mut().flatten().for_each(|m| *m /= total);
    }
    (total.ln(), vmass, amass)
}
