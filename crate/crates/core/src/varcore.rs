//! Variational machinery for the logistic latent trait model.
//!
//! Each Bernoulli likelihood `σ(A)` with `A = (2y − 1)(b + w′u)` is replaced
//! by the Jaakkola–Jordan lower bound
//! `g(ξ) exp{(A − ξ)/2 + λ(ξ)(A² − ξ²)}`, which is quadratic in `u` and
//! therefore conjugate to the `N(0, I)` trait prior. Integrating it gives a
//! Gaussian trait posterior `N(μ, Σ)` and a closed-form bound on the
//! marginal likelihood of a response row.

use nalgebra::{DMatrix, DVector};

/// Below this `|ξ|` the analytic limit of `λ` is used.
const LAMBDA_SWITCH: f64 = 1e-6;
/// Smallest `ξ` returned by the fixed-point update.
pub const XI_FLOOR: f64 = 1e-6;

/// `1 / (1 + e^{−x})`, evaluated without overflow for either sign.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = −log(1 + e^{−x})`.
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `λ(ξ) = (1/2 − σ(ξ)) / (2ξ) = −tanh(ξ/2) / (4ξ)`; even, negative, with
/// limit `−1/8` at zero.
pub fn lambda_fn(xi: f64) -> f64 {
    if xi.abs() < LAMBDA_SWITCH {
        -0.125
    } else {
        -(0.5 * xi).tanh() / (4.0 * xi)
    }
}

/// Gaussian trait posterior and log-bound for one node under one group.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// `log f̃(y | z = g, ξ)`; never above 0.
    pub log_ftilde: f64,
}

/// `(λ(ξ), log σ(ξ))` from one `expm1` and one `ln_1p`, for `ξ ≥ 0`.
#[inline]
fn lambda_and_log_g(xi: f64) -> (f64, f64) {
    let em = (-xi).exp_m1();
    let log_g = -(1.0 + em).ln_1p();
    let lam = if xi < LAMBDA_SWITCH {
        -0.125
    } else {
        // tanh(ξ/2) = (1 − e^{−ξ}) / (1 + e^{−ξ})
        em / (2.0 + em) / (4.0 * xi)
    };
    (lam, log_g)
}

/// Scratch space for [`moments_into`]; `D × D` matrices are row-major.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    d: usize,
    prec: Vec<f64>,
    lin: Vec<f64>,
    pub(crate) mu: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(d: usize) -> Self {
        Workspace {
            d,
            prec: vec![0.0; d * d],
            lin: vec![0.0; d],
            mu: vec![0.0; d],
            sigma: vec![0.0; d * d],
            tmp: vec![0.0; d],
        }
    }

    fn to_moments(&self, log_ftilde: f64) -> ComponentMoments {
        ComponentMoments {
            mu: DVector::from_column_slice(&self.mu),
            sigma: DMatrix::from_row_slice(self.d, self.d, &self.sigma),
            log_ftilde,
        }
    }
}

/// In-place lower Cholesky factor of a row-major SPD matrix; `false` if a
/// pivot is not positive and finite.
fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0 && s.is_finite()) {
            return false;
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut t = a[i * d + j];
            for k in 0..j {
                t -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = t / l;
        }
    }
    true
}

/// Solve `L L′ x = rhs` in place.
fn cholesky_solve(l: &[f64], d: usize, x: &mut [f64]) {
    for i in 0..d {
        let mut t = x[i];
        for k in 0..i {
            t -= l[i * d + k] * x[k];
        }
        x[i] = t / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut t = x[i];
        for k in i + 1..d {
            t -= l[k * d + i] * x[k];
        }
        x[i] = t / l[i * d + i];
    }
}

/// Fill `ws.mu` and `ws.sigma` and return `log f̃` (NaN on failure).
pub(crate) fn moments_into(y: &[u8], xi: &[f64], b: &[f64], w: &[Vec<f64>], ws: &mut Workspace) -> f64 {
    let r = y.len();
    debug_assert!(xi.len() == r && b.len() == r && w.len() == r);
    let d = ws.d;
    ws.prec.fill(0.0);
    for a in 0..d {
        ws.prec[a * d + a] = 1.0;
    }
    ws.lin.fill(0.0);
    let mut constant = 0.0;
    for k in 0..r {
        let (lam, log_g) = lambda_and_log_g(xi[k]);
        let half_y = f64::from(y[k]) - 0.5;
        let wk = &w[k];
        let lin_coef = half_y + 2.0 * lam * b[k];
        for a in 0..d {
            let s = -2.0 * lam * wk[a];
            for c in 0..=a {
                ws.prec[a * d + c] += s * wk[c];
            }
            ws.lin[a] += lin_coef * wk[a];
        }
        constant += log_g + half_y * b[k] - 0.5 * xi[k] + lam * (b[k] * b[k] - xi[k] * xi[k]);
    }
    if !cholesky_in_place(&mut ws.prec, d) {
        ws.mu.fill(f64::NAN);
        ws.sigma.fill(f64::NAN);
        return f64::NAN;
    }
    let l = &ws.prec;
    ws.mu.copy_from_slice(&ws.lin);
    cholesky_solve(l, d, &mut ws.mu);
    for c in 0..d {
        ws.tmp.fill(0.0);
        ws.tmp[c] = 1.0;
        cholesky_solve(l, d, &mut ws.tmp);
        for a in 0..d {
            ws.sigma[a * d + c] = ws.tmp[a];
        }
    }
    let log_det_prec: f64 = 2.0 * (0..d).map(|a| l[a * d + a].ln()).sum::<f64>();
    // μ′Pμ = c′μ since Pμ = c.
    let quad: f64 = ws.lin.iter().zip(&ws.mu).map(|(c, m)| c * m).sum();
    constant + 0.5 * quad - 0.5 * log_det_prec
}

/// Closed-form posterior moments and bound for responses `y`, variational
/// parameters `xi`, intercepts `b` and loading rows `w` (`R` rows of `D`).
///
/// Precision `P = I − 2 Σ_k λ(ξ_k) w_k w_k′`, `Σ = P⁻¹`,
/// `μ = Σ Σ_k [(y_k − ½) + 2λ(ξ_k) b_k] w_k`.
///
/// `P` is `I` plus a positive semi-definite matrix, so its factorization
/// only fails on non-finite input; the result is then all-NaN and the
/// caller's finiteness checks reject it.
pub fn component_moments(y: &[u8], xi: &[f64], b: &[f64], w: &[Vec<f64>]) -> ComponentMoments {
    let mut ws = Workspace::new(w.first().map_or(0, Vec::len));
    let lf = moments_into(y, xi, b, w, &mut ws);
    ws.to_moments(lf)
}

/// Fixed-point update `ξ_k = sqrt(E[(b_k + w_k′u)²])` under `N(μ, Σ)`.
pub fn update_xi(b: &[f64], w: &[Vec<f64>], moments: &ComponentMoments) -> Vec<f64> {
    let d = moments.mu.len();
    let sigma: Vec<f64> = moments.sigma.transpose().as_slice().to_vec();
    let mut xi = vec![0.0; b.len()];
    update_xi_into(b, w, moments.mu.as_slice(), &sigma, d, &mut xi);
    xi
}

fn update_xi_into(b: &[f64], w: &[Vec<f64>], mu: &[f64], sigma: &[f64], d: usize, xi: &mut [f64]) {
    for (k, out) in xi.iter_mut().enumerate() {
        let wk = &w[k];
        let mut mean = b[k];
        let mut var = 0.0;
        for a in 0..d {
            mean += wk[a] * mu[a];
            let mut row = 0.0;
            for c in 0..d {
                row += sigma[a * d + c] * wk[c];
            }
            var += wk[a] * row;
        }
        let sq = mean * mean + var;
        assert!(
            !(sq < -1e-12),
            "negative second moment {sq} in variational update"
        );
        *out = sq.max(0.0).sqrt().max(XI_FLOOR);
    }
}

/// Iteration budget for the nested (per node and group) EM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the bound falls below this.
    pub rel_tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            max_iters: 100,
            rel_tol: 1e-8,
        }
    }
}

/// Workspace form of [`inner_em`]: leaves the final moments in `ws` and
/// returns `log f̃`.
pub(crate) fn inner_em_into(
    y: &[u8],
    b: &[f64],
    w: &[Vec<f64>],
    xi: &mut [f64],
    cfg: InnerConfig,
    ws: &mut Workspace,
) -> f64 {
    let d = ws.d;
    let mut lf = moments_into(y, xi, b, w, ws);
    for _ in 0..cfg.max_iters.max(1) {
        if !lf.is_finite() {
            break;
        }
        update_xi_into(b, w, &ws.mu, &ws.sigma, d, xi);
        let next = moments_into(y, xi, b, w, ws);
        let change = (next - lf).abs();
        let scale = lf.abs().max(f64::MIN_POSITIVE);
        lf = next;
        if change <= cfg.rel_tol * scale {
            break;
        }
    }
    lf
}

/// Alternate [`component_moments`] and [`update_xi`], updating `xi` in
/// place, and return the moments for the final `xi`. The bound never
/// decreases from one alternation to the next.
pub fn inner_em(
    y: &[u8],
    b: &[f64],
    w: &[Vec<f64>],
    xi: &mut [f64],
    cfg: InnerConfig,
) -> ComponentMoments {
    let mut ws = Workspace::new(w.first().map_or(0, Vec::len));
    let lf = inner_em_into(y, b, w, xi, cfg, &mut ws);
    ws.to_moments(lf)
}
