//! Nonparametric bootstrap within layers, with label alignment of the
//! replicate estimates.

use std::path::Path;

use itertools::Itertools;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::atomic::write_atomic;
use crate::data::{argmax, FitResult, Loadings, ModelDims, NetworkData, Params};
use crate::em::{fit_multistart, fit_one, start_rng, FitConfig};
use crate::error::{MltaError, Result};
use crate::par;

/// Largest `G` (and `Q`) handled by exhaustive permutation search.
pub const MAX_EXHAUSTIVE_LABELS: usize = 8;
/// Largest tolerated share of failed bootstrap replicates.
const MAX_FAILED_SHARE: f64 = 0.2;

/// Draw `n_h` rows with replacement inside every layer `h`.
pub fn resample_within_layers(data: &NetworkData, rng: &mut ChaCha8Rng) -> NetworkData {
    let mut rows = Vec::with_capacity(data.n_nodes());
    for h in 0..data.n_layers() {
        let range = data.layer_range(h);
        for _ in 0..range.len() {
            rows.push(rng.random_range(range.clone()));
        }
    }
    data.select_rows(&rows)
        .expect("resampling preserves layer sizes and values")
}

/// Relabeling of a candidate: new group `g` is old group `groups[g]`, new
/// layer group `q` is old `layer_groups[q]`, and trait dimension `a` is
/// multiplied by `signs[a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub groups: Vec<usize>,
    pub layer_groups: Vec<usize>,
    pub signs: Vec<f64>,
}

fn group_cost(reference: &Params, cand: &Params, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(g, &src)| {
            reference.b[g]
                .iter()
                .zip(&cand.b[src])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn layer_cost(reference: &[f64], cand: &[f64], perm: &[usize]) -> f64 {
    let anchor = cand[perm[0]];
    perm.iter()
        .enumerate()
        .map(|(q, &src)| (cand[src] - anchor - reference[q]).powi(2))
        .sum()
}

fn best_permutation(n: usize, cost: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut best = (f64::INFINITY, (0..n).collect::<Vec<_>>());
    for perm in (0..n).permutations(n) {
        let c = cost(&perm);
        if c < best.0 {
            best = (c, perm);
        }
    }
    best.1
}

/// Find the relabeling of `cand` closest to `reference`: group permutation
/// by Frobenius distance of the intercept matrices, layer-group permutation
/// by squared distance of the re-pinned support points, and per-dimension
/// loading signs.
pub fn find_alignment(reference: &Params, cand: &Params) -> Result<Alignment> {
    let g = reference.n_groups();
    let q = reference.n_layer_groups();
    if cand.n_groups() != g || cand.n_layer_groups() != q {
        return Err(MltaError::InvalidInput(
            "cannot align parameters of different dimensions".into(),
        ));
    }
    if g > MAX_EXHAUSTIVE_LABELS || q > MAX_EXHAUSTIVE_LABELS {
        return Err(MltaError::InvalidInput(format!(
            "label alignment is exhaustive and limited to {MAX_EXHAUSTIVE_LABELS} groups; \
             larger G or Q needs an assignment solver"
        )));
    }
    let groups = best_permutation(g, |p| group_cost(reference, cand, p));
    let ref_gamma: Vec<f64> = reference.gamma.iter().map(|v| v - reference.gamma[0]).collect();
    let layer_groups = best_permutation(q, |p| layer_cost(&ref_gamma, &cand.gamma, p));

    let permuted = permute(cand, &groups, &layer_groups);
    let d = reference.w.group(0).first().map_or(0, Vec::len);
    let signs = (0..d)
        .map(|a| {
            let (mut same, mut flip) = (0.0, 0.0);
            for gg in 0..g {
                for (rw, cw) in reference.w.group(gg).iter().zip(permuted.w.group(gg)) {
                    same += (rw[a] - cw[a]).powi(2);
                    flip += (rw[a] + cw[a]).powi(2);
                }
            }
            if flip < same {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    Ok(Alignment {
        groups,
        layer_groups,
        signs,
    })
}

fn permute(cand: &Params, groups: &[usize], layer_groups: &[usize]) -> Params {
    // Full score offsets per class, reference class at 0.
    let j = cand.beta.first().map_or(0, Vec::len);
    let full = |g: usize| -> Vec<f64> {
        if g == 0 {
            vec![0.0; j]
        } else {
            cand.beta[g - 1].clone()
        }
    };
    let anchor = full(groups[0]);
    let gamma_anchor = cand.gamma[layer_groups[0]];
    let beta = groups
        .iter()
        .skip(1)
        .map(|&src| {
            let mut row: Vec<f64> = full(src).iter().zip(&anchor).map(|(a, b)| a - b).collect();
            row[0] += gamma_anchor;
            row
        })
        .collect();
    let b = groups.iter().map(|&src| cand.b[src].clone()).collect();
    let w = match &cand.w {
        Loadings::Shared(w) => Loadings::Shared(w.clone()),
        Loadings::PerGroup(w) => Loadings::PerGroup(groups.iter().map(|&src| w[src].clone()).collect()),
    };
    let gamma = layer_groups
        .iter()
        .map(|&src| cand.gamma[src] - gamma_anchor)
        .collect();
    let rho = layer_groups.iter().map(|&src| cand.rho[src]).collect();
    Params {
        beta,
        b,
        w,
        gamma,
        rho,
    }
}

/// Apply an alignment to parameters.
///
/// Moving the reference class re-expresses the logit coefficients as
/// contrasts against the new reference; the layer offsets cannot follow
/// that change exactly, so the relabeled model is only equivalent when
/// `groups[0] == 0`. Layer-group permutations and loading sign flips are
/// always exact.
pub fn apply_alignment(cand: &Params, al: &Alignment) -> Params {
    let mut p = permute(cand, &al.groups, &al.layer_groups);
    let flip = |rows: &mut Vec<Vec<f64>>| {
        for row in rows {
            for (v, s) in row.iter_mut().zip(&al.signs) {
                *v *= s;
            }
        }
    };
    match &mut p.w {
        Loadings::Shared(w) => flip(w),
        Loadings::PerGroup(w) => w.iter_mut().for_each(flip),
    }
    p
}

/// Relabel `cand` to best match `reference`.
pub fn align_labels(reference: &Params, cand: &Params) -> Result<Params> {
    Ok(apply_alignment(cand, &find_alignment(reference, cand)?))
}

/// Relabel a whole fit (parameters, posteriors and MAP labels).
pub fn align_fit(reference: &Params, fit: &FitResult) -> Result<FitResult> {
    let al = find_alignment(reference, &fit.params)?;
    let mut out = fit.clone();
    out.params = apply_alignment(&fit.params, &al);
    out.zhat = fit
        .zhat
        .iter()
        .map(|row| al.groups.iter().map(|&src| row[src]).collect())
        .collect();
    out.vhat = fit
        .vhat
        .iter()
        .map(|row| al.layer_groups.iter().map(|&src| row[src]).collect())
        .collect();
    out.node_map = out.zhat.iter().map(|z| argmax(z)).collect();
    out.layer_map = out.vhat.iter().map(|v| argmax(v)).collect();
    Ok(out)
}

/// Flatten parameters in a fixed order, with names. `γ_1` is omitted (it is
/// pinned at 0). Labels are 1-based.
pub fn param_vector(p: &Params) -> (Vec<String>, Vec<f64>) {
    let mut names = Vec::new();
    let mut vals = Vec::new();
    for (g, row) in p.beta.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            names.push(format!("beta_g{}_x{}", g + 2, j));
            vals.push(*v);
        }
    }
    for (g, row) in p.b.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            names.push(format!("b_g{}_k{}", g + 1, k + 1));
            vals.push(*v);
        }
    }
    match &p.w {
        Loadings::Shared(w) => {
            for (k, row) in w.iter().enumerate() {
                for (a, v) in row.iter().enumerate() {
                    names.push(format!("w_k{}_d{}", k + 1, a + 1));
                    vals.push(*v);
                }
            }
        }
        Loadings::PerGroup(w) => {
            for (g, m) in w.iter().enumerate() {
                for (k, row) in m.iter().enumerate() {
                    for (a, v) in row.iter().enumerate() {
                        names.push(format!("w_g{}_k{}_d{}", g + 1, k + 1, a + 1));
                        vals.push(*v);
                    }
                }
            }
        }
    }
    for (q, v) in p.gamma.iter().enumerate().skip(1) {
        names.push(format!("gamma_q{}", q + 1));
        vals.push(*v);
    }
    for (q, v) in p.rho.iter().enumerate() {
        names.push(format!("rho_q{}", q + 1));
        vals.push(*v);
    }
    (names, vals)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Refit every replicate from random starts instead of warm-starting at
    /// the point estimate.
    pub multistart: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    /// Point estimate being assessed.
    pub estimate: Vec<f64>,
    /// One aligned parameter vector per successful replicate.
    pub estimates: Vec<Vec<f64>>,
    /// `(1/S) Σ (θ_s − θ̄)(θ_s − θ̄)′`, row-major.
    pub covariance: Vec<f64>,
    pub se: Vec<f64>,
    /// Percentile 95% intervals.
    pub ci: Vec<(f64, f64)>,
    pub n_failed: usize,
}

impl BootstrapResult {
    pub fn replicates(&self) -> usize {
        self.estimates.len()
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarize aligned replicate vectors: covariance with divisor `S`,
/// standard errors and percentile intervals.
pub fn summarize_replicates(
    names: Vec<String>,
    estimate: Vec<f64>,
    estimates: Vec<Vec<f64>>,
    n_failed: usize,
) -> BootstrapResult {
    let p = estimate.len();
    let s = estimates.len();
    let mut mean = vec![0.0; p];
    for row in &estimates {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / s as f64;
        }
    }
    let mut covariance = vec![0.0; p * p];
    for row in &estimates {
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in 0..p {
                covariance[a * p + b] += da * (row[b] - mean[b]) / s as f64;
            }
        }
    }
    let se = (0..p).map(|a| covariance[a * p + a].max(0.0).sqrt()).collect();
    let ci = (0..p)
        .map(|a| {
            let mut col: Vec<f64> = estimates.iter().map(|r| r[a]).collect();
            col.sort_by(f64::total_cmp);
            (quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975))
        })
        .collect();
    BootstrapResult {
        names,
        estimate,
        estimates,
        covariance,
        se,
        ci,
        n_failed,
    }
}

/// Bootstrap standard errors for `fitted`: every replicate resamples rows
/// within layers (RNG substream `s` of `cfg.seed`), refits at fixed
/// dimensions, and is aligned to the point estimate.
pub fn bootstrap_se(
    data: &NetworkData,
    dims: &ModelDims,
    fitted: &FitResult,
    boot: BootstrapConfig,
    cfg: &FitConfig,
) -> Result<BootstrapResult> {
    if boot.replicates == 0 {
        return Err(MltaError::InvalidInput("need at least one replicate".into()));
    }
    let (names, estimate) = param_vector(&fitted.params);
    let reps = par::map_indexed(boot.replicates, |s| -> Result<Vec<f64>> {
        let mut rng = start_rng(cfg.seed, s as u64);
        let sample = resample_within_layers(data, &mut rng);
        let fit = if boot.multistart {
            let rep_cfg = FitConfig {
                seed: rng.random(),
                ..*cfg
            };
            fit_multistart(&sample, dims, &rep_cfg)?
        } else {
            fit_one(&sample, dims, &fitted.params, cfg)?
        };
        let aligned = align_labels(&fitted.params, &fit.params)?;
        Ok(param_vector(&aligned).1)
    });
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in reps.into_iter().enumerate() {
        match r {
            Ok(v) => estimates.push(v),
            Err(e) => failures.push(format!("replicate {s}: {e}")),
        }
    }
    if failures.len() as f64 > MAX_FAILED_SHARE * boot.replicates as f64 || estimates.is_empty() {
        return Err(MltaError::Numerical(format!(
            "{} of {} bootstrap replicates failed: {}",
            failures.len(),
            boot.replicates,
            failures.join("; ")
        )));
    }
    Ok(summarize_replicates(names, estimate, estimates, failures.len()))
}

/// `bootstrap.csv`: `name,estimate,se,ci_lo,ci_hi`.
pub fn bootstrap_csv(res: &BootstrapResult) -> String {
    let mut out = String::from("name,estimate,se,ci_lo,ci_hi\n");
    for (a, name) in res.names.iter().enumerate() {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            res.estimate[a], res.se[a], res.ci[a].0, res.ci[a].1
        ));
    }
    out
}

pub fn write_bootstrap(res: &BootstrapResult, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), bootstrap_csv(res).as_bytes())
}
