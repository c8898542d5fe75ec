//! Recovery metrics against a known truth.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::data::{FitResult, Params};
use crate::em::{fit_multistart, FitConfig};
use crate::error::{MltaError, Result};
use crate::inference::align_fit;
use crate::par;
use crate::simulate::{simulate_network, SimSpec, Truth};
use crate::varcore::logistic;

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index (Hubert–Arabie). Two identical trivial partitions
/// score 1.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MltaError::InvalidInput(format!(
            "label vectors differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| pairs(n)).sum();
    let sa: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sb: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Element-wise squared errors.
pub fn squared_errors(est: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if est.len() != truth.len() {
        return Err(MltaError::InvalidInput(format!(
            "cannot compare {} estimates with {} true values",
            est.len(),
            truth.len()
        )));
    }
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).collect())
}

/// Mean squared error.
pub fn mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    let se = squared_errors(est, truth)?;
    Ok(se.iter().sum::<f64>() / se.len().max(1) as f64)
}

/// Response probabilities at the trait mean, `σ(b_gk)`, as a `G × R` table.
pub fn predicted_probs(params: &Params) -> Vec<Vec<f64>> {
    params
        .b
        .iter()
        .map(|row| row.iter().map(|&v| logistic(v)).collect())
        .collect()
}

/// Recovery of one fit. The `mse_*` vectors hold per-coordinate squared
/// errors of this fit after aligning its labels to the truth (averaging over
/// replicates is left to the caller); `beta` is row-major over
/// `(class 2.., covariate)`, `gamma` holds the contrasts `γ_q − γ_1` for
/// `q ≥ 2`, and `gamma_shifted` compares all support points after the
/// least-squares common shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ari_nodes: f64,
    pub ari_layers: f64,
    pub mse_beta: Vec<f64>,
    pub mse_gamma: Vec<f64>,
    pub mse_gamma_shifted: Vec<f64>,
    pub mse_rho: Vec<f64>,
    pub prob_table: Vec<Vec<f64>>,
    pub prob_true: Vec<Vec<f64>>,
}

pub fn evaluate(fit: &FitResult, truth: &Truth) -> Result<EvalReport> {
    let (fd, td) = (fit.dims, truth.dims);
    if (fd.g, fd.q) != (td.g, td.q) {
        return Err(MltaError::InvalidInput(format!(
            "fit has G = {}, Q = {} but truth has G = {}, Q = {}",
            fd.g, fd.q, td.g, td.q
        )));
    }
    if fit.node_map.len() != truth.node_labels.len() || fit.layer_map.len() != truth.layer_labels.len() {
        return Err(MltaError::InvalidInput(
            "fit and truth describe different networks".into(),
        ));
    }
    let reference = truth.params.gauge_fixed();
    let aligned = align_fit(&reference, fit)?;
    let p = &aligned.params;

    let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<_>>();
    let mse_beta = squared_errors(&flat(&p.beta), &flat(&reference.beta))?;
    let mse_gamma = squared_errors(&p.gamma[1..], &reference.gamma[1..])?;
    let shift = truth
        .params
        .gamma
        .iter()
        .zip(&p.gamma)
        .map(|(t, e)| t - e)
        .sum::<f64>()
        / p.gamma.len() as f64;
    let shifted: Vec<f64> = p.gamma.iter().map(|e| e + shift).collect();
    let mse_gamma_shifted = squared_errors(&shifted, &truth.params.gamma)?;
    let mse_rho = squared_errors(&p.rho, &truth.params.rho)?;

    Ok(EvalReport {
        ari_nodes: ari(&fit.node_map, &truth.node_labels)?,
        ari_layers: ari(&fit.layer_map, &truth.layer_labels)?,
        mse_beta,
        mse_gamma,
        mse_gamma_shifted,
        mse_rho,
        prob_table: predicted_probs(p),
        prob_true: predicted_probs(&truth.params),
    })
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| MltaError::Numerical(format!("cannot serialize report: {e}")))?;
    write_atomic(path.as_ref(), json.as_bytes())
}

/// Outcome of a simulation study: one report per successful replicate.
#[derive(Clone, Debug, Default)]
pub struct Study {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn column_means(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = rows.collect();
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|c| mean(rows.iter().map(|r| r[c]))).collect()
}

impl Study {
    pub fn mean_ari_nodes(&self) -> f64 {
        mean(self.reports.iter().map(|r| r.ari_nodes))
    }

    pub fn mean_ari_layers(&self) -> f64 {
        mean(self.reports.iter().map(|r| r.ari_layers))
    }

    pub fn mse_beta(&self) -> Vec<f64> {
        column_means(self.reports.iter().map(|r| r.mse_beta.clone()))
    }

    pub fn mse_gamma(&self) -> Vec<f64> {
        column_means(self.reports.iter().map(|r| r.mse_gamma.clone()))
    }

    pub fn mse_gamma_shifted(&self) -> Vec<f64> {
        column_means(self.reports.iter().map(|r| r.mse_gamma_shifted.clone()))
    }

    pub fn mse_rho(&self) -> Vec<f64> {
        column_means(self.reports.iter().map(|r| r.mse_rho.clone()))
    }
}

/// Simulate `replicates` networks from `template` (replicate `b` uses seed
/// `template.seed + b`), fit each at the true dimensions with fit seed
/// `cfg.seed + b`, and evaluate against the truth.
pub fn replicate_study(template: &SimSpec, replicates: usize, cfg: &FitConfig) -> Result<Study> {
    template.validate()?;
    let runs = par::map_indexed(replicates, |b| -> Result<EvalReport> {
        let spec = SimSpec {
            seed: template.seed.wrapping_add(b as u64),
            ..template.clone()
        };
        let (data, truth) = simulate_network(&spec)?;
        let fit_cfg = FitConfig {
            seed: cfg.seed.wrapping_add(b as u64),
            ..*cfg
        };
        let fit = fit_multistart(&data, &truth.dims, &fit_cfg)?;
        evaluate(&fit, &truth)
    });
    let mut study = Study::default();
    for (b, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) => study.reports.push(r),
            Err(e) => study.failures.push(format!("replicate {b}: {e}")),
        }
    }
    Ok(study)
}

/// Clustering recovery, one row per scenario.
pub fn ari_table_csv(rows: &[(SimSpec, Study)]) -> String {
    let mut out = String::from("N,R,Q,B,ari_nodes,ari_layers,failed\n");
    for (spec, st) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            spec.n,
            spec.r,
            spec.q,
            st.reports.len(),
            st.mean_ari_nodes(),
            st.mean_ari_layers(),
            st.failures.len()
        ));
    }
    out
}

/// Parameter recovery, one row per scenario and parameter.
pub fn mse_table_csv(rows: &[(SimSpec, Study)]) -> String {
    let mut out = String::from("N,R,Q,parameter,mse\n");
    for (spec, st) in rows {
        let j = st.mse_beta().len() / spec.g.saturating_sub(1).max(1);
        let mut push = |name: String, v: f64| {
            out.push_str(&format!("{},{},{},{name},{v}\n", spec.n, spec.r, spec.q));
        };
        for (c, v) in st.mse_beta().into_iter().enumerate() {
            push(format!("beta_g{}_x{}", c / j + 2, c % j), v);
        }
        for (c, v) in st.mse_gamma().into_iter().enumerate() {
            push(format!("gamma_q{}_minus_q1", c + 2), v);
        }
        for (c, v) in st.mse_gamma_shifted().into_iter().enumerate() {
            push(format!("gamma_q{}_shifted", c + 1), v);
        }
        for (c, v) in st.mse_rho().into_iter().enumerate() {
            push(format!("rho_q{}", c + 1), v);
        }
    }
    out
}
