//! Synthetic multi-layer networks drawn from the model, with ground truth.
//!
//! The default truth is the three-group design: logit coefficients
//! `β_2 = (1, −0.4)`, `β_3 = (1.5, −0.9)` on an intercept and one
//! `N(1, 1)` covariate, intercept rows `b_g ~ N(m_g 1, I)` with
//! `m = (−3, 0, 3)`, loadings shared across groups and drawn from `N(0, 1)`,
//! and layer effects `γ = (−0.5, 1.5)`, `ρ = (0.3, 0.7)` for two layer
//! groups or `γ = (−0.5, 1.5, 2.5)` with equal weights for three.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::data::{Loadings, ModelDims, NetworkData, Params};
use crate::em::ClassPriors;
use crate::error::{MltaError, Result};
use crate::varcore::logistic;

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    /// Total sending nodes, split evenly over the `h` layers.
    pub n: usize,
    pub r: usize,
    pub h: usize,
    pub g: usize,
    pub d: usize,
    pub q: usize,
    pub beta: Option<Vec<Vec<f64>>>,
    pub gamma: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub w: Option<Loadings>,
    pub seed: u64,
}

impl SimSpec {
    /// The default design with `G = 3`, `D = 1` and `H = 20`.
    pub fn standard(n: usize, r: usize, q: usize, seed: u64) -> Self {
        SimSpec {
            n,
            r,
            h: 20,
            g: 3,
            d: 1,
            q,
            beta: None,
            gamma: None,
            rho: None,
            b: None,
            w: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n, self.r, self.h, self.g, self.d, self.q].contains(&0) {
            return Err(MltaError::InvalidInput(
                "simulation dimensions must be positive".into(),
            ));
        }
        if !self.n.is_multiple_of(self.h) {
            return Err(MltaError::InvalidInput(format!(
                "N = {} is not divisible by H = {}",
                self.n, self.h
            )));
        }
        Ok(())
    }
}

/// Generating parameters and the realized memberships (0-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub dims: ModelDims,
    pub params: Params,
    pub node_labels: Vec<usize>,
    pub layer_labels: Vec<usize>,
}

/// Fill in every parameter not given explicitly in `spec`.
pub fn default_truth(spec: &SimSpec, rng: &mut ChaCha8Rng) -> Result<Params> {
    let beta = match &spec.beta {
        Some(b) => b.clone(),
        None if spec.g == 3 => vec![vec![1.0, -0.4], vec![1.5, -0.9]],
        None => {
            return Err(MltaError::InvalidInput(format!(
                "the default design needs G = 3 (got {}); pass explicit beta",
                spec.g
            )))
        }
    };
    if beta.len() != spec.g - 1 || beta.iter().any(|r| r.is_empty() || r.len() != beta[0].len()) {
        return Err(MltaError::InvalidInput(
            "beta needs G − 1 rows of equal, positive length".into(),
        ));
    }
    let (gamma, rho) = match (&spec.gamma, &spec.rho) {
        (Some(g), Some(r)) => (g.clone(), r.clone()),
        (None, None) => match spec.q {
            1 => (vec![0.0], vec![1.0]),
            2 => (vec![-0.5, 1.5], vec![0.3, 0.7]),
            3 => (vec![-0.5, 1.5, 2.5], vec![0.33, 0.33, 0.33]),
            q => {
                return Err(MltaError::InvalidInput(format!(
                    "no default layer effects for Q = {q}; pass gamma and rho"
                )))
            }
        },
        _ => {
            return Err(MltaError::InvalidInput(
                "gamma and rho must be given together".into(),
            ))
        }
    };
    if gamma.len() != spec.q || rho.len() != spec.q || rho.iter().any(|p| !(*p >= 0.0)) {
        return Err(MltaError::InvalidInput(
            "gamma and rho need Q non-negative-weight entries".into(),
        ));
    }
    let total: f64 = rho.iter().sum();
    let rho: Vec<f64> = rho.iter().map(|p| p / total).collect();

    let b = match &spec.b {
        Some(b) => b.clone(),
        None => (0..spec.g)
            .map(|g| {
                let mean = if spec.g == 1 {
                    0.0
                } else {
                    -3.0 + 6.0 * g as f64 / (spec.g - 1) as f64
                };
                (0..spec.r)
                    .map(|_| mean + Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect()
            })
            .collect(),
    };
    let w = match &spec.w {
        Some(w) => w.clone(),
        None => Loadings::Shared(
            (0..spec.r)
                .map(|_| (0..spec.d).map(|_| StandardNormal.sample(rng)).collect())
                .collect(),
        ),
    };
    let params = Params {
        beta,
        b,
        w,
        gamma,
        rho,
    };
    let dims = ModelDims::new(spec.g, spec.d, spec.q, params.w.is_shared());
    let j = params.beta.first().map_or(2, Vec::len);
    params.check_shape(&dims, j, spec.r)?;
    Ok(params)
}

/// Draw a network: layer groups from `ρ`, covariates from `N(1, 1)`, groups
/// from the logit priors at the layer's `γ`, traits from `N(0, I)` and ties
/// from the logistic latent trait model.
pub fn simulate_network(spec: &SimSpec) -> Result<(NetworkData, Truth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = default_truth(spec, &mut rng)?;
    let j = params.beta.first().map_or(2, Vec::len);
    let (g, q, r, d) = (spec.g, spec.q, spec.r, spec.d);
    let per_layer = spec.n / spec.h;
    let covariate = Normal::new(1.0, 1.0).expect("valid normal");
    let layer_dist = WeightedIndex::new(&params.rho)
        .map_err(|e| MltaError::InvalidInput(format!("rho: {e}")))?;

    let mut y = Vec::with_capacity(spec.n * r);
    let mut x = Vec::with_capacity(spec.n * j);
    let mut node_labels = Vec::with_capacity(spec.n);
    let mut layer_labels = Vec::with_capacity(spec.h);
    let mut xrow = vec![0.0; j];
    let mut u = vec![0.0; d];
    for _ in 0..spec.h {
        let v = layer_dist.sample(&mut rng);
        layer_labels.push(v);
        for _ in 0..per_layer {
            xrow[0] = 1.0;
            for xv in xrow.iter_mut().skip(1) {
                *xv = covariate.sample(&mut rng);
            }
            let eta = node_prior(&xrow, &params.beta, params.gamma[v]);
            let z = WeightedIndex::new(&eta)
                .map_err(|e| MltaError::Numerical(format!("class prior: {e}")))?
                .sample(&mut rng);
            for uv in u.iter_mut() {
                *uv = StandardNormal.sample(&mut rng);
            }
            let w = params.w.group(z);
            for k in 0..r {
                let lin = params.b[z][k] + w[k].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                y.push(u8::from(rng.random::<f64>() < logistic(lin)));
            }
            x.extend_from_slice(&xrow);
            node_labels.push(z);
        }
    }
    let ids = (1..=spec.h).map(|h| format!("L{h:02}")).collect();
    let data = NetworkData::new(ids, vec![per_layer; spec.h], r, y, j, x)?;
    let dims = ModelDims::new(g, d, q, params.w.is_shared());
    Ok((
        data,
        Truth {
            dims,
            params,
            node_labels,
            layer_labels,
        },
    ))
}

fn node_prior(x: &[f64], beta: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let mut scores = vec![0.0];
    scores.extend(
        beta.iter()
            .map(|b| x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>() + gamma),
    );
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|v| v / t).collect()
}

/// Average prior class probabilities over the nodes, each at its layer's
/// group, from precomputed priors.
pub fn expected_class_frequencies(priors: &ClassPriors, node_layer_group: &[usize]) -> Vec<f64> {
    let n = node_layer_group.len();
    let mut out = vec![0.0; priors.g];
    for (i, &q) in node_layer_group.iter().enumerate() {
        for (g, o) in out.iter_mut().enumerate() {
            *o += priors.eta(i, g, q) / n as f64;
        }
    }
    out
}

pub fn write_truth(truth: &Truth, path: impl AsRef<Path>) -> Result<()> {
    let text =
        serde_json::to_string_pretty(truth).map_err(|e| MltaError::Schema(e.to_string()))?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MltaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MltaError::Schema(e.to_string()))
}
