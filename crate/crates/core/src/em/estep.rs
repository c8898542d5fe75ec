use crate::data::{NetworkData, Params, VarState};
use crate::error::{MltaError, Result};
use crate::par;
use crate::varcore::component_moments;

use super::priors::{class_priors, log_sum_exp};

/// Posterior expectations from one E-step.
///
/// `zhat` is `(node, g)`, `vhat` is `(layer, q)` and `ahat` is
/// `(node, g, q)`, all row-major. `zhat` is the marginal of `ahat` over `q`,
/// so it conditions on the node's whole layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub g: usize,
    pub q: usize,
    pub zhat: Vec<f64>,
    pub vhat: Vec<f64>,
    pub ahat: Vec<f64>,
}

impl Posteriors {
    pub fn zhat_row(&self, node: usize) -> &[f64] {
        &self.zhat[node * self.g..(node + 1) * self.g]
    }

    pub fn vhat_row(&self, layer: usize) -> &[f64] {
        &self.vhat[layer * self.q..(layer + 1) * self.q]
    }

    pub fn ahat(&self, node: usize, g: usize, q: usize) -> f64 {
        self.ahat[(node * self.g + g) * self.q + q]
    }

    pub fn n_nodes(&self) -> usize {
        self.zhat.len() / self.g
    }

    pub fn n_layers(&self) -> usize {
        self.vhat.len() / self.q
    }
}

/// Recompute `log f̃` for every node and group at the current `ξ`.
pub fn refresh_bounds(data: &NetworkData, params: &Params, var: &VarState) -> Vec<f64> {
    let g = params.n_groups();
    let per_node = par::map_indexed(data.n_nodes(), |i| {
        (0..g)
            .map(|gg| {
                component_moments(data.y_row(i), var.xi(i, gg), &params.b[gg], params.w.group(gg))
                    .log_ftilde
            })
            .collect::<Vec<_>>()
    });
    per_node.concat()
}

/// E-step at the current variational parameters: returns the posteriors and
/// the approximate log-likelihood `ℓ̃`.
pub fn e_step(data: &NetworkData, params: &Params, var: &VarState) -> Result<(Posteriors, f64)> {
    let bounds = refresh_bounds(data, params, var);
    posteriors_from_bounds(data, params, &bounds)
}

struct LayerPart {
    log_lik: f64,
    vhat: Vec<f64>,
    /// Per node in the layer: `p(z = g | y, v = q)` with layout `(g, q)`.
    cond: Vec<f64>,
}

/// E-step given precomputed bounds `log f̃` with layout `(node, g)`.
///
/// Sums over mixture components run in log space; the per-layer products
/// over nodes are sums of logs.
pub fn posteriors_from_bounds(
    data: &NetworkData,
    params: &Params,
    log_ftilde: &[f64],
) -> Result<(Posteriors, f64)> {
    let g = params.n_groups();
    let q = params.n_layer_groups();
    let priors = class_priors(data, &params.beta, &params.gamma);
    let log_rho: Vec<f64> = params.rho.iter().map(|p| p.ln()).collect();

    let parts = par::map_indexed(data.n_layers(), |h| -> Result<LayerPart> {
        let range = data.layer_range(h);
        let mut lq = log_rho.clone();
        let mut cond = vec![0.0; range.len() * g * q];
        let mut terms = vec![0.0; g];
        for (local, i) in range.clone().enumerate() {
            for qq in 0..q {
                for gg in 0..g {
                    terms[gg] = priors.log_eta(i, gg, qq) + log_ftilde[i * g + gg];
                }
                let lse = log_sum_exp(&terms);
                if !lse.is_finite() {
                    return Err(MltaError::Numerical(format!(
                        "zero mixture weight for node {i} (layer {h}, layer group {qq})"
                    )));
                }
                lq[qq] += lse;
                for gg in 0..g {
                    cond[(local * g + gg) * q + qq] = (terms[gg] - lse).exp();
                }
            }
        }
        let log_lik = log_sum_exp(&lq);
        if !log_lik.is_finite() {
            return Err(MltaError::Numerical(format!(
                "layer {h} has zero likelihood under every layer group"
            )));
        }
        let vhat = lq.iter().map(|l| (l - log_lik).exp()).collect();
        Ok(LayerPart {
            log_lik,
            vhat,
            cond,
        })
    });

    let n = data.n_nodes();
    let mut post = Posteriors {
        g,
        q,
        zhat: vec![0.0; n * g],
        vhat: Vec::with_capacity(data.n_layers() * q),
        ahat: vec![0.0; n * g * q],
    };
    let mut loglik = 0.0;
    for (h, part) in parts.into_iter().enumerate() {
        let part = part?;
        loglik += part.log_lik;
        for (local, i) in data.layer_range(h).enumerate() {
            for gg in 0..g {
                let mut z = 0.0;
                for qq in 0..q {
                    let a = part.vhat[qq] * part.cond[(local * g + gg) * q + qq];
                    post.ahat[(i * g + gg) * q + qq] = a;
                    z += a;
                }
                post.zhat[i * g + gg] = z;
            }
        }
        post.vhat.extend(part.vhat);
    }
    Ok((post, loglik))
}
