use crate::data::NetworkData;

/// Prior class probabilities `η_{higq}` for every node, group and layer
/// group, stored on the log scale with layout `(node, g, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPriors {
    pub g: usize,
    pub q: usize,
    pub log_eta: Vec<f64>,
}

impl ClassPriors {
    pub fn log_eta(&self, node: usize, g: usize, q: usize) -> f64 {
        self.log_eta[(node * self.g + g) * self.q + q]
    }

    pub fn eta(&self, node: usize, g: usize, q: usize) -> f64 {
        self.log_eta(node, g, q).exp()
    }
}

/// Multinomial-logit class priors. Class 1 is the reference; class `g ≥ 2`
/// has score `x′β_g + γ_q`.
pub fn class_priors(data: &NetworkData, beta: &[Vec<f64>], gamma: &[f64]) -> ClassPriors {
    let n = data.n_nodes();
    let g = beta.len() + 1;
    let q = gamma.len();
    let mut log_eta = vec![0.0; n * g * q];
    let mut lin = vec![0.0; g];
    let mut scores = vec![0.0; g];
    for i in 0..n {
        let x = data.x_row(i);
        for (gg, row) in beta.iter().enumerate() {
            lin[gg + 1] = dot(x, row);
        }
        for (qq, &gq) in gamma.iter().enumerate() {
            offset_scores(&lin, gq, &mut scores);
            let lse = log_sum_exp(&scores);
            for gg in 0..g {
                log_eta[(i * g + gg) * q + qq] = scores[gg] - lse;
            }
        }
    }
    ClassPriors { g, q, log_eta }
}

/// Class scores for one layer group, shifted by `−γ_q` so the reference
/// class carries the offset. Adding `γ_q` to the non-reference scores
/// instead loses `x′β` to cancellation once `|γ_q|` is large.
pub(crate) fn offset_scores(lin: &[f64], gamma_q: f64, scores: &mut [f64]) {
    scores[0] = -gamma_q;
    scores[1..].copy_from_slice(&lin[1..]);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted `log Σ exp`; `−∞` when every term is `−∞`.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn net(x: &[f64], layers: &[usize]) -> NetworkData {
        let n = x.len();
        let xs: Vec<f64> = x.iter().flat_map(|&v| [1.0, v]).collect();
        let ids = (0..layers.len()).map(|h| h.to_string()).collect();
        NetworkData::new(ids, layers.to_vec(), 1, vec![0; n], 2, xs).unwrap()
    }

    #[test]
    fn uniform_when_coefficients_vanish() {
        let d = net(&[0.3, -2.0, 5.0], &[3]);
        let p = class_priors(&d, &[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0]);
        for v in &p.log_eta {
            assert_abs_diff_eq!(v.exp(), 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn layer_offset_shifts_non_reference_classes() {
        let xs = vec![1.0];
        let d = NetworkData::new(vec!["a".into()], vec![1], 1, vec![0], 1, xs).unwrap();
        let p = class_priors(&d, &[vec![1.0]], &[0.0, 1.0]);
        // logistic(2)
        assert_abs_diff_eq!(p.eta(0, 1, 1), 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(p.eta(0, 1, 0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
    }

    #[test]
    fn single_class_is_certain() {
        let d = net(&[0.3, 1.0], &[1, 1]);
        let p = class_priors(&d, &[], &[0.0, 0.5]);
        assert!(p.log_eta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let d = net(&[400.0, -400.0], &[2]);
        let p = class_priors(&d, &[vec![0.0, 3.0], vec![0.0, -3.0]], &[0.0]);
        for i in 0..2 {
            let total: f64 = (0..3).map(|g| p.eta(i, g, 0)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(p.log_eta.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn huge_layer_offset_keeps_covariate_effect() {
        let d = net(&[1.0], &[1]);
        let p = class_priors(&d, &[vec![0.0, 1.0], vec![0.0, -1.0]], &[0.0, 1e17]);
        let (a, b) = (p.log_eta(0, 1, 1), p.log_eta(0, 2, 1));
        assert_abs_diff_eq!(a - b, 2.0, epsilon = 1e-12);
        assert!(p.log_eta(0, 0, 1) < -1e16);
    }
}
