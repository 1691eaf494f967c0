use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::loss::RowLoss;
use crate::model::EventMatrix;
use crate::rng::stream;

/// Gaussian kernel smoothing with the kernel truncated at 4 sigma and
/// renormalized near the ends.
pub fn gaussian_smooth(series: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || series.is_empty() {
        return series.to_vec();
    }
    let half = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half).map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp()).collect();
    let n = series.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as isize - half;
                if (0..n).contains(&j) {
                    acc += w * series[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

fn sparse_direction(rng: &mut crate::rng::Rng, m: usize, sparsity: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    for i in sample(rng, m, sparsity.clamp(1, m)) {
        v[i] = rng.random_range(-1.0..1.0);
    }
    v
}

/// Smallest `(1/T) sum_t (v . X_t)^2 / |v|_2^2` over random `sparsity`-sparse
/// directions.
pub fn restricted_eigenvalue(x: &EventMatrix, n_dirs: usize, sparsity: usize, seed: u64) -> f64 {
    let m = x.n_nodes();
    let mut rng = stream(seed, "restricted-eigenvalue");
    let mut worst = f64::INFINITY;
    for _ in 0..n_dirs {
        let v = sparse_direction(&mut rng, m, sparsity);
        let norm: f64 = v.iter().map(|a| a * a).sum();
        if norm == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for t in 0..x.n_steps() {
            let d: f64 = x.column(t).iter().zip(&v).filter(|(b, _)| **b != 0).map(|(_, a)| a).sum();
            acc += d * d;
        }
        worst = worst.min(acc / x.n_steps() as f64 / norm);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RscSummary {
    pub alpha: f64,
    /// Smallest `tau` with `T_L(v, w) >= alpha |v-w|_2^2 - tau |v-w|_1^2` on
    /// every sampled pair.
    pub tau_hat: f64,
    pub min_taylor_gap: f64,
    pub pairs: usize,
}

/// Samples pairs of sparse points inside the unit l1 ball around which the
/// first-order Taylor gap `L(v) - L(w) - grad L(w) . (v - w)` is measured.
pub fn rsc_tolerance(loss: &RowLoss, alpha: f64, pairs: usize, sparsity: usize, seed: u64) -> RscSummary {
    let m = loss.n_nodes();
    let mut rng = stream(seed, "rsc");
    let mut grad = vec![0.0; m];
    let mut tau: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let to_ball = |mut v: Vec<f64>, r: f64| {
        let l1: f64 = v.iter().map(|a| a.abs()).sum();
        if l1 > 0.0 {
            v.iter_mut().for_each(|a| *a *= r / l1);
        }
        v
    };
    for _ in 0..pairs {
        let rv = rng.random::<f64>();
        let rw = rng.random::<f64>();
        let v = to_ball(sparse_direction(&mut rng, m, sparsity), rv);
        let w = to_ball(sparse_direction(&mut rng, m, sparsity), rw);
        let (lw, _) = loss.value_grad(&w, 0.0, &mut grad);
        let lv = loss.value(&v, 0.0);
        let lin: f64 = grad.iter().zip(v.iter().zip(&w)).map(|(g, (a, b))| g * (a - b)).sum();
        let gap = lv - lw - lin;
        let l2: f64 = v.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum();
        let l1: f64 = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        min_gap = min_gap.min(gap);
        if l1 > 0.0 {
            tau = tau.max((alpha * l2 - gap) / (l1 * l1));
        }
    }
    RscSummary {
        alpha,
        tau_hat: tau,
        min_taylor_gap: min_gap,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossSpec;
    use crate::model::{default_node_ids, simulate_bar};
    use crate::NetworkModel;

    #[test]
    fn smoothing_preserves_constants_and_mass() {
        let flat = vec![0.4; 30];
        assert!(gaussian_smooth(&flat, 3.0).iter().all(|v| (v - 0.4).abs() < 1e-15));
        let mut spike = vec![0.0; 61];
        spike[30] = 1.0;
        let s = gaussian_smooth(&spike, 3.0);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s[30] > s[27] && s[27] > s[20]);
        assert_eq!(gaussian_smooth(&spike, 0.0), spike);
    }

    #[test]
    fn restricted_eigenvalue_on_independent_noise() {
        // With A = 0 and nu = 0 coordinates are iid Bernoulli(1/2), so
        // E (v . X)^2 = |v|^2 / 4 + (sum v)^2 / 4 >= |v|^2 / 4.
        let x = simulate_bar(&NetworkModel::zeros(10), 2000, None, 3).unwrap();
        let re = restricted_eigenvalue(&x, 100, 3, 4);
        assert!(re > 0.2, "{re}");
        let zero = EventMatrix::zeros(default_node_ids(4), 50);
        assert_eq!(restricted_eigenvalue(&zero, 10, 2, 0), 0.0);
    }

    #[test]
    fn complete_loss_has_small_tolerance() {
        let x = simulate_bar(&NetworkModel::zeros(8), 2000, None, 5).unwrap();
        let loss = RowLoss::new(&LossSpec::complete(), &x, 0).unwrap();
        let r = rsc_tolerance(&loss, 0.05, 200, 3, 6);
        // Convex loss: every Taylor gap is non-negative.
        assert!(r.min_taylor_gap >= -1e-12);
        assert!(r.tau_hat.is_finite());
    }
}
