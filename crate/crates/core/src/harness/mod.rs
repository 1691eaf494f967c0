//! Simulation studies and hold-out evaluations, emitting long-format tables.

mod diagnostics;
mod experiments;
mod spec;
mod table;

use rand::seq::index::sample;
use rand::Rng as _;

pub use diagnostics::{gaussian_smooth, restricted_eigenvalue, rsc_tolerance, RscSummary};
pub use experiments::{
    run_experiment, run_filter_eval, run_filter_eval_on, run_holdout, run_holdout_on, run_mse_vs_t, run_robustness,
    run_truncation, write_trajectories, ExperimentOutput, TrajectoryRow,
};
pub use spec::{Estimator, ExperimentName, ExperimentSpec};
pub use table::{gnuplot_script, median, sample_std, RawRow, ResultTable, SummaryRow};

use crate::error::{Error, Result};
use crate::model::NetworkModel;
use crate::rng::stream;

/// `s` nonzero entries at distinct uniform positions with values uniform on
/// `[-1, 1]` and `nu = 0`. Rows with l1 norm above 1 are scaled onto the ball.
pub fn gen_ground_truth(m: usize, s: usize, seed: u64) -> Result<NetworkModel> {
    if s > m * m {
        return Err(Error::Config(format!("cannot place {s} nonzeros in a {m}x{m} matrix")));
    }
    let mut rng = stream(seed, "ground-truth");
    let mut a = vec![0.0f64; m * m];
    let mut positions = sample(&mut rng, m * m, s).into_vec();
    positions.sort_unstable();
    for pos in positions {
        // Avoid an exact zero so that |A|_0 = s.
        let mut v = 0.0;
        while v == 0.0 {
            v = rng.random_range(-1.0..=1.0);
        }
        a[pos] = v;
    }
    for row in a.chunks_mut(m.max(1)) {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 1.0 {
            log::debug!("scaling a ground-truth row with l1 norm {l1:.3} onto the unit ball");
            row.iter_mut().for_each(|v| *v /= l1);
        }
    }
    NetworkModel::new(m, a, vec![0.0; m])
}

/// `|A_hat - A*|_F^2 / M^2`.
pub fn mse(a_hat: &NetworkModel, a_star: &NetworkModel) -> Result<f64> {
    if a_hat.dim() != a_star.dim() {
        return Err(Error::Dimension(format!(
            "comparing {}-node and {}-node models",
            a_hat.dim(),
            a_star.dim()
        )));
    }
    let m = a_hat.dim() as f64;
    let sq: f64 = a_hat.a().iter().zip(a_star.a()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sq / (m * m))
}
