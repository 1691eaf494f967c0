use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::optimizer::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    #[serde(rename = "mse_vs_T", alias = "mse_vs_t")]
    MseVsT,
    Robustness,
    Truncation,
    Holdout,
    FilterEval,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::MseVsT,
        ExperimentName::Robustness,
        ExperimentName::Truncation,
        ExperimentName::Holdout,
        ExperimentName::FilterEval,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::MseVsT => "mse_vs_T",
            ExperimentName::Robustness => "robustness",
            ExperimentName::Truncation => "truncation",
            ExperimentName::Holdout => "holdout",
            ExperimentName::FilterEval => "filter_eval",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = ExperimentName::ALL.iter().map(|n| n.as_str()).collect();
                Error::Config(format!("unknown experiment {s:?}; expected one of {names:?}"))
            })
    }
}

/// A fitted estimator: which loss, on which data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Complete-data likelihood on the latent `X`.
    Oracle,
    /// Degree-`q` truncated likelihood on `X`.
    OracleTruncated(usize),
    /// Unbiased degree-`q` loss on `Z`, once per `p_hat` in the grid.
    Unbiased(usize),
    /// Complete-data likelihood on `Z`, ignoring the thinning.
    Naive,
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Oracle => "oracle".into(),
            Estimator::OracleTruncated(q) => format!("oracle_q{q}"),
            Estimator::Unbiased(q) => format!("proposed_q{q}"),
            Estimator::Naive => "naive".into(),
        }
    }

    pub fn uses_latent(&self) -> bool {
        matches!(self, Estimator::Oracle | Estimator::OracleTruncated(_))
    }

    pub fn degree(&self) -> Option<usize> {
        match self {
            Estimator::OracleTruncated(q) | Estimator::Unbiased(q) => Some(*q),
            _ => None,
        }
    }

    pub fn loss(&self, p_hat: f64, intercept: bool) -> Result<LossSpec> {
        Ok(match self {
            Estimator::Oracle | Estimator::Naive => LossSpec::complete(),
            Estimator::OracleTruncated(q) => LossSpec::truncated(*q)?,
            Estimator::Unbiased(q) => LossSpec::unbiased(*q, vec![p_hat])?,
        }
        .with_intercept(intercept))
    }
}

/// Everything an experiment run depends on besides an optional data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    /// Number of nodes of simulated networks.
    #[serde(rename = "M")]
    pub m: usize,
    /// Nonzero entries of simulated adjacency matrices.
    pub s: usize,
    /// Bias of every node in simulated networks.
    pub nu: f64,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    /// True observation probability.
    pub p: f64,
    pub p_hat_grid: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub trials: usize,
    pub seed: u64,
    pub fit_intercept: bool,
    pub fit: FitConfig,
    /// Hold-out split, in bins.
    pub train_bins: usize,
    pub test_bins: usize,
    pub n_particles: usize,
    pub smoothing_sigma: f64,
}

impl ExperimentSpec {
    /// Desk-scale defaults.
    pub fn preset(name: ExperimentName) -> Self {
        let base = ExperimentSpec {
            name,
            m: 20,
            s: 20,
            nu: 0.0,
            t_grid: vec![500, 1000, 2000, 4000],
            p: 0.75,
            p_hat_grid: vec![0.75],
            estimators: vec![Estimator::Oracle, Estimator::Unbiased(2), Estimator::Naive],
            trials: 10,
            seed: 0,
            fit_intercept: false,
            fit: FitConfig::default(),
            train_bins: 600,
            test_bins: 318,
            n_particles: 1000,
            smoothing_sigma: 3.0,
        };
        match name {
            ExperimentName::MseVsT => base,
            ExperimentName::Robustness => ExperimentSpec {
                t_grid: vec![2000],
                p: 0.7,
                p_hat_grid: (0..10).map(|k| 0.5 + 0.05 * k as f64).map(round2).collect(),
                estimators: vec![Estimator::Unbiased(2)],
                ..base
            },
            ExperimentName::Truncation => ExperimentSpec {
                t_grid: vec![500, 1000, 2000],
                p: 0.7,
                p_hat_grid: vec![0.7],
                estimators: vec![
                    Estimator::Oracle,
                    Estimator::OracleTruncated(2),
                    Estimator::OracleTruncated(4),
                    Estimator::Unbiased(2),
                    Estimator::Unbiased(4),
                ],
                ..base
            },
            ExperimentName::Holdout | ExperimentName::FilterEval => ExperimentSpec {
                m: 9,
                s: 18,
                nu: -0.3,
                t_grid: vec![918],
                p_hat_grid: if name == ExperimentName::Holdout {
                    (0..11).map(|k| 0.5 + 0.05 * k as f64).map(round2).collect()
                } else {
                    vec![0.75]
                },
                estimators: vec![Estimator::Unbiased(2)],
                fit_intercept: true,
                ..base
            },
        }
    }

    /// Grids of the published study: 50 nodes and 50 trials.
    pub fn paper_scale(name: ExperimentName) -> Self {
        let desk = Self::preset(name);
        match name {
            ExperimentName::MseVsT | ExperimentName::Robustness => ExperimentSpec {
                m: 50,
                s: 50,
                trials: 50,
                ..desk
            },
            ExperimentName::Truncation => ExperimentSpec {
                t_grid: vec![500, 1000, 2000, 4000],
                trials: 30,
                ..desk
            },
            ExperimentName::Holdout | ExperimentName::FilterEval => ExperimentSpec { trials: 50, ..desk },
        }
    }

    /// Overlays the keys of a JSON object on `self`.
    pub fn merged(&self, overrides: &serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(over) = overrides else {
            return Err(Error::Config("experiment config must be a JSON object".into()));
        };
        let mut value = serde_json::to_value(self)?;
        let obj = value.as_object_mut().expect("spec serializes to an object");
        for (k, v) in over {
            match (obj.get_mut(k), v) {
                // Nested fit settings merge key by key.
                (Some(serde_json::Value::Object(dst)), serde_json::Value::Object(src)) => {
                    for (kk, vv) in src {
                        dst.insert(kk.clone(), vv.clone());
                    }
                }
                _ => {
                    obj.insert(k.clone(), v.clone());
                }
            }
        }
        let spec: ExperimentSpec = serde_json::from_value(value)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.t_grid.is_empty() || self.p_hat_grid.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("T_grid, p_hat_grid and estimators must be non-empty".into()));
        }
        if self.t_grid.iter().any(|&t| t < 2) {
            return Err(Error::Config("every T must be at least 2".into()));
        }
        crate::model::check_probabilities(&[self.p], "p")?;
        crate::model::check_probabilities(&self.p_hat_grid, "p_hat")?;
        if self.s > self.m * self.m {
            return Err(Error::Config(format!("s = {} exceeds M^2 = {}", self.s, self.m * self.m)));
        }
        self.fit.validate()
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
