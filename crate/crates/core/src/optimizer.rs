//! Projected proximal gradient for the penalized, ball-constrained row
//! problems `min L(a) + lambda |a|_1` subject to `|a|_1 <= r`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossFamily, LossSpec, PreparedData, RowLoss};
use crate::model::{EventMatrix, NetworkModel};
use crate::rng::hash_uniform;

/// Penalty level. `Auto` is `0.75 / sqrt(T_eff)`; `Theory(C)` is
/// `C * (ln(M T) / (sqrt(T) (p pi - 1)) + (p pi)^-q)` with `p = min p_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Value(f64),
    Auto,
    Theory(f64),
}

impl Lambda {
    pub fn resolve(&self, spec: &LossSpec, n_nodes: usize, t_eff: usize) -> Result<f64> {
        let t = t_eff as f64;
        let value = match *self {
            Lambda::Value(v) => v,
            Lambda::Auto => 0.75 / t.sqrt(),
            Lambda::Theory(c) => {
                let (p, tail) = match &spec.family {
                    LossFamily::Complete => (1.0, 0.0),
                    LossFamily::Truncated { q } => (1.0, PI.powi(-(*q as i32))),
                    LossFamily::Unbiased { q, p_hat } => {
                        let p = p_hat.iter().cloned().fold(1.0, f64::min);
                        (p, (p * PI).powi(-(*q as i32)))
                    }
                };
                if p * PI <= 1.0 {
                    return Err(Error::Config(format!(
                        "theory-form lambda needs p_hat > 1/pi, got {p}"
                    )));
                }
                c * ((n_nodes as f64 * t).ln() / (t.sqrt() * (p * PI - 1.0)) + tail)
            }
        };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {value}")));
        }
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// Uniform on the l1 ball of radius `radius`.
    Random,
    Warm(NetworkModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: Lambda,
    pub radius: f64,
    pub max_iters: usize,
    /// Relative change of the penalized objective that ends the run.
    pub tol: f64,
    pub step_init: f64,
    pub backtrack_factor: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: Lambda::Auto,
            radius: 1.0,
            max_iters: 10_000,
            tol: 1e-8,
            step_init: 1.0,
            backtrack_factor: 0.5,
            seed: 0,
            init: Init::Zero,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(Error::Config(format!("step_init must be positive, got {}", self.step_init)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Componentwise `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: &[f64], t: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let m = x.abs() - t;
            if m > 0.0 {
                m.copysign(x)
            } else {
                0.0
            }
        })
        .collect()
}

/// Euclidean projection onto `{x : |x|_1 <= r}`.
pub fn project_l1_ball(v: &[f64], r: f64) -> Vec<f64> {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= r {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    // Stable, so ties keep index order.
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cum += u;
        let level = (cum - r) / (j + 1) as f64;
        if u > level {
            theta = level;
        } else {
            break;
        }
    }
    let mut out = soft_threshold(v, theta);
    let l1: f64 = out.iter().map(|x| x.abs()).sum();
    if l1 > r {
        // Rounding guard.
        let s = r / l1;
        out.iter_mut().for_each(|x| *x *= s);
    }
    out
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Uniform draw from the l1 ball keyed by node labels, so that relabeling
/// nodes permutes the draw instead of changing it.
pub fn random_in_ball(seed: u64, row_label: &str, col_labels: &[String], radius: f64) -> Vec<f64> {
    let exp = |u: f64| -u.ln();
    let e: Vec<f64> = col_labels
        .iter()
        .map(|c| exp(hash_uniform(seed, &["init", row_label, c])))
        .collect();
    let slack = exp(hash_uniform(seed, &["init-slack", row_label]));
    let total: f64 = e.iter().sum::<f64>() + slack;
    e.iter()
        .zip(col_labels)
        .map(|(v, c)| {
            let sign = if hash_uniform(seed, &["init-sign", row_label, c]) < 0.5 { -1.0 } else { 1.0 };
            sign * radius * v / total
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFit {
    pub row: usize,
    pub a: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity_gap: f64,
    /// Penalized objective after every accepted step, starting at the init.
    pub objective_trace: Vec<f64>,
}

impl RowFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

struct Problem<'a> {
    loss: &'a RowLoss,
    lambda: f64,
    radius: f64,
}

impl Problem<'_> {
    fn step(&self, a: &[f64], b: f64, g: &[f64], gb: f64, eta: f64) -> (Vec<f64>, f64) {
        let moved: Vec<f64> = a.iter().zip(g).map(|(x, d)| x - eta * d).collect();
        let next = project_l1_ball(&soft_threshold(&moved, eta * self.lambda), self.radius);
        let b_next = if self.loss.has_intercept() { b - eta * gb } else { b };
        (next, b_next)
    }

    fn gap(&self, a: &[f64], b: f64, g: &[f64], gb: f64, eta: f64) -> f64 {
        let (next, b_next) = self.step(a, b, g, gb, eta);
        let sq: f64 = a.iter().zip(&next).map(|(x, y)| (x - y).powi(2)).sum::<f64>() + (b - b_next).powi(2);
        sq.sqrt() / eta
    }
}

/// Minimizes one row's penalized objective starting from `(a0, b0)`.
pub fn fit_row_loss(loss: &RowLoss, a0: Vec<f64>, b0: f64, lambda: f64, cfg: &FitConfig) -> Result<RowFit> {
    cfg.validate()?;
    let n = loss.n_nodes();
    if a0.len() != n {
        return Err(Error::Dimension(format!("initial row has length {}, expected {n}", a0.len())));
    }
    let prob = Problem {
        loss,
        lambda,
        radius: cfg.radius,
    };
    if a0.iter().any(|v| !v.is_finite()) || !b0.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut a = project_l1_ball(&a0, cfg.radius);
    let mut b = if loss.has_intercept() { b0 } else { 0.0 };
    let mut g = vec![0.0; n];
    let (f0, mut gb) = loss.value_grad(&a, b, &mut g);
    let mut obj = f0 + lambda * l1(&a);
    if !obj.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut f = f0;
    let mut trace = vec![obj];
    let mut eta = cfg.step_init;
    if prob.gap(&a, b, &g, gb, eta) < cfg.tol {
        return Ok(RowFit {
            row: loss.target(),
            stationarity_gap: prob.gap(&a, b, &g, gb, eta),
            a,
            intercept: b,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }

    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    'outer: for it in 1..=cfg.max_iters {
        iterations = it;
        eta = (eta / cfg.backtrack_factor).min(cfg.step_init);
        loop {
            let (a_new, b_new) = prob.step(&a, b, &g, gb, eta);
            let (f_new, gb_new) = loss.value_grad(&a_new, b_new, &mut g_new);
            if f_new.is_finite() {
                let mut lin = gb * (b_new - b);
                let mut sq = (b_new - b).powi(2);
                for j in 0..n {
                    let d = a_new[j] - a[j];
                    lin += g[j] * d;
                    sq += d * d;
                }
                let obj_new = f_new + lambda * l1(&a_new);
                let slack = 1e-15 * f.abs().max(1.0);
                if f_new <= f + lin + sq / (2.0 * eta) + slack && obj_new <= obj {
                    let rel = (obj - obj_new) / obj.abs().max(1.0);
                    a = a_new;
                    b = b_new;
                    f = f_new;
                    gb = gb_new;
                    std::mem::swap(&mut g, &mut g_new);
                    obj = obj_new;
                    trace.push(obj);
                    if rel < cfg.tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
            }
            eta *= cfg.backtrack_factor;
            if eta < 1e-30 {
                if !f_new.is_finite() {
                    return Err(Error::NonFinite { iteration: it });
                }
                // No decrease at any representable step: numerically stationary.
                eta = cfg.step_init * 1e-30;
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(RowFit {
        row: loss.target(),
        stationarity_gap: prob.gap(&a, b, &g, gb, eta),
        a,
        intercept: b,
        iterations,
        converged,
        objective_trace: trace,
    })
}

fn initial_row(cfg: &FitConfig, m: usize, labels: &[String]) -> Result<(Vec<f64>, f64)> {
    let n = labels.len();
    Ok(match &cfg.init {
        Init::Zero => (vec![0.0; n], 0.0),
        Init::Random => (random_in_ball(cfg.seed, &labels[m], labels, cfg.radius), 0.0),
        Init::Warm(model) => {
            if model.dim() != n {
                return Err(Error::Dimension(format!(
                    "warm start has dimension {}, data has {n} nodes",
                    model.dim()
                )));
            }
            (model.row(m).to_vec(), model.nu()[m])
        }
    })
}

/// Fits row `m` alone.
pub fn fit_row(spec: &LossSpec, data: &EventMatrix, m: usize, cfg: &FitConfig) -> Result<RowFit> {
    let prep = PreparedData::new(data)?;
    let loss = RowLoss::from_prepared(spec, &prep, m)?;
    let lambda = cfg.lambda.resolve(spec, data.n_nodes(), prep.t_eff())?;
    let (a0, b0) = initial_row(cfg, m, data.node_ids())?;
    fit_row_loss(&loss, a0, b0, lambda, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: NetworkModel,
    pub lambda: f64,
    pub loss: LossSpec,
    pub config: FitConfig,
    pub seed: u64,
    pub rows: Vec<RowFit>,
}

impl FitReport {
    pub fn total_objective(&self) -> f64 {
        self.rows.iter().map(RowFit::objective).sum()
    }

    pub fn max_stationarity_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.stationarity_gap).fold(0.0, f64::max)
    }
}

/// Fits every row, in parallel on the current rayon pool.
pub fn fit_network(spec: &LossSpec, data: &EventMatrix, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let prep = PreparedData::new(data)?;
    fit_network_prepared(spec, &prep, data.node_ids(), cfg)
}

pub fn fit_network_prepared(
    spec: &LossSpec,
    prep: &PreparedData,
    labels: &[String],
    cfg: &FitConfig,
) -> Result<FitReport> {
    let n = prep.n_nodes();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} nodes", labels.len())));
    }
    let lambda = cfg.lambda.resolve(spec, n, prep.t_eff())?;
    let rows: Vec<RowFit> = (0..n)
        .into_par_iter()
        .map(|m| {
            let wrap = |e| Error::Row {
                row: m,
                source: Box::new(e),
            };
            let loss = RowLoss::from_prepared(spec, prep, m).map_err(wrap)?;
            let (a0, b0) = initial_row(cfg, m, labels).map_err(wrap)?;
            fit_row_loss(&loss, a0, b0, lambda, cfg).map_err(wrap)
        })
        .collect::<Result<_>>()?;
    let mut model = NetworkModel::zeros(n);
    for r in &rows {
        model.set_row(r.row, &r.a, r.intercept);
    }
    model.set_node_ids(labels);
    log::debug!(
        "fit {n} rows, lambda {lambda:.4e}, max gap {:.2e}",
        rows.iter().map(|r| r.stationarity_gap).fold(0.0, f64::max)
    );
    Ok(FitReport {
        model,
        lambda,
        loss: spec.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        rows,
    })
}
