use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{gaussian_smooth, restricted_eigenvalue, rsc_tolerance};
use super::spec::{Estimator, ExperimentName, ExperimentSpec};
use super::table::{RawRow, ResultTable};
use super::{gen_ground_truth, mse};
use crate::error::{Error, Result};
use crate::filter::{filter_predict, FilterConfig, FilterOutput};
use crate::ingest::{split_and_mask, SplitSpec};
use crate::loss::{loss_complete, PreparedData, RowLoss};
use crate::model::{apply_missingness, simulate_bar, EventMatrix, NetworkModel};
use crate::optimizer::{fit_network_prepared, FitConfig, FitReport};
use crate::rng::{derive_seed, trial_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub estimator: String,
    pub node: String,
    pub step: usize,
    pub predictive: f64,
    pub smoothed: f64,
    pub actual: u8,
}

/// CSV with one row per (estimator, node, step).
pub fn write_trajectories<W: std::io::Write>(rows: &[TrajectoryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::Parse(format!("writing trajectories: {e}")))?;
    }
    out.flush().map_err(|e| Error::io("<trajectories>", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub table: ResultTable,
    /// Filter trajectories of the first trial (filter evaluation only).
    pub trajectories: Vec<TrajectoryRow>,
    /// Diagnostics that are reported rather than asserted.
    pub notes: Vec<String>,
}

impl ExperimentOutput {
    fn new(spec: &ExperimentSpec, mut table: ResultTable, notes: Vec<String>) -> Self {
        table.sort();
        ExperimentOutput {
            spec: spec.clone(),
            table,
            trajectories: Vec::new(),
            notes,
        }
    }
}

/// Runs the named experiment. `data` replaces the simulated network for the
/// hold-out and filter evaluations.
pub fn run_experiment(spec: &ExperimentSpec, data: Option<&EventMatrix>) -> Result<ExperimentOutput> {
    spec.validate()?;
    match (spec.name, data) {
        (ExperimentName::Holdout, Some(x)) => run_holdout_on(spec, x),
        (ExperimentName::Holdout, None) => run_holdout(spec),
        (ExperimentName::FilterEval, Some(x)) => run_filter_eval_on(spec, x),
        (ExperimentName::FilterEval, None) => run_filter_eval(spec),
        (name, Some(_)) => Err(Error::Config(format!("{name} simulates its own data; drop the data file"))),
        _ => run_grid(spec),
    }
}

pub fn run_mse_vs_t(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_named(spec, ExperimentName::MseVsT)
}

pub fn run_robustness(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_named(spec, ExperimentName::Robustness)
}

pub fn run_truncation(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_named(spec, ExperimentName::Truncation)
}

fn run_named(spec: &ExperimentSpec, name: ExperimentName) -> Result<ExperimentOutput> {
    if spec.name != name {
        return Err(Error::Config(format!("spec is for {}, not {name}", spec.name)));
    }
    spec.validate()?;
    run_grid(spec)
}

fn truth(spec: &ExperimentSpec, base: u64) -> Result<NetworkModel> {
    let mut g = gen_ground_truth(spec.m, spec.s, derive_seed(base, "truth"))?;
    let rows: Vec<Vec<f64>> = (0..g.dim()).map(|m| g.row(m).to_vec()).collect();
    for (m, row) in rows.iter().enumerate() {
        g.set_row(m, row, spec.nu);
    }
    Ok(g)
}

fn fit_config(spec: &ExperimentSpec, base: u64) -> FitConfig {
    FitConfig {
        seed: derive_seed(base, "init"),
        ..spec.fit.clone()
    }
}

fn fit(
    spec: &ExperimentSpec,
    est: Estimator,
    p_hat: f64,
    prep: &PreparedData,
    labels: &[String],
    cfg: &FitConfig,
    cell: impl FnOnce() -> String,
) -> Result<FitReport> {
    let loss = est.loss(p_hat, spec.fit_intercept)?;
    fit_network_prepared(&loss, prep, labels, cfg).map_err(|e| Error::Cell {
        cell: cell(),
        source: Box::new(e),
    })
}

fn p_hats(spec: &ExperimentSpec, est: Estimator) -> Vec<Option<f64>> {
    match est {
        Estimator::Unbiased(_) => spec.p_hat_grid.iter().map(|&v| Some(v)).collect(),
        _ => vec![None],
    }
}

/// Simulate, thin, fit every estimator on every prefix length, record MSE.
fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let name = spec.name.as_str();
    let t_max = *spec.t_grid.iter().max().unwrap();
    let per_trial: Vec<(Vec<RawRow>, Vec<String>)> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| -> Result<_> {
            let base = trial_seed(spec.seed, trial as u64);
            let truth = truth(spec, base)?;
            let x = simulate_bar(&truth, t_max, None, derive_seed(base, "data"))?;
            let (z, _) = apply_missingness(&x, &[spec.p], derive_seed(base, "mask"))?;
            let labels = x.node_ids().to_vec();
            let cfg = fit_config(spec, base);
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            for &t in &spec.t_grid {
                let prep_x = PreparedData::new(&x.slice_steps(0, t)?)?;
                let prep_z = PreparedData::new(&z.slice_steps(0, t)?)?;
                for &est in &spec.estimators {
                    let prep = if est.uses_latent() { &prep_x } else { &prep_z };
                    for ph in p_hats(spec, est) {
                        let cell = || format!("{name}: trial {trial}, T {t}, {}, p_hat {ph:?}", est.label());
                        let report = fit(spec, est, ph.unwrap_or(1.0), prep, &labels, &cfg, cell)?;
                        rows.push(RawRow {
                            experiment: name.into(),
                            estimator: est.label(),
                            t,
                            p: spec.p,
                            p_hat: ph,
                            q: est.degree(),
                            trial,
                            metric: "mse".into(),
                            value: mse(&report.model, &truth)?,
                        });
                        if trial == 0 && t == t_max && matches!(est, Estimator::Unbiased(_)) && ph == Some(spec.p) {
                            let loss = RowLoss::from_prepared(&report.loss, prep, 0)?;
                            let rsc = rsc_tolerance(&loss, 0.05, 200, 5, derive_seed(base, "rsc"));
                            notes.push(format!(
                                "rsc {}: alpha {} tau_hat {:.4e} min_gap {:.4e} over {} pairs",
                                est.label(),
                                rsc.alpha,
                                rsc.tau_hat,
                                rsc.min_taylor_gap,
                                rsc.pairs
                            ));
                        }
                    }
                }
            }
            if trial == 0 {
                let re = restricted_eigenvalue(&x, 100, 5, derive_seed(base, "re"));
                let ok = if re >= 0.05 { "above" } else { "BELOW" };
                notes.push(format!("restricted eigenvalue on X (T = {t_max}): {re:.4} ({ok} 0.05)"));
            }
            Ok((rows, notes))
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::default();
    let mut notes = Vec::new();
    for (rows, n) in per_trial {
        table.rows.extend(rows);
        notes.extend(n);
    }
    Ok(ExperimentOutput::new(spec, table, notes))
}

/// Complete-data log-likelihood of `test` under `model`, summed over rows
/// and transitions.
pub fn holdout_loglik(model: &NetworkModel, test: &EventMatrix) -> Result<f64> {
    let t_eff = (test.n_steps() - 1) as f64;
    (0..model.dim())
        .map(|m| loss_complete(model.row(m), model.nu()[m], test, m).map(|l| -l * t_eff))
        .sum()
}

fn holdout_rows(
    spec: &ExperimentSpec,
    trial: usize,
    train_z: &EventMatrix,
    test_x: &EventMatrix,
    train_x: Option<&EventMatrix>,
) -> Result<Vec<RawRow>> {
    let base = trial_seed(spec.seed, trial as u64);
    let cfg = fit_config(spec, base);
    let labels = train_z.node_ids().to_vec();
    let t = train_z.n_steps();
    let name = spec.name.as_str();
    let mut rows = Vec::new();
    let mut push = |est: &str, p_hat: Option<f64>, q: Option<usize>, value: f64| {
        rows.push(RawRow {
            experiment: name.into(),
            estimator: est.into(),
            t,
            p: spec.p,
            p_hat,
            q,
            trial,
            metric: "loglik".into(),
            value,
        })
    };
    let prep_z = PreparedData::new(train_z)?;
    for &est in spec.estimators.iter().filter(|e| !e.uses_latent()) {
        for ph in p_hats(spec, est) {
            let cell = || format!("{name}: trial {trial}, {}, p_hat {ph:?}", est.label());
            let report = fit(spec, est, ph.unwrap_or(1.0), &prep_z, &labels, &cfg, cell)?;
            push(&est.label(), ph, est.degree(), holdout_loglik(&report.model, test_x)?);
        }
    }
    if let Some(x) = train_x {
        let prep_x = PreparedData::new(x)?;
        let cell = || format!("{name}: trial {trial}, oracle");
        let report = fit(spec, Estimator::Oracle, 1.0, &prep_x, &labels, &cfg, cell)?;
        push("oracle", None, None, holdout_loglik(&report.model, test_x)?);
    }
    Ok(rows)
}

fn split(spec: &ExperimentSpec, x: &EventMatrix, base: u64) -> Result<(EventMatrix, EventMatrix, EventMatrix)> {
    split_and_mask(
        x,
        &SplitSpec {
            train_bins: spec.train_bins,
            test_bins: spec.test_bins,
            mask_p: spec.p,
            seed: derive_seed(base, "mask"),
        },
    )
}

/// Semi-synthetic hold-out study: a simulated network stands in for the
/// recorded one, its training part is thinned at `p`, and fits for every
/// `p_hat` are scored on the untouched test part.
pub fn run_holdout(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let per_trial: Vec<Vec<RawRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let base = trial_seed(spec.seed, trial as u64);
            let truth = truth(spec, base)?;
            let x = simulate_bar(&truth, spec.train_bins + spec.test_bins, None, derive_seed(base, "data"))?;
            let (train_x, train_z, test_x) = split(spec, &x, base)?;
            holdout_rows(spec, trial, &train_z, &test_x, Some(&train_x))
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput::new(
        spec,
        ResultTable {
            rows: per_trial.concat(),
        },
        Vec::new(),
    ))
}

/// Hold-out study on a recorded event matrix; each trial draws a new mask.
pub fn run_holdout_on(spec: &ExperimentSpec, x: &EventMatrix) -> Result<ExperimentOutput> {
    let per_trial: Vec<Vec<RawRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let base = trial_seed(spec.seed, trial as u64);
            let (train_x, train_z, test_x) = split(spec, x, base)?;
            holdout_rows(spec, trial, &train_z, &test_x, Some(&train_x))
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput::new(
        spec,
        ResultTable {
            rows: per_trial.concat(),
        },
        Vec::new(),
    ))
}

struct FilterTrial {
    rows: Vec<RawRow>,
    trajectories: Vec<TrajectoryRow>,
}

fn filter_trial(
    spec: &ExperimentSpec,
    trial: usize,
    train_z: &EventMatrix,
    test_z: &EventMatrix,
    test_x: &EventMatrix,
) -> Result<FilterTrial> {
    let base = trial_seed(spec.seed, trial as u64);
    let cfg = fit_config(spec, base);
    let labels = train_z.node_ids().to_vec();
    let name = spec.name.as_str();
    let est = spec
        .estimators
        .iter()
        .copied()
        .find(|e| matches!(e, Estimator::Unbiased(_)))
        .unwrap_or(Estimator::Unbiased(2));
    let p_hat = spec.p_hat_grid[0];
    let prep = PreparedData::new(train_z)?;
    let aware = fit(spec, est, p_hat, &prep, &labels, &cfg, || format!("{name}: trial {trial}, aware"))?;
    let naive = fit(spec, est, 1.0, &prep, &labels, &cfg, || format!("{name}: trial {trial}, naive"))?;
    let run = |model: &NetworkModel, p: f64, tag: &str| -> Result<FilterOutput> {
        filter_predict(
            model,
            test_z,
            &FilterConfig {
                n_particles: spec.n_particles,
                p: vec![p],
                resample_threshold: 0.5,
                seed: derive_seed(base, tag),
            },
        )
    };
    let out_aware = run(&aware.model, p_hat, "filter-aware")?;
    let out_naive = run(&naive.model, 1.0, "filter-naive")?;
    let actual = test_x.total() as f64;
    let t = test_z.n_steps();
    let row = |est: &str, p_hat: Option<f64>, metric: &str, value: f64| RawRow {
        experiment: name.into(),
        estimator: est.into(),
        t,
        p: spec.p,
        p_hat,
        q: None,
        trial,
        metric: metric.into(),
        value,
    };
    let totals = [
        ("aware", Some(p_hat), out_aware.expected_event_total),
        ("naive", Some(1.0), out_naive.expected_event_total),
        ("naive_scaled", Some(1.0), out_naive.expected_event_total / p_hat),
    ];
    let mut rows = vec![
        row("actual", None, "expected_total", actual),
        row("observed", None, "expected_total", test_z.total() as f64),
    ];
    for (est, ph, v) in totals {
        rows.push(row(est, ph, "expected_total", v));
        rows.push(row(est, ph, "abs_error", (v - actual).abs()));
    }
    let mut trajectories = Vec::new();
    if trial == 0 {
        for (est, out) in [("aware", &out_aware), ("naive", &out_naive)] {
            for (i, series) in out.predictive.iter().enumerate() {
                let smooth = gaussian_smooth(series, spec.smoothing_sigma);
                for (step, (&v, &s)) in series.iter().zip(&smooth).enumerate() {
                    trajectories.push(TrajectoryRow {
                        estimator: est.into(),
                        node: out.node_ids[i].clone(),
                        step,
                        predictive: v,
                        smoothed: s,
                        actual: test_x.get(i, step),
                    });
                }
            }
        }
    }
    Ok(FilterTrial { rows, trajectories })
}

fn collect_filter(spec: &ExperimentSpec, trials: Vec<FilterTrial>) -> ExperimentOutput {
    let mut table = ResultTable::default();
    let mut traj = Vec::new();
    for t in trials {
        table.rows.extend(t.rows);
        traj.extend(t.trajectories);
    }
    let mut out = ExperimentOutput::new(spec, table, Vec::new());
    for est in ["actual", "observed", "aware", "naive", "naive_scaled"] {
        let t = spec.test_bins;
        if let Some(v) = out.table.median_of(est, t, None, "expected_total") {
            out.notes.push(format!("median expected total, {est}: {v:.1}"));
        }
    }
    out.trajectories = traj;
    out
}

/// Semi-synthetic density propagation: fits with and without the thinning
/// correction, filters a thinned test stream, and compares expected event
/// totals with the latent count.
pub fn run_filter_eval(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let trials: Vec<FilterTrial> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let base = trial_seed(spec.seed, trial as u64);
            let truth = truth(spec, base)?;
            let x = simulate_bar(&truth, spec.train_bins + spec.test_bins, None, derive_seed(base, "data"))?;
            let (_, train_z, test_x) = split(spec, &x, base)?;
            let (test_z, _) = apply_missingness(&test_x, &[spec.p], derive_seed(base, "test-mask"))?;
            filter_trial(spec, trial, &train_z, &test_z, &test_x)
        })
        .collect::<Result<_>>()?;
    Ok(collect_filter(spec, trials))
}

/// Density propagation on a recorded matrix, which is itself the thinned
/// stream; "actual" is then the recorded test count.
pub fn run_filter_eval_on(spec: &ExperimentSpec, x: &EventMatrix) -> Result<ExperimentOutput> {
    let end = spec.train_bins + spec.test_bins;
    if end > x.n_steps() {
        return Err(Error::Config(format!("split needs {end} bins, data has {}", x.n_steps())));
    }
    let train = x.slice_steps(0, spec.train_bins)?;
    let test = x.slice_steps(spec.train_bins, end)?;
    let trials: Vec<FilterTrial> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| filter_trial(spec, trial, &train, &test, &test))
        .collect::<Result<_>>()?;
    Ok(collect_filter(spec, trials))
}
