use barnet::filter::{filter_predict, FilterConfig};
use barnet::harness::{gen_ground_truth, run_filter_eval, ExperimentName, ExperimentSpec};
use barnet::io::{load_event_matrix, load_model, save_event_matrix, save_json};
use barnet::loss::LossSpec;
use barnet::model::{apply_missingness, simulate_bar};
use barnet::optimizer::{fit_network, FitConfig, Init};
use barnet::NetworkModel;

#[test]
fn simulate_corrupt_fit_filter_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_ground_truth(6, 10, 3).unwrap();
    save_json(&truth, &dir.path().join("truth.json")).unwrap();
    let truth = load_model(&dir.path().join("truth.json")).unwrap();

    let x = simulate_bar(&truth, 800, None, 4).unwrap();
    save_event_matrix(&x, &dir.path().join("x.csv")).unwrap();
    let x = load_event_matrix(&dir.path().join("x.csv")).unwrap();

    let (same, _) = apply_missingness(&x, &[1.0], 5).unwrap();
    assert_eq!(same, x);
    let (z, w) = apply_missingness(&x, &[0.7], 5).unwrap();
    for i in 0..x.n_nodes() {
        for t in 0..x.n_steps() {
            assert_eq!(z.get(i, t), x.get(i, t) & w.get(i, t));
        }
    }

    let spec = LossSpec::unbiased(2, vec![0.7]).unwrap().with_intercept(true);
    let report = fit_network(&spec, &z, &FitConfig::default()).unwrap();
    assert!(report.model.in_ball(1.0));
    save_json(&report.model, &dir.path().join("fit.json")).unwrap();
    let fitted = load_model(&dir.path().join("fit.json")).unwrap();
    assert_eq!(fitted, report.model);

    let cfg = FilterConfig {
        n_particles: 500,
        p: vec![0.7],
        seed: 6,
        ..FilterConfig::default()
    };
    let out = filter_predict(&fitted, &z, &cfg).unwrap();
    assert!(out.predictive.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let total: f64 = out.predictive.iter().flatten().sum();
    assert!((total - out.expected_event_total).abs() < 1e-9);
    assert!(out.ess_trace.iter().all(|e| *e >= 1.0 - 1e-9 && *e <= 500.0 + 1e-9));
}

#[test]
fn same_seed_does_not_couple_mask_to_events() {
    let model = NetworkModel::new(2, vec![0.0, 0.6, -0.5, 0.0], vec![-0.2, 0.0]).unwrap();
    let x = simulate_bar(&model, 20_000, None, 7).unwrap();
    let (z, _) = apply_missingness(&x, &[0.7], 7).unwrap();
    let ratio = z.total() as f64 / x.total() as f64;
    assert!((ratio - 0.7).abs() < 0.02, "{ratio}");
}

#[test]
fn random_init_fit_is_permutation_equivariant() {
    let truth = gen_ground_truth(5, 8, 11).unwrap();
    let x = simulate_bar(&truth, 600, None, 12).unwrap();
    let (z, _) = apply_missingness(&x, &[0.8], 13).unwrap();
    let spec = LossSpec::unbiased(2, vec![0.8]).unwrap();
    let cfg = FitConfig {
        init: Init::Random,
        seed: 9,
        max_iters: 50,
        ..FitConfig::default()
    };
    let base = fit_network(&spec, &z, &cfg).unwrap().model;
    let perm = [3, 0, 4, 1, 2];
    let permuted = fit_network(&spec, &z.permute_nodes(&perm), &cfg).unwrap().model;
    for (i, &pi) in perm.iter().enumerate() {
        for (j, &pj) in perm.iter().enumerate() {
            assert!((permuted.get(i, j) - base.get(pi, pj)).abs() < 1e-12);
        }
    }
}

#[test]
fn aware_totals_beat_unscaled_naive_totals() {
    let spec = ExperimentSpec::preset(ExperimentName::FilterEval);
    let out = run_filter_eval(&spec).unwrap();
    let err = |est: &str, trial: usize| {
        out.table
            .rows
            .iter()
            .find(|r| r.estimator == est && r.trial == trial && r.metric == "abs_error")
            .map(|r| r.value)
            .unwrap()
    };
    let wins = (0..spec.trials).filter(|&k| err("aware", k) < err("naive", k)).count();
    assert!(wins >= 8, "aware closer in only {wins} of {} trials", spec.trials);
    assert!(!out.trajectories.is_empty());
}
