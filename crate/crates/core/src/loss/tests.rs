use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{default_node_ids, softplus};

fn hand_case() -> EventMatrix {
    // node 0: (1, 1); node 1: (0, 0)
    EventMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, t: usize, rate: f64) -> EventMatrix {
    let data = (0..m * t).map(|_| (rng.random::<f64>() < rate) as u8).collect();
    EventMatrix::from_time_major(default_node_ids(m), t, data).unwrap()
}

fn random_in_ball(rng: &mut ChaCha8Rng, m: usize, radius: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..=m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e[..m]
        .iter()
        .map(|v| {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            s * radius * v / total
        })
        .collect()
}

/// Average of `f(Z)` over every mask `W`, weighted by its probability.
fn mask_expectation<F: FnMut(&EventMatrix) -> Vec<f64>>(x: &EventMatrix, p: &[f64], mut f: F) -> Vec<f64> {
    let m = x.n_nodes();
    let cells = m * x.n_steps();
    let mut acc: Vec<f64> = Vec::new();
    for mask in 0u64..(1 << cells) {
        let mut weight = 1.0;
        let mut z = x.as_time_major().to_vec();
        for c in 0..cells {
            let keep = (mask >> c) & 1 == 1;
            weight *= if keep { p[c % m] } else { 1.0 - p[c % m] };
            if !keep {
                z[c] = 0;
            }
        }
        let zm = EventMatrix::from_time_major(x.node_ids().to_vec(), x.n_steps(), z).unwrap();
        let v = f(&zm);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += weight * b;
        }
    }
    acc
}

#[test]
fn zero_weights_give_log_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 4, 30, 0.5);
    for m in 0..4 {
        assert!((loss_complete(&[0.0; 4], 0.0, &x, m).unwrap() - LN_2).abs() < 1e-15);
    }
}

#[test]
fn complete_hand_case() {
    let x = hand_case();
    let v = loss_complete(&[0.5, -0.3], 0.0, &x, 0).unwrap();
    assert!((v - (softplus(0.5) - 0.5)).abs() < 1e-15);
    assert!((v - 0.474_076_984_180_1).abs() < 1e-12);
    // Mirror: negated weights with a zero target give f(-0.5) = f(0.5) - 0.5.
    let mirrored = EventMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
    let w = loss_complete(&[-0.5, 0.3], 0.0, &mirrored, 0).unwrap();
    assert!((w - v).abs() < 1e-15);
}

#[test]
fn truncated_hand_case() {
    let v = loss_truncated(&[0.5, -0.3], 0.0, &hand_case(), 0, 2).unwrap();
    assert!((v - (LN_2 + 0.25 + 0.03125 - 0.5)).abs() < 1e-15);
}

#[test]
fn odd_degree_equals_lower_even() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(&mut rng, 5, 40, 0.4);
    let a = random_in_ball(&mut rng, 5, 1.0);
    assert_eq!(
        loss_truncated(&a, 0.1, &x, 2, 3).unwrap(),
        loss_truncated(&a, 0.1, &x, 2, 2).unwrap()
    );
    assert_eq!(LossSpec::truncated(5).unwrap(), LossSpec::truncated(4).unwrap());
    assert!(LossSpec::truncated(1).is_err());
}

#[test]
fn unbiased_deg2_hand_case() {
    let v = loss_unbiased_deg2(&[0.5, -0.3], 0.0, &hand_case(), 0, &[0.5, 0.5]).unwrap();
    assert!((v - (LN_2 - 1.4375)).abs() < 1e-14, "{v}");
    // The generic route agrees.
    let g = loss_unbiased(&[0.5, -0.3], 0.0, &hand_case(), 0, &[0.5, 0.5], 2).unwrap();
    assert!((g - v).abs() < 1e-14);
    let b = brute_force_unbiased(&[0.5, -0.3], 0.0, &hand_case(), 0, &[0.5, 0.5], 2).unwrap();
    assert!((b - v).abs() < 1e-14);
}

#[test]
fn full_observation_reduces_to_truncated() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = random_matrix(&mut rng, 6, 50, 0.4);
        let a = random_in_ball(&mut rng, 6, 1.0);
        let b = rng.random::<f64>() - 0.5;
        assert_eq!(
            loss_unbiased_deg2(&a, b, &x, 1, &[1.0; 6]).unwrap(),
            loss_truncated(&a, b, &x, 1, 2).unwrap()
        );
        let u4 = loss_unbiased(&a, b, &x, 1, &[1.0; 6], 4).unwrap();
        let t4 = loss_truncated(&a, b, &x, 1, 4).unwrap();
        assert!((u4 - t4).abs() < 1e-13);
    }
}

#[test]
fn deg2_unbiased_by_mask_enumeration() {
    let x = EventMatrix::from_rows(&[vec![1, 1], vec![1, 0]]).unwrap();
    let a = [0.4, -0.35];
    for &p in &[0.4, 0.6, 0.75] {
        let ps = [p, p];
        let e = mask_expectation(&x, &ps, |z| vec![loss_unbiased_deg2(&a, 0.2, z, 0, &ps).unwrap()]);
        let target = loss_truncated(&a, 0.2, &x, 0, 2).unwrap();
        assert!((e[0] - target).abs() < 1e-12, "p = {p}: {} vs {target}", e[0]);
    }
}

#[test]
fn deg4_unbiased_by_mask_enumeration_per_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(&mut rng, 3, 3, 0.7);
    let a = random_in_ball(&mut rng, 3, 1.0);
    let ps = [0.45, 0.7, 0.9];
    for m in 0..3 {
        let spec = LossSpec::unbiased(4, ps.to_vec()).unwrap().with_intercept(true);
        let e = mask_expectation(&x, &ps, |z| {
            let (mut g, gb) = grad(&spec, &a, -0.1, z, m).unwrap();
            g.push(gb);
            g.push(loss_unbiased(&a, -0.1, z, m, &ps, 4).unwrap());
            g
        });
        let tspec = LossSpec::truncated(4).unwrap().with_intercept(true);
        let (mut tg, tgb) = grad(&tspec, &a, -0.1, &x, m).unwrap();
        tg.push(tgb);
        tg.push(loss_truncated(&a, -0.1, &x, m, 4).unwrap());
        for (u, v) in e.iter().zip(&tg) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }
}

#[test]
fn generic_route_matches_closed_form_at_degree_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = rng.random_range(1..8);
        let t = rng.random_range(2..40);
        let z = random_matrix(&mut rng, m, t, 0.4);
        let a = random_in_ball(&mut rng, m, 1.0);
        let p: Vec<f64> = (0..m).map(|_| 0.35 + 0.65 * rng.random::<f64>()).collect();
        let row = rng.random_range(0..m);
        let b = rng.random::<f64>() - 0.5;
        let fast = loss_unbiased_deg2(&a, b, &z, row, &p).unwrap();
        let generic = loss_unbiased(&a, b, &z, row, &p, 2).unwrap();
        assert!((fast - generic).abs() < 1e-12, "{fast} vs {generic}");
    }
}

#[test]
fn degree_four_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = random_matrix(&mut rng, 5, 6, 0.6);
    let a = random_in_ball(&mut rng, 5, 1.0);
    let p = [0.6; 5];
    for m in 0..5 {
        let fast = loss_unbiased(&a, 0.0, &z, m, &p, 4).unwrap();
        let slow = brute_force_unbiased(&a, 0.0, &z, m, &p, 4).unwrap();
        assert!((fast - slow).abs() < 1e-10);
    }
}

#[test]
fn higher_degrees_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = random_matrix(&mut rng, 3, 5, 0.6);
    let a = random_in_ball(&mut rng, 3, 1.0);
    let p = [0.5, 0.8, 0.65];
    for q in [6, 8] {
        let fast = loss_unbiased(&a, 0.15, &z, 1, &p, q).unwrap();
        let slow = brute_force_unbiased(&a, 0.15, &z, 1, &p, q).unwrap();
        assert!((fast - slow).abs() < 1e-10, "q = {q}");
    }
}

#[test]
fn brute_force_single_node_reduction() {
    // With one node every degree-d monomial has a single distinct index:
    // c_d a^d Z_t / p.
    let z = EventMatrix::from_rows(&[vec![1, 0, 1, 1]]).unwrap();
    let (a, p) = (0.7f64, 0.6);
    let coeffs = cached_coeffs();
    let mut expect = 0.0;
    for t in 0..3 {
        let zt = z.get(0, t) as f64;
        for d in 1..=4 {
            expect += coeffs.get(d) * a.powi(d as i32) * zt / p;
        }
        expect -= z.get(0, t + 1) as f64 * a * zt / (p * p);
    }
    expect = LN_2 + expect / 3.0;
    let got = brute_force_unbiased(&[a], 0.0, &z, 0, &[p], 4).unwrap();
    assert!((got - expect).abs() < 1e-14);
}

#[test]
fn brute_force_full_observation_matches_truncated() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 4, 8, 0.5);
    let a = random_in_ball(&mut rng, 4, 1.0);
    let slow = brute_force_unbiased(&a, 0.3, &x, 2, &[1.0; 4], 4).unwrap();
    let direct = loss_truncated(&a, 0.3, &x, 2, 4).unwrap();
    assert!((slow - direct).abs() < 1e-13);
}

#[test]
fn brute_force_budget() {
    let z = EventMatrix::zeros(default_node_ids(40), 50);
    assert!(matches!(
        brute_force_unbiased(&[0.0; 40], 0.0, &z, 0, &[0.5; 40], 6),
        Err(Error::Config(_))
    ));
}

#[test]
fn complete_gradient_hand_case() {
    let (g, _) = grad(&LossSpec::complete(), &[0.0, 0.0], 0.0, &hand_case(), 0).unwrap();
    assert!((g[0] + 0.5).abs() < 1e-15 && g[1] == 0.0);
}

fn fd_check(spec: &LossSpec, a: &[f64], b: f64, data: &EventMatrix, m: usize) {
    let row = RowLoss::new(spec, data, m).unwrap();
    let mut g = vec![0.0; a.len()];
    let (_, gb) = row.value_grad(a, b, &mut g);
    let h = 1e-6;
    let mut fd = Vec::with_capacity(a.len() + 1);
    for j in 0..a.len() {
        let mut up = a.to_vec();
        let mut dn = a.to_vec();
        up[j] += h;
        dn[j] -= h;
        fd.push((row.value(&up, b) - row.value(&dn, b)) / (2.0 * h));
    }
    fd.push(if row.has_intercept() {
        (row.value(a, b + h) - row.value(a, b - h)) / (2.0 * h)
    } else {
        0.0
    });
    g.push(gb);
    let err: f64 = g.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(err <= 1e-5 * norm.max(1e-3), "{spec:?}: err {err}, norm {norm}");
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..12 {
        let m = rng.random_range(2..7);
        let data = random_matrix(&mut rng, m, 30, 0.45);
        let a = random_in_ball(&mut rng, m, 1.0);
        let p: Vec<f64> = (0..m).map(|_| 0.4 + 0.6 * rng.random::<f64>()).collect();
        let spec = match k % 5 {
            0 => LossSpec::complete(),
            1 => LossSpec::truncated(2).unwrap(),
            2 => LossSpec::truncated(6).unwrap(),
            3 => LossSpec::unbiased(2, p).unwrap(),
            _ => LossSpec::unbiased(4, p).unwrap(),
        }
        .with_intercept(k % 2 == 0);
        fd_check(&spec, &a, 0.2, &data, rng.random_range(0..m));
    }
}

#[test]
fn truncation_error_within_tail_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_matrix(&mut rng, 8, 60, 0.5);
    for _ in 0..100 {
        let a = random_in_ball(&mut rng, 8, 1.0);
        let full = loss_complete(&a, 0.0, &x, 3).unwrap();
        for q in [2, 4, 6, 8] {
            let trunc = loss_truncated(&a, 0.0, &x, 3, q).unwrap();
            assert!((trunc - full).abs() <= 2.0 * PI.powi(-(q as i32)));
        }
    }
}

#[test]
fn unbiased_consecutive_degrees_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = random_matrix(&mut rng, 6, 40, 0.4);
    for &p in &[0.45, 0.7, 0.9] {
        let ps = vec![p; 6];
        for _ in 0..20 {
            let a = random_in_ball(&mut rng, 6, 1.0);
            for q in [2usize, 4, 6] {
                let lo = loss_unbiased(&a, 0.0, &z, 0, &ps, q).unwrap();
                let hi = loss_unbiased(&a, 0.0, &z, 0, &ps, q + 2).unwrap();
                assert!((lo - hi).abs() <= 2.0 * (p * PI).powi(-(q as i32)));
            }
        }
    }
}

#[test]
fn network_loss_is_sum_of_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = random_matrix(&mut rng, 4, 30, 0.5);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| random_in_ball(&mut rng, 4, 1.0)).collect();
    let model = NetworkModel::from_rows(&rows, vec![0.1, -0.2, 0.0, 0.3]).unwrap();
    let spec = LossSpec::unbiased(4, vec![0.7; 4]).unwrap().with_intercept(true);
    let total = network_loss(&spec, &model, &z).unwrap();
    let sum: f64 = (0..4)
        .map(|m| loss_unbiased(model.row(m), model.nu()[m], &z, m, &[0.7; 4], 4).unwrap())
        .sum();
    assert!((total - sum).abs() < 1e-12);
}

#[test]
fn invalid_specs_rejected() {
    assert!(LossSpec::unbiased(14, vec![0.5]).is_err());
    assert!(LossSpec::unbiased(2, vec![0.0]).is_err());
    assert!(LossSpec::unbiased(2, vec![1.5]).is_err());
    let z = hand_case();
    assert!(matches!(loss_complete(&[0.0; 3], 0.0, &z, 0), Err(Error::Dimension(_))));
    let short = EventMatrix::zeros(default_node_ids(2), 1);
    assert!(loss_complete(&[0.0; 2], 0.0, &short, 0).is_err());
    let spec = LossSpec::unbiased(2, vec![0.5; 3]).unwrap();
    assert!(RowLoss::new(&spec, &z, 0).is_err());
}

#[test]
fn scalar_p_hat_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = random_matrix(&mut rng, 4, 30, 0.5);
    let a = random_in_ball(&mut rng, 4, 1.0);
    let one = RowLoss::new(&LossSpec::unbiased(2, vec![0.6]).unwrap(), &z, 1).unwrap();
    let all = RowLoss::new(&LossSpec::unbiased(2, vec![0.6; 4]).unwrap(), &z, 1).unwrap();
    assert_eq!(one.value(&a, 0.0), all.value(&a, 0.0));
}
