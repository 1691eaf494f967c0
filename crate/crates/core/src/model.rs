//! Domain types for the Bernoulli autoregressive (BAR) process and its
//! thinned observation, plus seeded simulation of both.
//!
//! The latent process is `X_t ~ Bernoulli(sigmoid(nu + A X_{t-1}))`
//! coordinatewise; observations are `Z_t = W_t ⊙ X_t` with independent
//! `W_{t,i} ~ Bernoulli(p_i)`.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Logistic function, `1 / (1 + exp(-x))`, evaluated without overflow for
/// any finite input. NaN propagates.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-partition of the Bernoulli GLM, `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted adjacency matrix `A` (row `m` holds the incoming weights of node
/// `m`) and bias vector `nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(rename = "M")]
    dim: usize,
    /// Row-major, `dim * dim` entries.
    #[serde(rename = "A")]
    a: Vec<f64>,
    nu: Vec<f64>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl NetworkModel {
    pub fn new(dim: usize, a: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        let model = NetworkModel {
            dim,
            a,
            nu,
            meta: Default::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn zeros(dim: usize) -> Self {
        NetworkModel {
            dim,
            a: vec![0.0; dim * dim],
            nu: vec![0.0; dim],
            meta: Default::default(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], nu: Vec<f64>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("adjacency rows must all have length M".into()));
        }
        Self::new(dim, rows.concat(), nu)
    }

    /// Checks the shape invariants; needed after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.dim * self.dim {
            return Err(Error::Dimension(format!(
                "A has {} entries, expected {}x{}",
                self.a.len(),
                self.dim,
                self.dim
            )));
        }
        if self.nu.len() != self.dim {
            return Err(Error::Dimension(format!(
                "nu has length {}, expected {}",
                self.nu.len(),
                self.dim
            )));
        }
        if self.a.iter().chain(&self.nu).any(|v| !v.is_finite()) {
            return Err(Error::Config("model contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.a[m * self.dim..(m + 1) * self.dim]
    }

    pub fn set_row(&mut self, m: usize, row: &[f64], nu: f64) {
        self.a[m * self.dim..(m + 1) * self.dim].copy_from_slice(row);
        self.nu[m] = nu;
    }

    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.a[m * self.dim + j]
    }

    pub fn row_l1(&self, m: usize) -> f64 {
        self.row(m).iter().map(|v| v.abs()).sum()
    }

    /// Membership in `B_{1,inf}(r)`: every row has l1 norm at most `r` (+1e-12).
    pub fn in_ball(&self, radius: f64) -> bool {
        (0..self.dim).all(|m| self.row_l1(m) <= radius + 1e-12)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum()
    }

    /// Node labels recorded in `meta.node_ids`, or `n0..n{M-1}`.
    pub fn node_ids(&self) -> Vec<String> {
        if let Some(serde_json::Value::Array(ids)) = self.meta.get("node_ids") {
            let ids: Vec<String> = ids
                .iter()
                .filter_map(|v| v.as_str().map(str::to_owned))
                .collect();
            if ids.len() == self.dim {
                return ids;
            }
        }
        default_node_ids(self.dim)
    }

    pub fn set_node_ids(&mut self, ids: &[String]) {
        self.meta.insert(
            "node_ids".into(),
            serde_json::Value::Array(ids.iter().cloned().map(Into::into).collect()),
        );
    }

    /// `nu_i + a_i . x` for every node.
    pub fn linear_predictor(&self, x: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.nu);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0 {
                for (m, o) in out.iter_mut().enumerate() {
                    *o += self.a[m * self.dim + j];
                }
            }
        }
    }
}

pub fn default_node_ids(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("n{i}")).collect()
}

/// Binary node-by-time event indicators, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMatrix {
    node_ids: Vec<String>,
    n_steps: usize,
    data: Vec<u8>,
    /// Bin width in days, when the matrix came from binned records.
    pub bin_width_days: Option<f64>,
}

impl EventMatrix {
    pub fn zeros(node_ids: Vec<String>, n_steps: usize) -> Self {
        let n = node_ids.len() * n_steps;
        EventMatrix {
            node_ids,
            n_steps,
            data: vec![0; n],
            bin_width_days: None,
        }
    }

    /// Builds from time-major data (`data[t * M + i]`).
    pub fn from_time_major(node_ids: Vec<String>, n_steps: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != node_ids.len() * n_steps {
            return Err(Error::Dimension(format!(
                "{} cells for {} nodes x {} steps",
                data.len(),
                node_ids.len(),
                n_steps
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Parse("event matrix entries must be 0 or 1".into()));
        }
        Ok(EventMatrix {
            node_ids,
            n_steps,
            data,
            bin_width_days: None,
        })
    }

    /// Builds from node-major rows, `rows[i][t]`.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("ragged event rows".into()));
        }
        let mut data = vec![0; m * t];
        for (i, r) in rows.iter().enumerate() {
            for (s, &v) in r.iter().enumerate() {
                data[s * m + i] = v;
            }
        }
        Self::from_time_major(default_node_ids(m), t, data)
    }

    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.node_ids.len() {
            return Err(Error::Dimension("node id count mismatch".into()));
        }
        self.node_ids = ids;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn get(&self, i: usize, t: usize) -> u8 {
        self.data[t * self.n_nodes() + i]
    }

    pub fn set(&mut self, i: usize, t: usize, v: bool) {
        let m = self.n_nodes();
        self.data[t * m + i] = v as u8;
    }

    /// All nodes at time `t`.
    pub fn column(&self, t: usize) -> &[u8] {
        let m = self.n_nodes();
        &self.data[t * m..(t + 1) * m]
    }

    pub fn as_time_major(&self) -> &[u8] {
        &self.data
    }

    pub fn total(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.data.len() as f64
        }
    }

    /// Columns `[start, end)`.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_steps {
            return Err(Error::Dimension(format!(
                "step range {start}..{end} outside 0..{}",
                self.n_steps
            )));
        }
        let m = self.n_nodes();
        Ok(EventMatrix {
            node_ids: self.node_ids.clone(),
            n_steps: end - start,
            data: self.data[start * m..end * m].to_vec(),
            bin_width_days: self.bin_width_days,
        })
    }

    /// Reorders nodes: output node `k` is input node `perm[k]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let m = self.n_nodes();
        let mut data = vec![0; self.data.len()];
        for t in 0..self.n_steps {
            for (k, &src) in perm.iter().enumerate() {
                data[t * m + k] = self.data[t * m + src];
            }
        }
        EventMatrix {
            node_ids: perm.iter().map(|&i| self.node_ids[i].clone()).collect(),
            n_steps: self.n_steps,
            data,
            bin_width_days: self.bin_width_days,
        }
    }

    /// Errors unless there is at least one transition to fit on.
    pub fn require_fittable(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::Config(format!(
                "need at least 2 time steps to fit, got {}",
                self.n_steps
            )));
        }
        Ok(())
    }
}

/// True observation probabilities and the estimate used by the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub p: Vec<f64>,
    pub p_hat: Vec<f64>,
}

impl MissingnessSpec {
    pub fn new(p: Vec<f64>, p_hat: Vec<f64>) -> Result<Self> {
        if p.len() != p_hat.len() {
            return Err(Error::Dimension("p and p_hat lengths differ".into()));
        }
        check_probabilities(&p, "p")?;
        check_probabilities(&p_hat, "p_hat")?;
        Ok(MissingnessSpec { p, p_hat })
    }

    pub fn uniform(dim: usize, p: f64, p_hat: f64) -> Result<Self> {
        Self::new(vec![p; dim], vec![p_hat; dim])
    }

    /// `min(p_hat) <= 1/pi`: the finite-degree loss is still defined, but the
    /// untruncated series no longer converges.
    pub fn below_convergence_threshold(&self) -> bool {
        self.p_hat.iter().any(|&v| v <= 1.0 / PI)
    }
}

/// Every entry in `(0, 1]`.
pub fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    match p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        Some(v) => Err(Error::Config(format!("{what} entries must lie in (0, 1], got {v}"))),
        None => Ok(()),
    }
}

/// Checks `p` and expands a single value to `n` nodes.
pub fn broadcast_probabilities(p: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    check_probabilities(p, what)?;
    match p.len() {
        1 => Ok(vec![p[0]; n]),
        len if len == n => Ok(p.to_vec()),
        len => Err(Error::Dimension(format!("{what} has length {len}, expected 1 or {n}"))),
    }
}

/// Simulates `T` steps of the BAR process from `x0` (zeros when `None`).
/// The returned matrix holds `X_1..X_T`; `x0` itself is not included.
pub fn simulate_bar(model: &NetworkModel, n_steps: usize, x0: Option<&[u8]>, seed: u64) -> Result<EventMatrix> {
    simulate_bar_with_burn_in(model, n_steps, x0, 0, seed)
}

/// As [`simulate_bar`], discarding the first `burn_in` steps.
pub fn simulate_bar_with_burn_in(
    model: &NetworkModel,
    n_steps: usize,
    x0: Option<&[u8]>,
    burn_in: usize,
    seed: u64,
) -> Result<EventMatrix> {
    model.validate()?;
    let m = model.dim();
    if n_steps == 0 {
        return Err(Error::Config("T must be at least 1".into()));
    }
    let mut prev = match x0 {
        Some(x) if x.len() != m => {
            return Err(Error::Dimension(format!("x0 has length {}, expected {m}", x.len())))
        }
        Some(x) if x.iter().any(|&v| v > 1) => return Err(Error::Config("x0 must be binary".into())),
        Some(x) => x.to_vec(),
        None => vec![0; m],
    };
    let mut rng = stream(seed, "simulate");
    let mut eta = vec![0.0; m];
    let mut data = Vec::with_capacity(m * n_steps);
    for step in 0..burn_in + n_steps {
        model.linear_predictor(&prev, &mut eta);
        for (x, &y) in prev.iter_mut().zip(&eta) {
            *x = (rng.random::<f64>() < sigmoid(y)) as u8;
        }
        if step >= burn_in {
            data.extend_from_slice(&prev);
        }
    }
    EventMatrix::from_time_major(model.node_ids(), n_steps, data)
}

/// Thins `x` with independent `Bernoulli(p_i)` masks; a single `p` is
/// broadcast. Returns `(Z, W)`; the
/// mask is only for checking estimators, which never see it.
pub fn apply_missingness(x: &EventMatrix, p: &[f64], seed: u64) -> Result<(EventMatrix, EventMatrix)> {
    let m = x.n_nodes();
    let p = broadcast_probabilities(p, m, "p")?;
    let mut rng = stream(seed, "missingness");
    let mut z = Vec::with_capacity(m * x.n_steps());
    let mut w = Vec::with_capacity(m * x.n_steps());
    for t in 0..x.n_steps() {
        for (i, &xi) in x.column(t).iter().enumerate() {
            let keep = (rng.random::<f64>() < p[i]) as u8;
            w.push(keep);
            z.push(keep & xi);
        }
    }
    let mut zm = EventMatrix::from_time_major(x.node_ids().to_vec(), x.n_steps(), z)?;
    let mut wm = EventMatrix::from_time_major(x.node_ids().to_vec(), x.n_steps(), w)?;
    zm.bin_width_days = x.bin_width_days;
    wm.bin_width_days = x.bin_width_days;
    Ok((zm, wm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(800.0) - 1.0).abs() <= 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        // 1 / (1 + e^-0.5)
        assert!((sigmoid(0.5) - 0.622_459_331_201_854_6).abs() < 1e-15);
        assert!(sigmoid(f64::NAN).is_nan());
    }

    #[test]
    fn softplus_identity() {
        for &x in &[-30.0, -2.0, -0.5, 0.0, 0.5, 3.0, 40.0] {
            assert!((softplus(-x) - (softplus(x) - x)).abs() < 1e-12);
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_null_model_rate() {
        let model = NetworkModel::zeros(4);
        let x = simulate_bar(&model, 10_000, None, 11).unwrap();
        let se = (0.25f64 / 10_000.0).sqrt();
        for i in 0..4 {
            let rate = (0..x.n_steps()).map(|t| x.get(i, t) as f64).sum::<f64>() / 10_000.0;
            assert!((rate - 0.5).abs() <= 3.0 * se, "node {i}: {rate}");
        }
    }

    #[test]
    fn simulate_saturated_negative_bias_is_silent() {
        let model = NetworkModel::new(4, vec![0.0; 16], vec![-10.0; 4]).unwrap();
        let x = simulate_bar(&model, 100, None, 3).unwrap();
        assert_eq!(x.total(), 0);
    }

    #[test]
    fn simulate_is_deterministic_and_prefix_consistent() {
        let model = NetworkModel::from_rows(&[vec![0.3, -0.2], vec![0.5, 0.1]], vec![0.1, -0.2]).unwrap();
        let a = simulate_bar(&model, 200, None, 5).unwrap();
        let b = simulate_bar(&model, 200, None, 5).unwrap();
        assert_eq!(a, b);
        let short = simulate_bar(&model, 50, None, 5).unwrap();
        assert_eq!(short, a.slice_steps(0, 50).unwrap());
        assert_ne!(a, simulate_bar(&model, 200, None, 6).unwrap());
    }

    #[test]
    fn simulate_rejects_bad_x0() {
        let model = NetworkModel::zeros(3);
        assert!(matches!(
            simulate_bar(&model, 5, Some(&[0, 1]), 0),
            Err(Error::Dimension(_))
        ));
        assert!(simulate_bar(&model, 0, None, 0).is_err());
    }

    #[test]
    fn burn_in_shifts_the_stream() {
        let model = NetworkModel::zeros(2);
        let long = simulate_bar(&model, 30, None, 9).unwrap();
        let burned = simulate_bar_with_burn_in(&model, 20, None, 10, 9).unwrap();
        assert_eq!(burned, long.slice_steps(10, 30).unwrap());
    }

    #[test]
    fn full_observation_keeps_everything() {
        let x = simulate_bar(&NetworkModel::zeros(5), 40, None, 1).unwrap();
        let (z, w) = apply_missingness(&x, &[1.0; 5], 2).unwrap();
        assert_eq!(z, x);
        assert_eq!(w.total(), 5 * 40);
    }

    #[test]
    fn vanishing_observation_drops_everything() {
        let ones = EventMatrix::from_time_major(default_node_ids(4), 100, vec![1; 400]).unwrap();
        let (z, _) = apply_missingness(&ones, &[1e-12; 4], 2).unwrap();
        assert_eq!(z.total(), 0);
    }

    #[test]
    fn half_thinning_rate() {
        let ones = EventMatrix::from_time_major(default_node_ids(10), 1000, vec![1; 10_000]).unwrap();
        let (z, _) = apply_missingness(&ones, &[0.5; 10], 8).unwrap();
        let se = (0.25f64 / 10_000.0).sqrt();
        assert!((z.mean() - 0.5).abs() <= 3.0 * se);
    }

    #[test]
    fn thinning_expectation_by_enumeration() {
        // M = 2, T = 2: E[Z | X] = p_i X by summing over all 16 masks.
        let x = EventMatrix::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        let p = [0.3, 0.8];
        let mut expect = [0.0f64; 4];
        for mask in 0u32..16 {
            let mut weight = 1.0;
            for cell in 0..4 {
                let i = cell % 2;
                let w = (mask >> cell) & 1;
                weight *= if w == 1 { p[i] } else { 1.0 - p[i] };
            }
            for cell in 0..4 {
                let (i, t) = (cell % 2, cell / 2);
                let w = ((mask >> cell) & 1) as u8;
                expect[cell] += weight * (w & x.get(i, t)) as f64;
            }
        }
        for cell in 0..4 {
            let (i, t) = (cell % 2, cell / 2);
            assert!((expect[cell] - p[i] * x.get(i, t) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn missingness_spec_validation() {
        assert!(MissingnessSpec::uniform(3, 0.0, 0.5).is_err());
        assert!(MissingnessSpec::uniform(3, 0.5, 1.2).is_err());
        let low = MissingnessSpec::uniform(3, 0.5, 0.3).unwrap();
        assert!(low.below_convergence_threshold());
        let ok = MissingnessSpec::uniform(3, 0.5, 0.75).unwrap();
        assert!(!ok.below_convergence_threshold());
    }

    #[test]
    fn model_shape_checks() {
        assert!(NetworkModel::new(2, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(NetworkModel::new(2, vec![0.0; 4], vec![0.0; 3]).is_err());
        let m = NetworkModel::from_rows(&[vec![0.5, -0.5], vec![0.2, 0.0]], vec![0.0, 0.0]).unwrap();
        assert!(m.in_ball(1.0));
        assert!(!m.in_ball(0.9));
    }

    proptest! {
        #[test]
        fn thinned_never_exceeds_latent(seed in 0u64..1000, p in 0.05f64..1.0) {
            let model = NetworkModel::new(3, vec![0.4, -0.3, 0.2, 0.0, 0.5, -0.5, 0.1, 0.1, 0.1], vec![0.0; 3]).unwrap();
            let x = simulate_bar(&model, 60, None, seed).unwrap();
            let (z, w) = apply_missingness(&x, &[p; 3], seed + 1).unwrap();
            for t in 0..60 {
                for i in 0..3 {
                    prop_assert!(z.get(i, t) <= x.get(i, t));
                    prop_assert_eq!(z.get(i, t), x.get(i, t) & w.get(i, t));
                }
            }
        }
    }
}
