//! Row losses of the BAR likelihood and their gradients.
//!
//! Every loss is per target row `m` and averages over the `T - 1`
//! transitions `t -> t + 1` of the event matrix:
//!
//! * complete: `c_0`-free softplus likelihood `f(y_t) - X_{t+1,m} y_t`
//!   with `y_t = b + a . X_t`;
//! * truncated(q): `f` replaced by its degree-`q` Taylor polynomial;
//! * unbiased(q, p_hat): the degree-`q` polynomial rewritten so that every
//!   monomial is divided by `p_u` once per distinct coordinate it touches,
//!   which makes its conditional expectation over the thinning masks equal
//!   the truncated loss on the latent process.
//!
//! The intercept `b` behaves as an extra coordinate that is always on and
//! always observed, so it never picks up a `1/p` factor. The constant
//! `c_0 = log 2` is kept in every family.
//!
//! The unbiased polynomial for one step is evaluated through its exponential
//! generating function. With `u_i = Z_i / p_i`,
//! `sum_d P_d x^d / d! = prod_i (1 + u_i (e^{a_i x} - 1))`, so `P_d` is the
//! `d`-th moment built from the cumulants
//! `kappa_n = sum_i Z_i a_i^n gamma_n(p_i)` with
//! `gamma_n(p) = sum_k S(n, k) (-1)^{k-1} (k-1)! p^{-k}`. This is the
//! set-partition inclusion-exclusion over power sums, grouped by block
//! size; it costs `O(nnz * q)` per step plus an `O(q^2)` moment recursion.

mod brute;
mod suffstats;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_unbiased, BRUTE_FORCE_BUDGET};
pub use suffstats::{Design, SuffStats};

use crate::error::{Error, Result};
use crate::model::{check_probabilities, sigmoid, softplus, EventMatrix, NetworkModel};
use crate::taylor::cached_coeffs;

/// Highest degree accepted for the unbiased family.
pub const MAX_UNBIASED_DEGREE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFamily {
    Complete,
    Truncated { q: usize },
    Unbiased { q: usize, p_hat: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub include_intercept: bool,
}

fn normalize_degree(q: usize) -> Result<usize> {
    if q < 2 {
        return Err(Error::Config(format!("truncation degree must be at least 2, got {q}")));
    }
    if q % 2 == 1 {
        log::warn!("degree {q} has no odd term beyond the linear one; using {}", q - 1);
        return Ok(q - 1);
    }
    Ok(q)
}

impl LossSpec {
    pub fn complete() -> Self {
        LossSpec {
            family: LossFamily::Complete,
            include_intercept: false,
        }
    }

    pub fn truncated(q: usize) -> Result<Self> {
        let q = normalize_degree(q)?;
        if q > cached_coeffs().q_max() {
            return Err(Error::Config(format!("degree {q} beyond coefficient table")));
        }
        Ok(LossSpec {
            family: LossFamily::Truncated { q },
            include_intercept: false,
        })
    }

    pub fn unbiased(q: usize, p_hat: Vec<f64>) -> Result<Self> {
        let q = normalize_degree(q)?;
        if q > MAX_UNBIASED_DEGREE {
            return Err(Error::Config(format!(
                "unbiased loss supports degree at most {MAX_UNBIASED_DEGREE}, got {q}"
            )));
        }
        check_probabilities(&p_hat, "p_hat")?;
        if p_hat.iter().any(|&p| p <= 1.0 / std::f64::consts::PI) {
            log::warn!(
                "p_hat <= 1/pi: the degree-{q} loss is defined but the untruncated series diverges"
            );
        }
        Ok(LossSpec {
            family: LossFamily::Unbiased { q, p_hat },
            include_intercept: false,
        })
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.include_intercept = on;
        self
    }

    /// Re-checks invariants, e.g. after deserialization.
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        match &self.family {
            LossFamily::Complete => Ok(()),
            LossFamily::Truncated { q } => {
                if *q < 2 || q % 2 == 1 || *q > cached_coeffs().q_max() {
                    return Err(Error::Config(format!("invalid truncation degree {q}")));
                }
                Ok(())
            }
            LossFamily::Unbiased { q, p_hat } => {
                if *q < 2 || q % 2 == 1 || *q > MAX_UNBIASED_DEGREE {
                    return Err(Error::Config(format!("invalid unbiased degree {q}")));
                }
                if p_hat.len() != n_nodes {
                    return Err(Error::Dimension(format!(
                        "p_hat has {} entries for {n_nodes} nodes",
                        p_hat.len()
                    )));
                }
                check_probabilities(p_hat, "p_hat")
            }
        }
    }

    /// Broadcasts a single-entry `p_hat` to `n_nodes`.
    pub fn broadcast(mut self, n_nodes: usize) -> Self {
        if let LossFamily::Unbiased { p_hat, .. } = &mut self.family {
            if p_hat.len() == 1 && n_nodes > 1 {
                *p_hat = vec![p_hat[0]; n_nodes];
            }
        }
        self
    }

    pub fn degree(&self) -> Option<usize> {
        match &self.family {
            LossFamily::Complete => None,
            LossFamily::Truncated { q } | LossFamily::Unbiased { q, .. } => Some(*q),
        }
    }
}

/// `gamma_n(p)` for `n = 1..=q`, i.e. `n! [x^n] log(1 + (e^x - 1) / p)`.
fn cumulant_weights(p: f64, q: usize) -> Vec<f64> {
    // Stirling numbers of the second kind, exact in f64 for q <= 12.
    let mut stirling = vec![vec![0.0f64; q + 1]; q + 1];
    stirling[0][0] = 1.0;
    for n in 1..=q {
        for k in 1..=n {
            stirling[n][k] = k as f64 * stirling[n - 1][k] + stirling[n - 1][k - 1];
        }
    }
    let inv = 1.0 / p;
    (1..=q)
        .map(|n| {
            let mut acc = 0.0;
            let mut fact = 1.0; // (k-1)!
            let mut pow = inv;
            for k in 1..=n {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                acc += sign * stirling[n][k] * fact * pow;
                fact *= k as f64;
                pow *= inv;
            }
            acc
        })
        .collect()
}

fn binomials(q: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0]];
    for n in 1..=q {
        let prev = &rows[n - 1];
        let mut row = vec![1.0; n + 1];
        for k in 1..n {
            row[k] = prev[k - 1] + prev[k];
        }
        rows.push(row);
    }
    rows
}

#[derive(Debug, Clone)]
enum Kernel {
    Complete {
        design: Arc<Design>,
    },
    Polynomial {
        design: Arc<Design>,
        degree: usize,
    },
    Quadratic {
        stats: Arc<SuffStats>,
        inv_p: Vec<f64>,
    },
    Cumulant {
        design: Arc<Design>,
        degree: usize,
        inv_p: Vec<f64>,
        /// Node-major `gamma[i * degree + n - 1]`.
        gamma: Vec<f64>,
        binom: Vec<Vec<f64>>,
    },
}

/// Shared per-dataset caches for building many [`RowLoss`]es.
#[derive(Debug, Clone)]
pub struct PreparedData {
    design: Arc<Design>,
    stats: Arc<SuffStats>,
    targets: Vec<Vec<f64>>,
    n_nodes: usize,
}

impl PreparedData {
    pub fn new(data: &EventMatrix) -> Result<Self> {
        data.require_fittable()?;
        let n = data.n_nodes();
        let t_eff = data.n_steps() - 1;
        let targets = (0..n)
            .map(|m| (0..t_eff).map(|t| data.get(m, t + 1) as f64).collect())
            .collect();
        Ok(PreparedData {
            design: Arc::new(Design::new(data)),
            stats: Arc::new(SuffStats::new(data)),
            targets,
            n_nodes: n,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn t_eff(&self) -> usize {
        self.design.t_eff()
    }

    pub fn design(&self) -> &Design {
        &self.design
    }
}

/// One row's objective with its evaluation strategy fixed at construction.
#[derive(Debug, Clone)]
pub struct RowLoss {
    target: usize,
    n_nodes: usize,
    t_eff: usize,
    intercept: bool,
    next: Vec<f64>,
    kernel: Kernel,
}

impl RowLoss {
    pub fn new(spec: &LossSpec, data: &EventMatrix, m: usize) -> Result<Self> {
        Self::from_prepared(spec, &PreparedData::new(data)?, m)
    }

    pub fn from_prepared(spec: &LossSpec, prep: &PreparedData, m: usize) -> Result<Self> {
        Self::build(spec, prep, m, false)
    }

    fn build(spec: &LossSpec, prep: &PreparedData, m: usize, generic: bool) -> Result<Self> {
        let n = prep.n_nodes;
        if m >= n {
            return Err(Error::Dimension(format!("row {m} out of range for {n} nodes")));
        }
        let spec = spec.clone().broadcast(n);
        spec.validate(n)?;
        let kernel = match &spec.family {
            LossFamily::Complete => Kernel::Complete {
                design: prep.design.clone(),
            },
            LossFamily::Truncated { q: 2 } if !generic => Kernel::Quadratic {
                stats: prep.stats.clone(),
                inv_p: vec![1.0; n],
            },
            LossFamily::Truncated { q } => Kernel::Polynomial {
                design: prep.design.clone(),
                degree: *q,
            },
            LossFamily::Unbiased { q: 2, p_hat } if !generic => Kernel::Quadratic {
                stats: prep.stats.clone(),
                inv_p: p_hat.iter().map(|p| 1.0 / p).collect(),
            },
            LossFamily::Unbiased { q, p_hat } => {
                let mut gamma = Vec::with_capacity(n * q);
                for &p in p_hat {
                    gamma.extend(cumulant_weights(p, *q));
                }
                Kernel::Cumulant {
                    design: prep.design.clone(),
                    degree: *q,
                    inv_p: p_hat.iter().map(|p| 1.0 / p).collect(),
                    gamma,
                    binom: binomials(*q),
                }
            }
        };
        Ok(RowLoss {
            target: m,
            n_nodes: n,
            t_eff: prep.t_eff(),
            intercept: spec.include_intercept,
            next: prep.targets[m].clone(),
            kernel,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn t_eff(&self) -> usize {
        self.t_eff
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn value(&self, a: &[f64], b: f64) -> f64 {
        self.eval(a, b, None).0
    }

    /// Writes `dL/da` into `grad_a` and returns `(L, dL/db)`; `dL/db` is 0
    /// when the intercept is off.
    pub fn value_grad(&self, a: &[f64], b: f64, grad_a: &mut [f64]) -> (f64, f64) {
        self.eval(a, b, Some(grad_a))
    }

    fn eval(&self, a: &[f64], b: f64, mut grad: Option<&mut [f64]>) -> (f64, f64) {
        debug_assert_eq!(a.len(), self.n_nodes);
        let b = if self.intercept { b } else { 0.0 };
        let coeffs = cached_coeffs();
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut gb = 0.0;
        let mut total = 0.0;
        match &self.kernel {
            Kernel::Complete { design } => {
                for t in 0..self.t_eff {
                    let act = design.active(t);
                    let y = b + act.iter().map(|&i| a[i as usize]).sum::<f64>();
                    let x_next = self.next[t];
                    total += softplus(y) - x_next * y;
                    if let Some(g) = grad.as_deref_mut() {
                        let dy = sigmoid(y) - x_next;
                        for &i in act {
                            g[i as usize] += dy;
                        }
                        gb += dy;
                    }
                }
                // softplus already carries log 2
                total -= coeffs.get(0) * self.t_eff as f64;
            }
            Kernel::Polynomial { design, degree } => {
                let c = &coeffs.coeffs()[..=*degree];
                for t in 0..self.t_eff {
                    let act = design.active(t);
                    let y = b + act.iter().map(|&i| a[i as usize]).sum::<f64>();
                    let x_next = self.next[t];
                    let mut val = 0.0;
                    let mut dval = 0.0;
                    for d in (1..=*degree).rev() {
                        val = val * y + c[d];
                        dval = dval * y + d as f64 * c[d];
                    }
                    total += val * y - x_next * y;
                    if let Some(g) = grad.as_deref_mut() {
                        let dy = dval - x_next;
                        for &i in act {
                            g[i as usize] += dy;
                        }
                        gb += dy;
                    }
                }
            }
            Kernel::Quadratic { stats, inv_p } => {
                let (v, gb_sum) = self.quadratic(stats, inv_p, a, b, grad.as_deref_mut());
                total = v;
                gb = gb_sum;
            }
            Kernel::Cumulant {
                design,
                degree,
                inv_p,
                gamma,
                binom,
            } => {
                let q = *degree;
                let c = &coeffs.coeffs()[..=q];
                let inv_pm = inv_p[self.target];
                let mut kappa = vec![0.0; q + 1];
                let mut moments = vec![0.0; q + 1];
                let mut beta = vec![0.0; q + 1];
                for t in 0..self.t_eff {
                    let act = design.active(t);
                    kappa.iter_mut().for_each(|v| *v = 0.0);
                    kappa[1] = b;
                    let mut lin = b;
                    for &i in act {
                        let i = i as usize;
                        let g = &gamma[i * q..(i + 1) * q];
                        let mut pw = a[i];
                        for n in 1..=q {
                            kappa[n] += pw * g[n - 1];
                            pw *= a[i];
                        }
                        lin += a[i] * inv_p[i];
                    }
                    moments[0] = 1.0;
                    for d in 1..=q {
                        let row = &binom[d - 1];
                        let mut acc = 0.0;
                        for j in 1..=d {
                            acc += row[j - 1] * kappa[j] * moments[d - j];
                        }
                        moments[d] = acc;
                    }
                    let target = self.next[t] * inv_pm;
                    let poly: f64 = (1..=q).map(|d| c[d] * moments[d]).sum();
                    total += poly - target * lin;
                    if let Some(gr) = grad.as_deref_mut() {
                        for n in 1..=q {
                            let mut acc = 0.0;
                            for d in n..=q {
                                if c[d] != 0.0 {
                                    acc += c[d] * binom[d][n] * moments[d - n];
                                }
                            }
                            beta[n] = acc;
                        }
                        for &i in act {
                            let i = i as usize;
                            let g = &gamma[i * q..(i + 1) * q];
                            let mut pw = 1.0;
                            let mut acc = 0.0;
                            for n in 1..=q {
                                acc += beta[n] * n as f64 * pw * g[n - 1];
                                pw *= a[i];
                            }
                            gr[i] += acc - target * inv_p[i];
                        }
                        gb += beta[1] - target;
                    }
                }
            }
        }
        let scale = 1.0 / self.t_eff as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        let gb = if self.intercept { gb * scale } else { 0.0 };
        (coeffs.get(0) + total * scale, gb)
    }

    /// Degree-2 objective as a quadratic form in the sufficient statistics.
    /// Returns the unnormalized sum and the unnormalized intercept gradient.
    fn quadratic(&self, s: &SuffStats, inv_p: &[f64], a: &[f64], b: f64, grad: Option<&mut [f64]>) -> (f64, f64) {
        let n = self.n_nodes;
        let m = self.target;
        let coeffs = cached_coeffs();
        let (c1, c2) = (coeffs.get(1), coeffs.get(2));
        let t = self.t_eff as f64;
        let inv_pm = inv_p[m];
        let cross = &s.cross[m * n..(m + 1) * n];

        let v: Vec<f64> = a.iter().zip(inv_p).map(|(a, ip)| a * ip).collect();
        let gv: Vec<f64> = (0..n)
            .map(|i| {
                let row = &s.gram[i * n..(i + 1) * n];
                row.iter().zip(&v).map(|(g, v)| g * v).sum()
            })
            .collect();
        let mut vs = 0.0;
        let mut vgv = 0.0;
        let mut diag = 0.0;
        let mut vc = 0.0;
        for i in 0..n {
            vs += v[i] * s.sums[i];
            vgv += v[i] * gv[i];
            diag += (a[i] * a[i] * inv_p[i] - v[i] * v[i]) * s.sums[i];
            vc += v[i] * cross[i];
        }
        let p1 = t * b + vs;
        let p2 = t * b * b + 2.0 * b * vs + vgv + diag;
        let target = inv_pm * (s.target_counts[m] * b + vc);
        let value = c1 * p1 + c2 * p2 - target;

        if let Some(g) = grad {
            for i in 0..n {
                let si = s.sums[i];
                let dv = c1 * si + c2 * (2.0 * b * si + 2.0 * gv[i] - 2.0 * v[i] * si) - inv_pm * cross[i];
                g[i] = dv * inv_p[i] + c2 * 2.0 * a[i] * si * inv_p[i];
            }
        }
        let gb = c1 * t + c2 * (2.0 * t * b + 2.0 * vs) - inv_pm * s.target_counts[m];
        (value, gb)
    }
}

fn check_row_inputs(a: &[f64], data: &EventMatrix, m: usize) -> Result<()> {
    if a.len() != data.n_nodes() {
        return Err(Error::Dimension(format!(
            "row vector has length {}, data has {} nodes",
            a.len(),
            data.n_nodes()
        )));
    }
    if m >= data.n_nodes() {
        return Err(Error::Dimension(format!("row {m} out of range")));
    }
    data.require_fittable()
}

fn warn_outside_ball(a: &[f64], intercept: f64) {
    let radius = a.iter().map(|v| v.abs()).sum::<f64>() + intercept.abs();
    if radius > 1.0 {
        log::warn!("||a||_1 + |b| = {radius:.3} > 1: outside the Taylor expansion's accuracy region");
    }
}

/// Complete-data loss for row `m`: `(1/(T-1)) sum_t f(y_t) - X_{t+1,m} y_t`
/// with `y_t = intercept + a . X_t`.
pub fn loss_complete(a: &[f64], intercept: f64, x: &EventMatrix, m: usize) -> Result<f64> {
    check_row_inputs(a, x, m)?;
    Ok(RowLoss::new(&LossSpec::complete().with_intercept(true), x, m)?.value(a, intercept))
}

/// Degree-`q` Taylor truncation of [`loss_complete`].
pub fn loss_truncated(a: &[f64], intercept: f64, x: &EventMatrix, m: usize, q: usize) -> Result<f64> {
    check_row_inputs(a, x, m)?;
    warn_outside_ball(a, intercept);
    let spec = LossSpec::truncated(q)?.with_intercept(true);
    Ok(RowLoss::new(&spec, x, m)?.value(a, intercept))
}

/// Degree-2 unbiased loss from the sufficient statistics `(s, G, C)`.
pub fn loss_unbiased_deg2(a: &[f64], intercept: f64, z: &EventMatrix, m: usize, p_hat: &[f64]) -> Result<f64> {
    check_row_inputs(a, z, m)?;
    let spec = LossSpec::unbiased(2, p_hat.to_vec())?.with_intercept(true);
    Ok(RowLoss::new(&spec, z, m)?.value(a, intercept))
}

/// Degree-`q` unbiased loss through the per-step cumulant recursion, for any
/// even `q <= 12` (including 2).
pub fn loss_unbiased(a: &[f64], intercept: f64, z: &EventMatrix, m: usize, p_hat: &[f64], q: usize) -> Result<f64> {
    check_row_inputs(a, z, m)?;
    let spec = LossSpec::unbiased(q, p_hat.to_vec())?.with_intercept(true);
    let prep = PreparedData::new(z)?;
    Ok(RowLoss::build(&spec, &prep, m, true)?.value(a, intercept))
}

/// Gradient of the loss selected by `spec` with respect to `(a, intercept)`.
/// The intercept component is 0 when `spec.include_intercept` is false.
pub fn grad(spec: &LossSpec, a: &[f64], intercept: f64, data: &EventMatrix, m: usize) -> Result<(Vec<f64>, f64)> {
    check_row_inputs(a, data, m)?;
    let row = RowLoss::new(spec, data, m)?;
    let mut g = vec![0.0; a.len()];
    let (_, gb) = row.value_grad(a, intercept, &mut g);
    Ok((g, gb))
}

/// Loss of a whole matrix: the sum of its row losses.
pub fn network_loss(spec: &LossSpec, model: &NetworkModel, data: &EventMatrix) -> Result<f64> {
    if model.dim() != data.n_nodes() {
        return Err(Error::Dimension("model and data disagree on M".into()));
    }
    let prep = PreparedData::new(data)?;
    let mut total = 0.0;
    for m in 0..model.dim() {
        total += RowLoss::from_prepared(spec, &prep, m)?.value(model.row(m), model.nu()[m]);
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
