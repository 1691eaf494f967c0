//! Direct enumeration of the unbiased loss, for testing the fast paths.

use crate::error::{Error, Result};
use crate::model::{check_probabilities, EventMatrix};
use crate::taylor::cached_coeffs;

/// Work limit on `(M + 1)^q * T`.
pub const BRUTE_FORCE_BUDGET: f64 = 1e7;

/// Unbiased degree-`q` loss by walking every ordered index tuple of every
/// degree `d <= q`. Index 0 is the intercept (always observed, `p = 1`);
/// index `k >= 1` is node `k - 1`. A tuple contributes
/// `c_d * prod a_u * prod_{unique u} Z_u / p_u`.
pub fn brute_force_unbiased(
    a: &[f64],
    intercept: f64,
    z: &EventMatrix,
    m: usize,
    p_hat: &[f64],
    q: usize,
) -> Result<f64> {
    let n = z.n_nodes();
    if a.len() != n || p_hat.len() != n || m >= n {
        return Err(Error::Dimension("brute force: inputs disagree on M".into()));
    }
    check_probabilities(p_hat, "p_hat")?;
    z.require_fittable()?;
    let coeffs = cached_coeffs();
    if q > coeffs.q_max() {
        return Err(Error::Config(format!("degree {q} beyond coefficient table")));
    }
    let t_eff = z.n_steps() - 1;
    let work: f64 = (1..=q).map(|d| ((n + 1) as f64).powi(d as i32)).sum::<f64>() * t_eff as f64;
    if work > BRUTE_FORCE_BUDGET {
        return Err(Error::Config(format!(
            "brute force needs {work:.0} tuple visits, budget is {BRUTE_FORCE_BUDGET:.0}"
        )));
    }
    if n >= 128 {
        return Err(Error::Config("brute force supports at most 127 nodes".into()));
    }

    let weight = |k: usize| if k == 0 { intercept } else { a[k - 1] };
    let inv_p = |k: usize| if k == 0 { 1.0 } else { 1.0 / p_hat[k - 1] };

    let mut total = 0.0;
    let mut tuple = vec![0usize; q];
    for t in 0..t_eff {
        let col = z.column(t);
        let seen = |k: usize| k == 0 || col[k - 1] != 0;
        for d in 1..=q {
            let c = coeffs.get(d);
            if c == 0.0 {
                continue;
            }
            tuple[..d].iter_mut().for_each(|v| *v = 0);
            loop {
                if tuple[..d].iter().all(|&k| seen(k)) {
                    let mut prod = 1.0;
                    let mut unique: u128 = 0;
                    for &k in &tuple[..d] {
                        prod *= weight(k);
                        unique |= 1u128 << k;
                    }
                    let mut scale = 1.0;
                    for k in 0..=n {
                        if unique >> k & 1 == 1 {
                            scale *= inv_p(k);
                        }
                    }
                    total += c * prod * scale;
                }
                // odometer
                let mut pos = 0;
                while pos < d {
                    tuple[pos] += 1;
                    if tuple[pos] <= n {
                        break;
                    }
                    tuple[pos] = 0;
                    pos += 1;
                }
                if pos == d {
                    break;
                }
            }
        }
        if z.get(m, t + 1) != 0 {
            let mut lin = intercept;
            for i in 0..n {
                if col[i] != 0 {
                    lin += a[i] / p_hat[i];
                }
            }
            total -= lin / p_hat[m];
        }
    }
    Ok(coeffs.get(0) + total / t_eff as f64)
}
