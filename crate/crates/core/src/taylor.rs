//! Taylor coefficients of the Bernoulli log-partition `f(x) = log(1 + e^x)`
//! around zero, `c_q = f^(q)(0) / q!`.
//!
//! For `q >= 2` the coefficients have the closed form
//! `c_q = (2^q - 1) B_q / (q * q!)` in terms of Bernoulli numbers, so every
//! odd coefficient past the linear one vanishes and `|c_q|` decays like
//! `2 / (q * pi^q)`.

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest index computed exactly.
pub const MAX_EXACT_ORDER: usize = 64;

/// Order of the shared, precomputed table.
pub const CACHED_ORDER: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliNumbers {
    exact: Vec<BigRational>,
}

impl BernoulliNumbers {
    pub fn exact(&self) -> &[BigRational] {
        &self.exact
    }

    pub fn get(&self, q: usize) -> &BigRational {
        &self.exact[q]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.exact.iter().map(rational_to_f64).collect()
    }
}

/// `B_0 .. B_{q_max}` with the `B_1 = -1/2` convention, from
/// `sum_{j=0}^{m} C(m+1, j) B_j = 0` in exact rational arithmetic.
pub fn bernoulli_numbers(q_max: usize) -> Result<BernoulliNumbers> {
    if q_max > MAX_EXACT_ORDER {
        return Err(Error::Config(format!(
            "Bernoulli numbers are computed exactly up to order {MAX_EXACT_ORDER}, got {q_max}"
        )));
    }
    let binom = binomial_rows(q_max + 1);
    let mut b: Vec<BigRational> = Vec::with_capacity(q_max + 1);
    b.push(BigRational::one());
    for m in 1..=q_max {
        let mut acc = BigRational::zero();
        for (j, bj) in b.iter().enumerate() {
            acc += bj * BigRational::from_integer(binom[m + 1][j].clone());
        }
        b.push(-acc / BigRational::from_integer(BigInt::from(m + 1)));
    }
    Ok(BernoulliNumbers { exact: b })
}

fn binomial_rows(n: usize) -> Vec<Vec<BigInt>> {
    let mut rows = vec![vec![BigInt::one()]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![BigInt::one(); i + 1];
        for k in 1..i {
            row[k] = &prev[k - 1] + &prev[k];
        }
        rows.push(row);
    }
    rows
}

fn rational_to_f64(r: &BigRational) -> f64 {
    // Numerator and denominator can exceed f64 range separately for large q,
    // so scale both before dividing.
    let num = r.numer();
    let den = r.denom();
    let shift = num.bits().max(den.bits()).saturating_sub(1000);
    let n = (num >> shift).to_f64().unwrap_or(f64::NAN);
    let d = (den >> shift).to_f64().unwrap_or(f64::NAN);
    n / d
}

/// Taylor coefficients `c_0 ..= c_{q_max}` of `log(1 + e^x)` at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    coeffs: Vec<f64>,
    /// `None` for `c_0 = log 2`, which is irrational.
    exact: Vec<Option<BigRational>>,
}

impl CoeffTable {
    pub fn q_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, q: usize) -> f64 {
        self.coeffs[q]
    }

    pub fn exact(&self, q: usize) -> Option<&BigRational> {
        self.exact[q].as_ref()
    }

    /// `sum_{d <= degree} c_d x^d`.
    pub fn eval_truncated(&self, x: f64, degree: usize) -> f64 {
        self.coeffs[..=degree]
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x + c)
    }

    /// `sum_{q > degree} |c_q|` over the stored table.
    pub fn tail_abs_sum(&self, degree: usize) -> f64 {
        self.coeffs[degree + 1..].iter().map(|c| c.abs()).sum()
    }
}

pub fn partition_coeffs(q_max: usize) -> Result<CoeffTable> {
    let bern = bernoulli_numbers(q_max.max(1))?;
    let mut exact = Vec::with_capacity(q_max + 1);
    exact.push(None);
    if q_max >= 1 {
        exact.push(Some(BigRational::new(1.into(), 2.into())));
    }
    let mut factorial = BigInt::one();
    for q in 2..=q_max {
        factorial *= BigInt::from(q);
        let two_q_minus_one = (BigInt::one() << q) - BigInt::one();
        let c = bern.get(q) * BigRational::from_integer(two_q_minus_one)
            / BigRational::from_integer(&factorial * BigInt::from(q));
        exact.push(Some(c));
    }
    let coeffs = exact
        .iter()
        .map(|c| match c {
            None => std::f64::consts::LN_2,
            Some(r) => rational_to_f64(r),
        })
        .collect();
    Ok(CoeffTable { coeffs, exact })
}

/// Shared table up to [`CACHED_ORDER`].
pub fn cached_coeffs() -> &'static CoeffTable {
    static TABLE: OnceLock<CoeffTable> = OnceLock::new();
    TABLE.get_or_init(|| partition_coeffs(CACHED_ORDER).expect("cached order is within the exact range"))
}

/// `|c_q| * q * pi^q`; bounded by 4 for even `q >= 2` and tending to 2.
pub fn decay_product(table: &CoeffTable, q: usize) -> f64 {
    table.get(q).abs() * q as f64 * std::f64::consts::PI.powi(q as i32)
}
