use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measurement from one trial of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub experiment: String,
    pub estimator: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub p: f64,
    pub p_hat: Option<f64>,
    pub q: Option<usize>,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub estimator: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub p: f64,
    pub p_hat: Option<f64>,
    pub q: Option<usize>,
    pub metric: String,
    pub n: usize,
    pub median: f64,
    /// Sample standard deviation; NaN for a single trial.
    pub std: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

type CellKey = (String, String, usize, u64, Option<u64>, Option<usize>, String);

fn key(r: &RawRow) -> CellKey {
    (
        r.experiment.clone(),
        r.estimator.clone(),
        r.t,
        r.p.to_bits(),
        r.p_hat.map(f64::to_bits),
        r.q,
        r.metric.clone(),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<RawRow>,
}

impl ResultTable {
    /// Sorted by cell, then trial, so output does not depend on scheduling.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.experiment, &a.estimator, a.t, a.p_hat.map(f64::to_bits), a.q, &a.metric, a.trial).cmp(&(
                &b.experiment,
                &b.estimator,
                b.t,
                b.p_hat.map(f64::to_bits),
                b.q,
                &b.metric,
                b.trial,
            ))
        });
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut cells: BTreeMap<CellKey, (RawRow, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            cells.entry(key(r)).or_insert_with(|| (r.clone(), Vec::new())).1.push(r.value);
        }
        let mut out: Vec<SummaryRow> = cells
            .into_values()
            .map(|(r, values)| SummaryRow {
                experiment: r.experiment,
                estimator: r.estimator,
                t: r.t,
                p: r.p,
                p_hat: r.p_hat,
                q: r.q,
                metric: r.metric,
                n: values.len(),
                median: median(&values),
                std: sample_std(&values),
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.estimator, a.t, a.p_hat.map(f64::to_bits), a.q, &a.metric).cmp(&(
                &b.estimator,
                b.t,
                b.p_hat.map(f64::to_bits),
                b.q,
                &b.metric,
            ))
        });
        out
    }

    /// Median of `metric` for `estimator` at `T` (and `p_hat` when given).
    pub fn median_of(&self, estimator: &str, t: usize, p_hat: Option<f64>, metric: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.estimator == estimator
                    && r.t == t
                    && r.metric == metric
                    && p_hat.is_none_or(|ph| r.p_hat.is_some_and(|v| (v - ph).abs() < 1e-9))
            })
            .map(|r| r.value)
            .collect();
        (!values.is_empty()).then(|| median(&values))
    }

    pub fn write_raw<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<raw table>", e))
    }

    pub fn read_raw<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(ResultTable { rows })
    }

    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in self.summary() {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<summary table>", e))
    }
}

/// Gnuplot script plotting summary medians with sample-std error bars.
pub fn gnuplot_script(experiment: &str, x_column: &str) -> String {
    let col = match x_column {
        "p_hat" => 5,
        _ => 3,
    };
    format!(
        "# usage: gnuplot -p plot.gp  (run inside the output directory)\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set title '{experiment}'\n\
         set xlabel '{x_column}'\n\
         set ylabel 'median'\n\
         estimators = system(\"tail -n +2 summary.csv | cut -d, -f2 | sort -u | tr '\\\\n' ' '\")\n\
         plot for [e in estimators] '< grep \",'.e.',\" summary.csv' using {col}:9:10 with yerrorlines title e\n"
    )
}
