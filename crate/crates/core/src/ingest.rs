//! Incident records to binned event matrices, node selection and the
//! train/test split used for hold-out evaluation.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{apply_missingness, EventMatrix};

/// Largest tolerated share of unparseable rows.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentRecord {
    pub timestamp: NaiveDateTime,
    pub node_key: String,
    pub primary_type: String,
}

/// Input column names, compared after lowercasing and mapping spaces to
/// underscores, so `"Community Area"` matches `community_area`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub primary_type: String,
    pub node: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            date: "date".into(),
            primary_type: "primary_type".into(),
            node: "community_area".into(),
        }
    }
}

fn normalize_column(name: &str) -> String {
    name.trim().to_lowercase().replace([' ', '-'], "_")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectsReport {
    pub total_rows: usize,
    pub rejected: Vec<Reject>,
}

const DATE_FORMATS: [&str; 4] = [
    "%m/%d/%Y %I:%M:%S %p",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%m/%d/%Y %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Reads incident rows, keeping those whose primary type equals
/// `type_filter` (case-insensitive) when one is given.
pub fn read_incidents<R: Read>(
    input: R,
    columns: &ColumnMap,
    type_filter: Option<&str>,
) -> Result<(Vec<IncidentRecord>, RejectsReport)> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(normalize_column).collect();
    let find = |want: &str| {
        let want = normalize_column(want);
        headers
            .iter()
            .position(|h| *h == want)
            .ok_or_else(|| Error::Parse(format!("input has no column {want:?}; found {headers:?}")))
    };
    let (di, ti, ni) = (find(&columns.date)?, find(&columns.primary_type)?, find(&columns.node)?);
    let filter = type_filter.map(str::to_uppercase);

    let mut records = Vec::new();
    let mut report = RejectsReport::default();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = r.position().line();
        match r.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.total_rows += 1;
                report.rejected.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        report.total_rows += 1;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let primary = field(ti);
        if let Some(f) = &filter {
            if primary.to_uppercase() != *f {
                continue;
            }
        }
        let node = field(ni);
        if node.is_empty() {
            report.rejected.push(Reject {
                line,
                reason: "empty node key".into(),
            });
            continue;
        }
        match parse_timestamp(field(di)) {
            Some(timestamp) => records.push(IncidentRecord {
                timestamp,
                node_key: node.to_owned(),
                primary_type: primary.to_owned(),
            }),
            None => report.rejected.push(Reject {
                line,
                reason: format!("unparseable date {:?}", field(di)),
            }),
        }
    }
    let rejected = report.rejected.len();
    if report.total_rows > 0 && rejected as f64 > MAX_REJECT_FRACTION * report.total_rows as f64 {
        return Err(Error::TooManyRejects {
            rejected,
            total: report.total_rows,
        });
    }
    if rejected > 0 {
        log::warn!("{rejected} of {} rows rejected", report.total_rows);
    }
    Ok((records, report))
}

/// Midnight of the Monday starting the week of the earliest record.
pub fn default_origin(records: &[IncidentRecord]) -> Option<NaiveDateTime> {
    let first = records.iter().map(|r| r.timestamp).min()?;
    let day = first.date() - Duration::days(first.weekday().num_days_from_monday() as i64);
    day.and_hms_opt(0, 0, 0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub n_bins: usize,
    /// Records of selected nodes falling outside the covered span.
    pub out_of_span: usize,
    /// Records whose node is not among the selected ones.
    pub other_nodes: usize,
}

/// Entry `(t, i)` is 1 iff some record of `nodes[i]` falls in
/// `[origin + t width, origin + (t + 1) width)`. Without `n_bins` the span
/// runs through the last record.
pub fn bin_events(
    records: &[IncidentRecord],
    bin_width: Duration,
    origin: NaiveDateTime,
    nodes: &[String],
    n_bins: Option<usize>,
) -> Result<(EventMatrix, BinSummary)> {
    if nodes.is_empty() {
        return Err(Error::Config("no nodes selected".into()));
    }
    let width = bin_width
        .num_nanoseconds()
        .filter(|w| *w > 0)
        .ok_or_else(|| Error::Config(format!("bin width must be positive, got {bin_width}")))?;
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let bin_of = |ts: NaiveDateTime| -> Option<i64> {
        (ts - origin).num_nanoseconds().map(|d| d.div_euclid(width))
    };
    let n_bins = match n_bins {
        Some(n) => n,
        None => records
            .iter()
            .filter(|r| index.contains_key(r.node_key.as_str()))
            .filter_map(|r| bin_of(r.timestamp))
            .max()
            .map_or(0, |b| (b + 1).max(0) as usize),
    };
    let mut summary = BinSummary {
        n_bins,
        ..Default::default()
    };
    let mut x = EventMatrix::zeros(nodes.to_vec(), n_bins);
    for r in records {
        let Some(&i) = index.get(r.node_key.as_str()) else {
            summary.other_nodes += 1;
            continue;
        };
        match bin_of(r.timestamp) {
            Some(b) if b >= 0 && (b as usize) < n_bins => x.set(i, b as usize, true),
            _ => summary.out_of_span += 1,
        }
    }
    if summary.out_of_span > 0 {
        log::info!("{} records fall outside the {n_bins} bins", summary.out_of_span);
    }
    x.bin_width_days = Some(width as f64 / 86_400e9);
    Ok((x, summary))
}

/// The `k` keys with the most records; ties go to the smaller key.
pub fn top_k_nodes(records: &[IncidentRecord], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.node_key).or_default() += 1;
    }
    if counts.len() < k {
        return Err(Error::Config(format!("asked for {k} nodes but only {} have records", counts.len())));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // Stable over the key order of the map.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    Ok(ranked.into_iter().take(k).map(|(key, _)| key.to_owned()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_bins: usize,
    pub test_bins: usize,
    pub mask_p: f64,
    pub seed: u64,
}

/// Column split at `train_bins`, with the training part thinned at `mask_p`.
/// Returns `(x_train, z_train, x_test)`.
pub fn split_and_mask(x: &EventMatrix, spec: &SplitSpec) -> Result<(EventMatrix, EventMatrix, EventMatrix)> {
    let end = spec.train_bins + spec.test_bins;
    if end > x.n_steps() {
        return Err(Error::Config(format!(
            "split needs {end} bins but the matrix has {}",
            x.n_steps()
        )));
    }
    let train = x.slice_steps(0, spec.train_bins)?;
    let test = x.slice_steps(spec.train_bins, end)?;
    let (z, _) = apply_missingness(&train, &[spec.mask_p], spec.seed)?;
    Ok((train, z, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_bar;
    use crate::NetworkModel;

    fn day(d: i64) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::days(d)
    }

    fn rec(d: i64, node: &str) -> IncidentRecord {
        IncidentRecord {
            timestamp: day(d),
            node_key: node.into(),
            primary_type: "HOMICIDE".into(),
        }
    }

    fn nodes(keys: &[&str]) -> Vec<String> {
        keys.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn weekly_fixture() {
        let recs = [rec(2, "n1"), rec(2, "n1"), rec(9, "n2")];
        let (x, s) = bin_events(&recs, Duration::days(7), day(0), &nodes(&["n1", "n2"]), Some(2)).unwrap();
        assert_eq!(x, EventMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap().with_node_ids(nodes(&["n1", "n2"])).unwrap().tap_width(7.0));
        assert_eq!(s.out_of_span, 0);
    }

    trait TapWidth {
        fn tap_width(self, days: f64) -> Self;
    }

    impl TapWidth for EventMatrix {
        fn tap_width(mut self, days: f64) -> Self {
            self.bin_width_days = Some(days);
            self
        }
    }

    #[test]
    fn empty_records_and_boundaries() {
        let (x, _) = bin_events(&[], Duration::days(7), day(0), &nodes(&["a", "b"]), Some(3)).unwrap();
        assert_eq!(x.total(), 0);
        assert_eq!(x.n_steps(), 3);
        let (x, _) = bin_events(&[rec(7, "a")], Duration::days(7), day(0), &nodes(&["a"]), Some(2)).unwrap();
        assert_eq!((x.get(0, 0), x.get(0, 1)), (0, 1));
    }

    #[test]
    fn out_of_span_is_counted() {
        let recs = [rec(-1, "a"), rec(3, "a"), rec(30, "a"), rec(3, "zz")];
        let (x, s) = bin_events(&recs, Duration::days(7), day(0), &nodes(&["a"]), Some(2)).unwrap();
        assert_eq!(x.total(), 1);
        assert_eq!((s.out_of_span, s.other_nodes), (2, 1));
        let (x, _) = bin_events(&recs, Duration::days(7), day(0), &nodes(&["a"]), None).unwrap();
        assert_eq!(x.n_steps(), 5);
    }

    #[test]
    fn binning_ignores_record_order_and_collapses() {
        let mut recs: Vec<_> = (0..40).map(|i| rec((i * 37) % 50, if i % 3 == 0 { "a" } else { "b" })).collect();
        let ids = nodes(&["a", "b"]);
        let (x, _) = bin_events(&recs, Duration::days(7), day(0), &ids, None).unwrap();
        recs.reverse();
        recs.rotate_left(13);
        let (y, _) = bin_events(&recs, Duration::days(7), day(0), &ids, None).unwrap();
        assert_eq!(x, y);
        assert!(x.total() <= recs.len());
    }

    #[test]
    fn origin_is_monday_midnight() {
        let mut r = rec(3, "a");
        r.timestamp += Duration::hours(15);
        assert_eq!(default_origin(&[r, rec(10, "b")]), Some(day(0)));
        assert_eq!(default_origin(&[]), None);
    }

    #[test]
    fn top_k_ordering() {
        let mut recs = Vec::new();
        for (key, n) in [("a", 5), ("b", 3), ("c", 1)] {
            recs.extend((0..n).map(|d| rec(d, key)));
        }
        assert_eq!(top_k_nodes(&recs, 2).unwrap(), nodes(&["a", "b"]));
        let tie = [rec(0, "b"), rec(1, "a"), rec(2, "b"), rec(3, "a")];
        assert_eq!(top_k_nodes(&tie, 1).unwrap(), nodes(&["a"]));
        assert!(top_k_nodes(&tie, 3).is_err());
    }

    #[test]
    fn read_with_portal_headers() {
        let csv = "ID,Date,Primary Type,Community Area\n\
                   1,01/05/2015 11:30:00 PM,HOMICIDE,25\n\
                   2,01/06/2015 01:00:00 AM,THEFT,25\n\
                   3,2015-01-07T10:00:00,Homicide,8\n";
        let (recs, rep) = read_incidents(csv.as_bytes(), &ColumnMap::default(), Some("homicide")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(rep.total_rows, 3);
        assert_eq!(recs[0].timestamp, NaiveDate::from_ymd_opt(2015, 1, 5).unwrap().and_hms_opt(23, 30, 0).unwrap());
        assert_eq!(recs[1].node_key, "8");
    }

    #[test]
    fn rejects_are_reported_then_fatal() {
        let mut csv = String::from("date,primary_type,community_area\n");
        for i in 0..19 {
            csv.push_str(&format!("2015-01-{:02} 00:00:00,X,{}\n", i + 1, i % 3));
        }
        csv.push_str("yesterday,X,1\n");
        let (recs, rep) = read_incidents(csv.as_bytes(), &ColumnMap::default(), None).unwrap();
        assert_eq!(recs.len(), 19);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 21);
        csv.push_str("2015-13-01,X,1\n,X,\n");
        assert!(matches!(
            read_incidents(csv.as_bytes(), &ColumnMap::default(), None),
            Err(Error::TooManyRejects { rejected: 3, total: 22 })
        ));
    }

    #[test]
    fn missing_column_is_an_error() {
        assert!(read_incidents("date,type\n".as_bytes(), &ColumnMap::default(), None).is_err());
    }

    #[test]
    fn split_shapes_and_masking() {
        let model = NetworkModel::zeros(9);
        let x = simulate_bar(&model, 918, None, 1).unwrap();
        let spec = SplitSpec {
            train_bins: 600,
            test_bins: 318,
            mask_p: 0.75,
            seed: 4,
        };
        let (tr, z, te) = split_and_mask(&x, &spec).unwrap();
        assert_eq!((tr.n_steps(), z.n_steps(), te.n_steps()), (600, 600, 318));
        assert_eq!(split_and_mask(&x, &spec).unwrap().1, z);
        let full = SplitSpec { mask_p: 1.0, ..spec.clone() };
        let (tr, z, _) = split_and_mask(&x, &full).unwrap();
        assert_eq!(tr, z);
        let long = SplitSpec { test_bins: 319, ..spec };
        assert!(split_and_mask(&x, &long).is_err());
    }
}
