//! File formats: event matrices and tables as CSV, models and reports as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::FilterOutput;
use crate::model::{check_probabilities, EventMatrix, NetworkModel};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Header of node ids, then one row of 0/1 cells per time bin.
pub fn write_event_matrix<W: Write>(x: &EventMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(x.node_ids())?;
    let mut row = Vec::with_capacity(x.n_nodes());
    for t in 0..x.n_steps() {
        row.clear();
        row.extend(x.column(t).iter().map(|v| if *v == 1 { "1" } else { "0" }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<event matrix>", e))?;
    Ok(())
}

pub fn read_event_matrix<R: Read>(input: R) -> Result<EventMatrix> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let ids: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if ids.is_empty() || ids.iter().any(String::is_empty) {
        return Err(Error::Parse("event matrix header must name every node".into()));
    }
    let mut data = Vec::new();
    let mut steps = 0;
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != ids.len() {
            return Err(Error::Parse(format!(
                "time bin {t} has {} cells, header has {}",
                rec.len(),
                ids.len()
            )));
        }
        for (i, cell) in rec.iter().enumerate() {
            data.push(match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Cell {
                        cell: format!("time bin {t}, node {}", ids[i]),
                        source: Box::new(Error::Parse(format!("expected 0 or 1, got {other:?}"))),
                    })
                }
            });
        }
        steps += 1;
    }
    EventMatrix::from_time_major(ids, steps, data)
}

pub fn save_event_matrix(x: &EventMatrix, path: &Path) -> Result<()> {
    write_event_matrix(x, create(path)?)
}

pub fn load_event_matrix(path: &Path) -> Result<EventMatrix> {
    read_event_matrix(open(path)?).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Cell {
            cell: path.display().to_string(),
            source: Box::new(other),
        },
    })
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let model: NetworkModel = serde_json::from_reader(open(path)?)?;
    model.validate()?;
    Ok(model)
}

/// Observation probabilities: either a bare number, or a CSV with header
/// `node_id,p` and one row per node.
pub fn parse_probabilities(text: &str, node_ids: &[String]) -> Result<Vec<f64>> {
    if let Ok(v) = text.trim().parse::<f64>() {
        check_probabilities(&[v], "observation probability")?;
        return Ok(vec![v; node_ids.len()]);
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut found = vec![None; node_ids.len()];
    for rec in r.records() {
        let rec = rec?;
        let (id, val) = match (rec.get(0), rec.get(1)) {
            (Some(id), Some(val)) => (id, val),
            _ => return Err(Error::Parse("probability rows need node_id and p".into())),
        };
        let v: f64 = val
            .parse()
            .map_err(|_| Error::Parse(format!("probability for {id} is not a number: {val:?}")))?;
        match node_ids.iter().position(|n| n == id) {
            Some(i) => found[i] = Some(v),
            None => return Err(Error::Parse(format!("probability given for unknown node {id:?}"))),
        }
    }
    let p: Vec<f64> = found
        .iter()
        .zip(node_ids)
        .map(|(v, id)| v.ok_or_else(|| Error::Parse(format!("no probability for node {id:?}"))))
        .collect::<Result<_>>()?;
    check_probabilities(&p, "observation probability")?;
    Ok(p)
}

/// Node rows, one column per step, preceded by a `node_id` column.
pub fn write_predictive<W: Write>(out: &FilterOutput, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["node_id".to_owned()];
    header.extend((0..out.n_steps()).map(|n| format!("t{n}")));
    w.write_record(&header)?;
    for (id, row) in out.node_ids.iter().zip(&out.predictive) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<predictive>", e))?;
    Ok(())
}

pub fn save_predictive(out: &FilterOutput, path: &Path) -> Result<()> {
    write_predictive(out, create(path)?)
}
