//! CSV and JSON persistence for clouds and flows.
//!
//! A cloud is one atom per row with columns `x_1..x_k,weight`. A flow is a
//! directory holding one cloud CSV per time node plus `index.json` of the
//! form `{"times": [...], "files": [...]}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmpiricalMeasure, MeasureFlow};
use crate::error::{Error, Result};

/// Decimal with 17 significant digits, which round-trips every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_measure_csv<W: Write>(mu: &EmpiricalMeasure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=mu.dim()).map(|j| format!("x_{j}")).collect();
    header.push("weight".into());
    w.write_record(&header)?;
    for (i, x) in mu.points().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.push(fmt_f64(mu.weight(i)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cloud written by [`write_measure_csv`]. A file without a `weight`
/// column is read as a uniform cloud.
pub fn read_measure_csv<R: Read>(input: R) -> Result<EmpiricalMeasure> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let has_weight = headers
        .iter()
        .next_back()
        .map(|h| h.trim() == "weight")
        .unwrap_or(false);
    let dim = headers.len() - usize::from(has_weight);
    if dim == 0 {
        return Err(Error::Parse("cloud CSV has no coordinate columns".into()));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields",
                line + 1,
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("row {}: `{field}` is not a number", line + 1))
            })?;
            if has_weight && j == dim {
                weights.push(v);
            } else {
                points.push(v);
            }
        }
    }
    if !has_weight {
        return EmpiricalMeasure::uniform(dim, points);
    }
    let n = weights.len();
    let uniform = weights.iter().all(|w| (w * n as f64 - 1.0).abs() < 1e-12);
    if uniform {
        EmpiricalMeasure::uniform(dim, points)
    } else {
        EmpiricalMeasure::weighted(dim, points, weights)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FlowIndex {
    times: Vec<f64>,
    files: Vec<String>,
}

pub fn write_flow_dir(flow: &MeasureFlow, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(flow.len());
    for (k, mu) in flow.measures().iter().enumerate() {
        let name = format!("t{k:05}.csv");
        let f = fs::File::create(dir.join(&name))?;
        write_measure_csv(mu, std::io::BufWriter::new(f))?;
        files.push(name);
    }
    let index = FlowIndex {
        times: flow.times().to_vec(),
        files,
    };
    fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(())
}

pub fn read_flow_dir(dir: &Path) -> Result<MeasureFlow> {
    let index: FlowIndex = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
    if index.times.len() != index.files.len() {
        return Err(Error::Parse(
            "flow index times/files length mismatch".into(),
        ));
    }
    let measures = index
        .files
        .iter()
        .map(|f| read_measure_csv(fs::File::open(dir.join(f))?))
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(index.times, measures)
}
