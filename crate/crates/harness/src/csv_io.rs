//! CSV emitters and their readers. Floats are written in shortest
//! round-trip form, so every reader returns exactly what was written.

use std::io::{Read, Write};
use std::str::FromStr;

use bacf_unroll::trainer::{EpochRecord, Phase};
use bacf_unroll::{BoundingBox, UpdaterParams};

use crate::error::{HarnessError, Result};
use crate::metrics::MetricsReport;

pub const BOXES_HEADER: [&str; 5] = ["frame", "x", "y", "w", "h"];
pub const LOSS_HEADER: [&str; 5] = ["epoch", "phase", "stage", "loss", "rate"];
pub const PARAMS_HEADER: [&str; 4] = ["stage", "lambda", "rho", "eta"];
pub const MASK_HEADER: [&str; 4] = ["stage", "row", "col", "weight"];
pub const METRICS_HEADER: [&str; 3] = ["kind", "threshold", "value"];

/// Per-stage scalar parameters, as written by [`write_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRow {
    pub stage: usize,
    pub lambda: f64,
    pub rho: f64,
    pub eta: f64,
}

/// One mask cell in full-grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRow {
    pub stage: usize,
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

fn field<T: FromStr>(record: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let line = record.position().map_or(0, |p| p.line() as usize);
    let raw = record.get(i).ok_or_else(|| parse_error(line, format!("missing column {i}")))?;
    raw.parse().map_err(|e| parse_error(line, format!("`{raw}`: {e}")))
}

fn parse_error(line: usize, message: String) -> HarnessError {
    HarnessError::Parse { path: "<csv>".into(), line, message }
}

fn records<R: Read>(reader: R, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let found = rdr.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_error(1, format!("expected header {}", header.join(","))));
    }
    rdr.records().map(|r| r.map_err(HarnessError::from)).collect()
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

/// `frame,x,y,w,h` with 0-based frame numbers and 0-indexed pixel origin.
pub fn write_boxes<W: Write>(out: W, boxes: &[BoundingBox]) -> Result<()> {
    let mut w = writer(out, &BOXES_HEADER)?;
    for (i, b) in boxes.iter().enumerate() {
        w.write_record([i.to_string(), b.x.to_string(), b.y.to_string(), b.width.to_string(), b.height.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_boxes<R: Read>(input: R) -> Result<Vec<BoundingBox>> {
    records(input, &BOXES_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let frame: usize = field(r, 0)?;
            if frame != i {
                return Err(parse_error(i + 2, format!("frame {frame} out of order")));
            }
            Ok(BoundingBox::new(field(r, 1)?, field(r, 2)?, field(r, 3)?, field(r, 4)?)?)
        })
        .collect()
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Stagewise => "stagewise",
        Phase::Joint => "joint",
    }
}

pub fn write_loss<W: Write>(out: W, log: &[EpochRecord]) -> Result<()> {
    let mut w = writer(out, &LOSS_HEADER)?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            phase_name(r.phase).to_string(),
            r.stage.to_string(),
            r.loss.to_string(),
            r.rate.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_loss<R: Read>(input: R) -> Result<Vec<EpochRecord>> {
    records(input, &LOSS_HEADER)?
        .iter()
        .map(|r| {
            let phase = match r.get(1) {
                Some("stagewise") => Phase::Stagewise,
                Some("joint") => Phase::Joint,
                other => return Err(parse_error(0, format!("unknown phase {other:?}"))),
            };
            Ok(EpochRecord { epoch: field(r, 0)?, phase, stage: field(r, 2)?, loss: field(r, 3)?, rate: field(r, 4)? })
        })
        .collect()
}

/// `stage,lambda,rho,eta` with 1-based stage numbers.
pub fn param_rows(params: &UpdaterParams) -> Vec<ParamRow> {
    params
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| ParamRow { stage: k + 1, lambda: s.lambda, rho: s.rho, eta: s.eta })
        .collect()
}

pub fn mask_rows(params: &UpdaterParams) -> Vec<MaskRow> {
    let mut rows = Vec::new();
    for (k, s) in params.stages.iter().enumerate() {
        let shape = s.mask.crop_shape(1);
        let (top, left) = s.mask.offset();
        for (i, &weight) in s.mask.weights().iter().enumerate() {
            rows.push(MaskRow { stage: k + 1, row: top + i / shape.width, col: left + i % shape.width, weight });
        }
    }
    rows
}

pub fn write_params<W: Write>(out: W, rows: &[ParamRow]) -> Result<()> {
    let mut w = writer(out, &PARAMS_HEADER)?;
    for r in rows {
        w.write_record([r.stage.to_string(), r.lambda.to_string(), r.rho.to_string(), r.eta.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_params<R: Read>(input: R) -> Result<Vec<ParamRow>> {
    records(input, &PARAMS_HEADER)?
        .iter()
        .map(|r| Ok(ParamRow { stage: field(r, 0)?, lambda: field(r, 1)?, rho: field(r, 2)?, eta: field(r, 3)? }))
        .collect()
}

pub fn write_mask<W: Write>(out: W, rows: &[MaskRow]) -> Result<()> {
    let mut w = writer(out, &MASK_HEADER)?;
    for r in rows {
        w.write_record([r.stage.to_string(), r.row.to_string(), r.col.to_string(), r.weight.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_mask<R: Read>(input: R) -> Result<Vec<MaskRow>> {
    records(input, &MASK_HEADER)?
        .iter()
        .map(|r| Ok(MaskRow { stage: field(r, 0)?, row: field(r, 1)?, col: field(r, 2)?, weight: field(r, 3)? }))
        .collect()
}

/// Rows `success,<tau>,<rate>` then `precision,<px>,<rate>`, then summary
/// rows with an empty threshold: `auc`, `precision@20`, `mean_iou`, `frames`.
pub fn write_metrics<W: Write>(out: W, report: &MetricsReport) -> Result<()> {
    let mut w = writer(out, &METRICS_HEADER)?;
    for (t, s) in report.overlap_thresholds.iter().zip(&report.success) {
        w.write_record(["success", &t.to_string(), &s.to_string()])?;
    }
    for (t, p) in report.distance_thresholds.iter().zip(&report.precision) {
        w.write_record(["precision", &t.to_string(), &p.to_string()])?;
    }
    w.write_record(["auc", "", &report.auc.to_string()])?;
    w.write_record(["precision@20", "", &report.precision_at_20.to_string()])?;
    w.write_record(["mean_iou", "", &report.mean_iou.to_string()])?;
    w.write_record(["frames", "", &report.frames.to_string()])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<MetricsReport> {
    let mut report = MetricsReport {
        overlap_thresholds: Vec::new(),
        success: Vec::new(),
        auc: f64::NAN,
        distance_thresholds: Vec::new(),
        precision: Vec::new(),
        precision_at_20: f64::NAN,
        mean_iou: f64::NAN,
        frames: 0,
    };
    for r in records(input, &METRICS_HEADER)? {
        match r.get(0).unwrap_or("") {
            "success" => {
                report.overlap_thresholds.push(field(&r, 1)?);
                report.success.push(field(&r, 2)?);
            }
            "precision" => {
                report.distance_thresholds.push(field(&r, 1)?);
                report.precision.push(field(&r, 2)?);
            }
            "auc" => report.auc = field(&r, 2)?,
            "precision@20" => report.precision_at_20 = field(&r, 2)?,
            "mean_iou" => report.mean_iou = field(&r, 2)?,
            "frames" => report.frames = field(&r, 2)?,
            other => return Err(parse_error(0, format!("unknown metrics row `{other}`"))),
        }
    }
    Ok(report)
}
