//! Per-epoch metric logs: CSV with header `epoch,split,loss,metric1,metric2,seconds`,
//! floats written with 6 significant digits, empty `metric2` when absent.

use std::fs::{self, OpenOptions};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,split,loss,metric1,metric2,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: u32,
    pub split: String,
    pub loss: f64,
    /// Accuracy for classification, PSNR for reconstruction.
    pub metric1: f64,
    /// SSIM for reconstruction.
    pub metric2: Option<f64>,
    pub seconds: f64,
}

/// `%g`-style formatting with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn check_monotone(prev: Option<u32>, rows: &[MetricRow]) -> Result<()> {
    let mut last = prev;
    for r in rows {
        if let Some(p) = last {
            if r.epoch < p {
                return Err(Error::InvalidArgument(format!("epoch {} after epoch {p}", r.epoch)));
            }
        }
        last = Some(r.epoch);
    }
    Ok(())
}

fn write_rows<W: std::io::Write>(w: &mut csv::Writer<W>, rows: &[MetricRow]) -> Result<()> {
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            format_sig6(r.loss),
            format_sig6(r.metric1),
            r.metric2.map(format_sig6).unwrap_or_default(),
            format_sig6(r.seconds),
        ])?;
    }
    Ok(())
}

/// Writes `rows` to `path`, replacing any existing file.
pub fn write_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    check_monotone(None, rows)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER.split(','))?;
    write_rows(&mut w, rows)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends `rows`, creating the file with its header if needed.
pub fn append_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    if !path.exists() {
        return write_metrics(rows, path);
    }
    let existing = read_metrics(path)?;
    check_monotone(existing.last().map(|r| r.epoch), rows)?;
    let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    write_rows(&mut w, rows)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.lines().next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "missing metrics header"));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |what: &str| Error::format(path, format!("bad {what}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(bad("field count"));
        }
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        rows.push(MetricRow {
            epoch: rec[0].parse().map_err(|_| bad("epoch"))?,
            split: rec[1].to_string(),
            loss: num(2, "loss")?,
            metric1: num(3, "metric1")?,
            metric2: if rec[4].is_empty() { None } else { Some(num(4, "metric2")?) },
            seconds: num(5, "seconds")?,
        });
    }
    Ok(rows)
}
