//! Prediction files and epoch directories.
//!
//! A prediction file is a CSV with a header: an integer `label` column and
//! either `p0..p{k-1}` (probabilities) or `z0..z{k-1}` (logits). Column order
//! is free. An epoch directory holds `epoch_0000.csv`, `epoch_0001.csv`, ...

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scores::{softmax, PredictionSet, ProbVector};

/// How to interpret the score columns of a prediction file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadOptions {
    /// Read `z*` logit columns and softmax them.
    pub logits: bool,
    /// Rescale probability rows to sum to one instead of rejecting them.
    pub renormalize: bool,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Maps header names to (label column, score columns in class order).
fn score_columns(path: &Path, header: &csv::StringRecord, prefix: char) -> Result<(usize, Vec<usize>)> {
    let mut label = None;
    let mut scores: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        let name = name.trim();
        if name == "label" {
            label = Some(col);
        } else if let Some(idx) = name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()) {
            scores.push((idx, col));
        }
    }
    let label = label.ok_or_else(|| parse_err(path, 1, "missing `label` column"))?;
    scores.sort_unstable();
    if scores.len() < 2 {
        return Err(parse_err(
            path,
            1,
            format!("need at least two `{prefix}<i>` columns, found {}", scores.len()),
        ));
    }
    for (want, &(got, _)) in scores.iter().enumerate() {
        if want != got {
            return Err(parse_err(path, 1, format!("missing column `{prefix}{want}`")));
        }
    }
    Ok((label, scores.into_iter().map(|(_, c)| c).collect()))
}

/// Reads a prediction file.
pub fn read_predictions(path: &Path, opts: ReadOptions) -> Result<PredictionSet> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_predictions(path, &text, opts)
}

/// Parses prediction CSV text; `path` is only used in error messages.
pub fn parse_predictions(path: &Path, text: &str, opts: ReadOptions) -> Result<PredictionSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let prefix = if opts.logits { 'z' } else { 'p' };
    let (label_col, cols) = score_columns(path, &header, prefix)?;
    let k = cols.len();

    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let label: usize = record[label_col]
            .parse()
            .map_err(|_| parse_err(path, line, format!("invalid label `{}`", &record[label_col])))?;
        if label >= k {
            return Err(parse_err(
                path,
                line,
                format!("label {label} out of range for {k} classes"),
            ));
        }
        let mut row = Vec::with_capacity(k);
        for &c in &cols {
            let v: f64 = record[c]
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid number `{}`", &record[c])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{}`", &record[c])));
            }
            row.push(v);
        }
        let row = if opts.logits {
            softmax(&row)
        } else if opts.renormalize {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || !(sum > 0.0) {
                return Err(parse_err(path, line, "cannot renormalize: negative entries or zero sum"));
            }
            row.iter().map(|v| v / sum).collect()
        } else {
            row
        };
        ProbVector::new(row.clone()).map_err(|e| parse_err(path, line, e.to_string()))?;
        probs.extend(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    PredictionSet::new(probs, labels, k)
}

/// Fixed-width float formatting: 17 significant digits, `NA` for NaN.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Serializes a prediction set as a probability CSV.
pub fn predictions_to_csv(data: &PredictionSet) -> String {
    let mut out = String::from("label");
    for j in 0..data.k() {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for (p, y) in data.rows() {
        let _ = write!(out, "{y}");
        for v in p {
            out.push(',');
            out.push_str(&fmt_float(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: &Path, data: &PredictionSet) -> Result<()> {
    write_text(path, &predictions_to_csv(data))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Zero-padded file name of an epoch.
pub fn epoch_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.csv")
}

fn epoch_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("epoch_")?.strip_suffix(".csv")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Epoch files of `dir` in order. Numbering must run contiguously from 0.
pub fn list_epoch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        if let Some(n) = entry.file_name().to_str().and_then(epoch_number) {
            found.push((n, entry.path()));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(io_err(dir, "no epoch_NNNN.csv files"));
    }
    let missing: Vec<String> = (0..found.last().unwrap().0 + 1)
        .filter(|e| found.binary_search_by_key(e, |(n, _)| *n).is_err())
        .map(epoch_file_name)
        .collect();
    if !missing.is_empty() {
        return Err(io_err(dir, format!("missing epoch files: {}", missing.join(", "))));
    }
    if let Some(w) = found.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(io_err(dir, format!("duplicate files for epoch {}", w[0].0)));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Reads every epoch of `dir`. All unreadable files are reported together.
pub fn read_epoch_dir(dir: &Path, opts: ReadOptions) -> Result<Vec<PredictionSet>> {
    let files = list_epoch_files(dir)?;
    let mut sets = Vec::with_capacity(files.len());
    let mut problems = Vec::new();
    for f in &files {
        match read_predictions(f, opts) {
            Ok(s) => sets.push(s),
            Err(e) => problems.push(e.to_string()),
        }
    }
    match problems.len() {
        0 => Ok(sets),
        1 => Err(io_err(dir, problems.remove(0))),
        _ => Err(io_err(dir, format!("corrupt epoch files:\n  {}", problems.join("\n  ")))),
    }
}
