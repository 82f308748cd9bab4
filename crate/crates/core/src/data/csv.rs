//! Numeric CSV ingestion and the on-disk dataset format.
//!
//! The dataset files written by [`to_csv_string`] have a header
//! `x0,…,x{d-1},label` plus `noisy_label` once noise has been injected.
//! [`parse_csv`] reads those as well as arbitrary rectangular numeric CSV with
//! an optional header.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const LABEL_COLUMN: &str = "label";
pub const NOISY_LABEL_COLUMN: &str = "noisy_label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
    Last,
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => ColumnRef::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => ColumnRef::Index(i),
                Err(_) => ColumnRef::Name(s.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub label: ColumnRef,
    pub noisy: Option<ColumnRef>,
    /// Map the distinct label values, in ascending order, onto `0..K`.
    /// Otherwise labels are used as-is and `K = max + 1`.
    pub relabel: bool,
}

impl CsvOptions {
    pub fn label(column: ColumnRef) -> Self {
        Self {
            label: column,
            noisy: None,
            relabel: true,
        }
    }

    /// Options for files produced by [`to_csv_string`].
    pub fn dataset_file(has_noisy: bool) -> Self {
        Self {
            label: ColumnRef::Name(LABEL_COLUMN.into()),
            noisy: has_noisy.then(|| ColumnRef::Name(NOISY_LABEL_COLUMN.into())),
            relabel: false,
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn resolve(column: &ColumnRef, header: Option<&[String]>, width: usize) -> Result<usize> {
    let idx = match column {
        ColumnRef::Index(i) => *i,
        ColumnRef::Last => width.checked_sub(1).ok_or_else(|| parse_err(1, "no columns"))?,
        ColumnRef::Name(name) => header
            .ok_or_else(|| parse_err(1, format!("column '{name}' requested but file has no header")))?
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("no column named '{name}'")))?,
    };
    if idx >= width {
        return Err(parse_err(1, format!("column {idx} out of range for {width} columns")));
    }
    Ok(idx)
}

fn label_value(cell: f64, line: u64) -> Result<i64> {
    if cell.fract() != 0.0 || cell.abs() > 1e15 {
        return Err(parse_err(line, format!("label {cell} is not an integer")));
    }
    Ok(cell as i64)
}

/// Parses CSV text into a dataset.
pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<LabeledDataset> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(::csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(parse_err(line, format!("non-finite value {bad}")));
                }
                rows.push((line, values));
            }
            Err(_) if n == 0 => header = Some(record.iter().map(str::to_string).collect()),
            Err(_) => {
                let cell = record.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or("");
                return Err(parse_err(line, format!("non-numeric cell '{cell}'")));
            }
        }
    }

    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(|r| r.1.len()))
        .unwrap_or(0);
    let label_col = resolve(&options.label, header.as_deref(), width)?;
    let noisy_col = options
        .noisy
        .as_ref()
        .map(|c| resolve(c, header.as_deref(), width))
        .transpose()?;
    if noisy_col == Some(label_col) {
        return Err(parse_err(1, "label and noisy label columns coincide"));
    }

    let d = width - 1 - usize::from(noisy_col.is_some());
    let mut features = Vec::with_capacity(rows.len() * d);
    let mut clean_raw = Vec::with_capacity(rows.len());
    let mut noisy_raw = Vec::new();
    for (line, values) in &rows {
        clean_raw.push(label_value(values[label_col], *line)?);
        if let Some(c) = noisy_col {
            noisy_raw.push(label_value(values[c], *line)?);
        }
        features.extend(
            values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != label_col && Some(*i) != noisy_col)
                .map(|(_, v)| *v),
        );
    }

    let (clean, noisy, k) = if options.relabel {
        let distinct: BTreeSet<i64> = clean_raw.iter().chain(&noisy_raw).copied().collect();
        let index: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let clean: Vec<usize> = clean_raw.iter().map(|v| index[v]).collect();
        let noisy: Vec<usize> = noisy_raw.iter().map(|v| index[v]).collect();
        (clean, noisy, distinct.len().max(1))
    } else {
        let to_usize = |(line, v): (u64, i64)| -> Result<usize> {
            usize::try_from(v).map_err(|_| parse_err(line, format!("negative label {v}")))
        };
        let lines = rows.iter().map(|r| r.0);
        let clean = lines
            .clone()
            .zip(clean_raw.iter().copied())
            .map(to_usize)
            .collect::<Result<Vec<_>>>()?;
        let noisy = lines
            .zip(noisy_raw.iter().copied())
            .map(to_usize)
            .collect::<Result<Vec<_>>>()?;
        let k = clean.iter().chain(&noisy).map(|&l| l + 1).max().unwrap_or(1);
        (clean, noisy, k)
    };

    let features = Matrix::from_vec(rows.len(), d, features)?;
    LabeledDataset::new(features, clean, noisy_col.map(|_| noisy), k)
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, options)
}

/// Reads a dataset file written by [`to_csv_string`].
pub fn load_dataset_file(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let has_noisy = text
        .lines()
        .next()
        .is_some_and(|h| h.split(',').any(|c| c.trim() == NOISY_LABEL_COLUMN));
    parse_csv(&text, &CsvOptions::dataset_file(has_noisy))
}

/// Serializes a dataset; floats use the shortest round-trip representation.
pub fn to_csv_string(ds: &LabeledDataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("x{i}")).collect();
    header.push(LABEL_COLUMN.into());
    if ds.noisy_labels.is_some() {
        header.push(NOISY_LABEL_COLUMN.into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in ds.features.row_iter().enumerate() {
        for v in row {
            let _ = write!(out, "{v},");
        }
        let _ = write!(out, "{}", ds.clean_labels[i]);
        if let Some(noisy) = &ds.noisy_labels {
            let _ = write!(out, ",{}", noisy[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset_file(path: &Path, ds: &LabeledDataset) -> Result<()> {
    std::fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}
