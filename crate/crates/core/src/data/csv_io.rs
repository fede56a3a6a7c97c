use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use super::Dataset;
use crate::error::{HainError, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Drop rows with any missing feature cell and report them.
    #[default]
    Reject,
    /// Replace missing cells with the column mean of the observed values.
    Impute,
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    /// Header name of the label column, or its zero-based index.
    pub label_column: String,
    pub has_header: bool,
    pub missing: MissingPolicy,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>, has_header: bool) -> Self {
        CsvOptions {
            label_column: label_column.into(),
            has_header,
            missing: MissingPolicy::Reject,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// 1-based data row numbers dropped for missing values.
    pub rows_rejected: Vec<usize>,
    pub cells_imputed: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub missing_policy: MissingPolicy,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "?" | "null")
}

/// Reads a labelled numeric table with reject-on-missing.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, has_header: bool) -> Result<Dataset> {
    load_csv_with(path, &CsvOptions::new(label_column, has_header)).map(|(d, _)| d)
}

pub fn load_csv_with(path: impl AsRef<Path>, options: &CsvOptions) -> Result<(Dataset, IngestReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, options)
}

pub(crate) fn read_csv<R: Read>(input: R, options: &CsvOptions) -> Result<(Dataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();

    let mut header: Option<Vec<String>> = None;
    if options.has_header {
        match records.next() {
            Some(r) => header = Some(record(r)?.iter().map(str::to_owned).collect()),
            None => return Err(HainError::contract("CSV has no header and no data")),
        }
    }

    let mut raw_rows: Vec<csv::StringRecord> = Vec::new();
    for r in records {
        let r = record(r)?;
        if r.len() == 1 && r.get(0) == Some("") {
            continue;
        }
        raw_rows.push(r);
    }
    if raw_rows.is_empty() {
        return Err(HainError::contract("CSV data section is empty"));
    }
    let width = raw_rows[0].len();
    if let Some(h) = &header {
        if h.len() != width {
            return Err(HainError::Format(format!(
                "header has {} fields but rows have {width}",
                h.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in h.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), i) {
                return Err(HainError::Format(format!(
                    "duplicate header name {name:?} in columns {} and {}",
                    prev + 1,
                    i + 1
                )));
            }
        }
    }
    let label_idx = resolve_label(header.as_deref(), &options.label_column, width)?;
    if width < 2 {
        return Err(HainError::contract(
            "need at least one feature column besides the label",
        ));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&c| c != label_idx).collect();
    let feature_names: Vec<String> = match &header {
        Some(h) => feature_cols.iter().map(|&c| h[c].clone()).collect(),
        None => feature_cols.iter().map(|&c| format!("x{c}")).collect(),
    };

    let header_rows = usize::from(options.has_header);
    let mut values: Vec<Vec<Option<f64>>> = Vec::with_capacity(raw_rows.len());
    let mut labels_raw: Vec<String> = Vec::with_capacity(raw_rows.len());
    for (i, r) in raw_rows.iter().enumerate() {
        let line = i + 1 + header_rows;
        let label = r.get(label_idx).unwrap_or_default();
        if label.is_empty() {
            return Err(HainError::Parse {
                row: line,
                column: label_idx + 1,
                reason: "missing label".into(),
            });
        }
        labels_raw.push(label.to_owned());
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = r.get(c).unwrap_or_default();
            if is_missing(cell) {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| HainError::Parse {
                row: line,
                column: c + 1,
                reason: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(HainError::Parse {
                    row: line,
                    column: c + 1,
                    reason: format!("non-finite value {cell:?}"),
                });
            }
            row.push(Some(v));
        }
        values.push(row);
    }

    let d = feature_cols.len();
    let mut report = IngestReport {
        rows_read: values.len(),
        n_features: d,
        missing_policy: options.missing,
        ..Default::default()
    };
    let mut kept_labels = Vec::new();
    let mut data = Vec::new();
    match options.missing {
        MissingPolicy::Reject => {
            for (i, (row, label)) in values.iter().zip(&labels_raw).enumerate() {
                if row.iter().any(Option::is_none) {
                    report.rows_rejected.push(i + 1);
                    continue;
                }
                data.extend(row.iter().map(|v| v.unwrap()));
                kept_labels.push(label.clone());
            }
        }
        MissingPolicy::Impute => {
            let mut sums = vec![(0.0, 0usize); d];
            for row in &values {
                for (s, v) in sums.iter_mut().zip(row) {
                    if let Some(v) = v {
                        s.0 += v;
                        s.1 += 1;
                    }
                }
            }
            let means: Vec<f64> = sums
                .iter()
                .map(|&(s, n)| if n > 0 { s / n as f64 } else { 0.0 })
                .collect();
            for (row, label) in values.iter().zip(&labels_raw) {
                for (v, m) in row.iter().zip(&means) {
                    data.push(v.unwrap_or_else(|| {
                        report.cells_imputed += 1;
                        *m
                    }));
                }
                kept_labels.push(label.clone());
            }
        }
    }
    report.rows_kept = kept_labels.len();
    if kept_labels.is_empty() {
        return Err(HainError::contract("every row had missing values"));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let y = kept_labels
        .into_iter()
        .map(|l| {
            *index.entry(l.clone()).or_insert_with(|| {
                class_names.push(l);
                class_names.len() - 1
            })
        })
        .collect();
    report.n_classes = class_names.len();
    let x = Matrix::from_vec(report.rows_kept, d, data)?;
    Ok((Dataset::new(x, y, feature_names, class_names)?, report))
}

fn record(r: csv::Result<csv::StringRecord>) -> Result<csv::StringRecord> {
    r.map_err(|e| match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => HainError::Format(format!(
            "ragged row{}: expected {expected_len} fields, found {len}",
            pos.as_ref()
                .map(|p| format!(" at line {}", p.line()))
                .unwrap_or_default()
        )),
        _ => HainError::Csv(e),
    })
}

fn resolve_label(header: Option<&[String]>, label: &str, width: usize) -> Result<usize> {
    if let Some(h) = header {
        if let Some(i) = h.iter().position(|n| n == label) {
            return Ok(i);
        }
    }
    match label.parse::<usize>() {
        Ok(i) if i < width => Ok(i),
        _ => Err(HainError::contract(format!("label column {label:?} not found"))),
    }
}

/// Writes `dataset` with a header and the label as the last column, using
/// class names.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, label_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(label_name);
    w.write_record(&header)?;
    for i in 0..dataset.n_samples() {
        // `{:?}` prints the shortest form that parses back to the same bits.
        let mut fields: Vec<String> = dataset.row(i).iter().map(|v| format!("{v:?}")).collect();
        fields.push(dataset.class_names[dataset.y[i]].clone());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
