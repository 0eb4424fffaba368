//! CSV ingestion, cleaning, and tag mapping for process logs.
//!
//! A log is a header row of tag names plus one row per second of plant time.
//! One column holds the timestamp; every other column is a tag. An optional
//! `label` column carries {0,1} ground truth and is kept apart from the tags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Analog,
    Binary,
    State,
}

/// Names that mark the timestamp column, compared case-insensitively.
const TS_NAMES: [&str; 4] = ["ts", "time", "timestamp", "datetime"];

/// Names that mark the label column.
const LABEL_NAMES: [&str; 2] = ["label", "logic_label"];

#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    pub timestamps: Vec<f64>,
    pub columns: Vec<(String, Kind)>,
    pub values: Matrix,
    pub labels: Option<Vec<u8>>,
}

impl TagTable {
    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn col_index(&self, tag: &str) -> Option<usize> {
        self.columns.iter().position(|(n, _)| n == tag)
    }

    pub fn column(&self, tag: &str) -> Result<Vec<f64>> {
        let i = self
            .col_index(tag)
            .ok_or_else(|| Error::data(format!("tag not found: {tag}")))?;
        Ok(self.values.col(i))
    }

    pub fn tag_names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub dropped_rows: usize,
    pub imputed_cells: usize,
    pub zero_columns: Vec<String>,
    pub inf_cells: usize,
    pub null_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanPolicy {
    Drop,
    ImputeFfill,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingEntry {
    pub source: String,
    pub canonical: String,
}

/// Projects source tags onto the canonical feature names a trained model
/// expects. Entry order defines output column order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagMapping {
    pub entries: Vec<MappingEntry>,
}

impl TagMapping {
    pub fn load(path: &Path) -> Result<TagMapping> {
        let text = std::fs::read_to_string(path)?;
        let mapping: TagMapping = serde_json::from_str(&text)?;
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.canonical.as_str()) {
                return Err(Error::config(format!(
                    "duplicate canonical name in mapping: {}",
                    e.canonical
                )));
            }
        }
        Ok(())
    }
}

/// Parses one cell. Empty and NaN spellings become NaN (counted as null by
/// `clean`), infinity spellings become ±inf.
fn parse_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    match t.to_ascii_lowercase().as_str() {
        "nan" | "null" | "na" => return Some(f64::NAN),
        "inf" | "+inf" | "infinity" | "+infinity" => return Some(f64::INFINITY),
        "-inf" | "-infinity" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    t.parse::<f64>().ok()
}

/// Timestamp cell: numeric seconds, or a datetime in one of the log formats
/// seen in testbed exports, converted to epoch seconds.
fn parse_timestamp(s: &str) -> Option<f64> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Some(v);
    }
    const FORMATS: [&str; 5] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S%.f",
        "%d/%m/%Y %I:%M:%S %p",
        "%d/%m/%Y %H:%M:%S",
    ];
    for f in FORMATS {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(t, f) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    None
}

fn infer_kind(finite_values: &BTreeSet<u64>) -> Kind {
    // Callers pass the distinct finite values as f64 bit patterns; a column
    // qualifies as discrete only if all of them are small non-negative ints.
    let mut distinct = Vec::new();
    for &bits in finite_values {
        let v = f64::from_bits(bits);
        if v < 0.0 || v.fract() != 0.0 || v > 1000.0 {
            return Kind::Analog;
        }
        distinct.push(v);
    }
    match distinct.len() {
        0..=2 => Kind::Binary,
        3..=10 => Kind::State,
        _ => Kind::Analog,
    }
}

/// Loads a CSV process log. The timestamp column is found by name (ts, time,
/// timestamp, datetime) or falls back to column 0. A `label` or `logic_label`
/// column becomes the labels field. Kinds are inferred per column unless
/// overridden in `kind_hints`.
pub fn load_csv(path: &Path, kind_hints: Option<&BTreeMap<String, Kind>>) -> Result<TagTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() {
        return Err(Error::data(format!("{}: empty header", path.display())));
    }

    let ts_col = header
        .iter()
        .position(|h| TS_NAMES.contains(&h.to_ascii_lowercase().as_str()))
        .unwrap_or(0);
    let label_col = header
        .iter()
        .position(|h| LABEL_NAMES.contains(&h.to_ascii_lowercase().as_str()));

    let tag_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != ts_col && Some(i) != label_col)
        .collect();
    if tag_cols.is_empty() {
        return Err(Error::data(format!(
            "{}: no tag columns besides timestamp/label",
            path.display()
        )));
    }

    let mut timestamps = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut data: Vec<f64> = Vec::new();

    for (ridx, record) in reader.records().enumerate() {
        let record = record?;
        let line = ridx + 2; // header occupies line 1
        if record.len() != header.len() {
            return Err(Error::data(format!(
                "{}: line {line}: {} fields under {}-column header",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        let ts = parse_timestamp(&record[ts_col]).ok_or_else(|| {
            Error::data(format!(
                "{}: line {line}, column {}: unparseable timestamp '{}'",
                path.display(),
                header[ts_col],
                &record[ts_col]
            ))
        })?;
        timestamps.push(ts);
        if let Some(lc) = label_col {
            let v = parse_cell(&record[lc]).filter(|v| *v == 0.0 || *v == 1.0);
            match v {
                Some(v) => labels.push(v as u8),
                None => {
                    return Err(Error::data(format!(
                        "{}: line {line}: label must be 0 or 1, got '{}'",
                        path.display(),
                        &record[lc]
                    )))
                }
            }
        }
        for &c in &tag_cols {
            let v = parse_cell(&record[c]).ok_or_else(|| {
                Error::data(format!(
                    "{}: line {line}, column {}: cannot parse '{}'",
                    path.display(),
                    header[c],
                    &record[c]
                ))
            })?;
            data.push(v);
        }
    }

    let n_rows = timestamps.len();
    if n_rows == 0 {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    for w in timestamps.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::data(format!(
                "{}: timestamps not strictly increasing ({} then {})",
                path.display(),
                w[0],
                w[1]
            )));
        }
    }
    let gaps = timestamps.windows(2).filter(|w| w[1] - w[0] != 1.0).count();
    if gaps > 0 {
        log::warn!(
            "{}: {gaps} timestamp steps deviate from 1 s cadence; rules and windows use row index",
            path.display()
        );
    }

    let values = Matrix::from_vec(n_rows, tag_cols.len(), data);

    let mut columns = Vec::with_capacity(tag_cols.len());
    for (out_idx, &c) in tag_cols.iter().enumerate() {
        let name = header[c].clone();
        let kind = match kind_hints.and_then(|h| h.get(&name)) {
            Some(&k) => k,
            None => {
                let distinct: BTreeSet<u64> = (0..n_rows)
                    .map(|r| values.get(r, out_idx))
                    .filter(|v| v.is_finite())
                    .map(f64::to_bits)
                    .collect();
                infer_kind(&distinct)
            }
        };
        columns.push((name, kind));
    }

    Ok(TagTable {
        timestamps,
        columns,
        values,
        labels: if label_col.is_some() { Some(labels) } else { None },
    })
}

/// Writes a table as CSV with a `ts` column, one column per tag, and a
/// trailing `label` column when labels are present. Values use the shortest
/// decimal form that round-trips, so load_csv(write_csv(T)) == T bit for bit
/// on finite values.
pub fn write_csv(table: &TagTable, path: &Path) -> Result<()> {
    write_csv_with_label(table, path, "label")
}

/// write_csv with a caller-chosen label column header. load_csv recognizes
/// both `label` and `logic_label`.
pub fn write_csv_with_label(table: &TagTable, path: &Path, label_header: &str) -> Result<()> {
    let mut out = String::new();
    out.push_str("ts");
    for (name, _) in &table.columns {
        out.push(',');
        out.push_str(name);
    }
    if table.labels.is_some() {
        out.push(',');
        out.push_str(label_header);
    }
    out.push('\n');
    for r in 0..table.n_rows() {
        push_f64(&mut out, table.timestamps[r]);
        for c in 0..table.n_cols() {
            out.push(',');
            push_f64(&mut out, table.values.get(r, c));
        }
        if let Some(labels) = &table.labels {
            out.push(',');
            out.push_str(if labels[r] == 1 { "1" } else { "0" });
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn push_f64(out: &mut String, v: f64) {
    use std::fmt::Write;
    if v.is_nan() {
        out.push_str("nan");
    } else if v == f64::INFINITY {
        out.push_str("inf");
    } else if v == f64::NEG_INFINITY {
        out.push_str("-inf");
    } else {
        let _ = write!(out, "{v}");
    }
}

fn cell_is_bad(v: f64) -> bool {
    !v.is_finite()
}

/// Removes or fills every NaN/±inf cell and reports what it did. All-zero
/// columns are listed but kept; removal is the feature selector's decision.
pub fn clean(table: &TagTable, policy: CleanPolicy) -> Result<(TagTable, CleaningReport)> {
    if table.n_rows() == 0 {
        return Err(Error::data("clean: empty table"));
    }
    let mut report = CleaningReport::default();
    for r in 0..table.n_rows() {
        for c in 0..table.n_cols() {
            let v = table.values.get(r, c);
            if v.is_nan() {
                report.null_cells += 1;
            } else if v.is_infinite() {
                report.inf_cells += 1;
            }
        }
    }

    let cleaned = match policy {
        CleanPolicy::Drop => {
            let keep: Vec<usize> = (0..table.n_rows())
                .filter(|&r| !table.values.row(r).iter().any(|&v| cell_is_bad(v)))
                .collect();
            report.dropped_rows = table.n_rows() - keep.len();
            let mut values = Matrix::zeros(keep.len(), table.n_cols());
            for (out_r, &r) in keep.iter().enumerate() {
                values.row_mut(out_r).copy_from_slice(table.values.row(r));
            }
            TagTable {
                timestamps: keep.iter().map(|&r| table.timestamps[r]).collect(),
                columns: table.columns.clone(),
                values,
                labels: table
                    .labels
                    .as_ref()
                    .map(|l| keep.iter().map(|&r| l[r]).collect()),
            }
        }
        CleanPolicy::ImputeFfill => {
            let mut values = table.values.clone();
            for c in 0..values.cols() {
                if cell_is_bad(values.get(0, c)) {
                    return Err(Error::data(format!(
                        "clean: column {} has no predecessor to fill from (bad cell in row 0)",
                        table.columns[c].0
                    )));
                }
                for r in 1..values.rows() {
                    if cell_is_bad(values.get(r, c)) {
                        let prev = values.get(r - 1, c);
                        values.set(r, c, prev);
                        report.imputed_cells += 1;
                    }
                }
            }
            TagTable {
                timestamps: table.timestamps.clone(),
                columns: table.columns.clone(),
                values,
                labels: table.labels.clone(),
            }
        }
    };

    for c in 0..cleaned.n_cols() {
        let all_zero = cleaned.n_rows() > 0
            && (0..cleaned.n_rows()).all(|r| cleaned.values.get(r, c) == 0.0);
        if all_zero {
            report.zero_columns.push(cleaned.columns[c].0.clone());
        }
    }

    Ok((cleaned, report))
}

/// Projects and renames columns per the mapping. Output column order is the
/// mapping's entry order; timestamps, row count, and labels pass through.
pub fn map_tags(table: &TagTable, mapping: &TagMapping) -> Result<TagTable> {
    mapping.validate()?;
    let missing: Vec<&str> = mapping
        .entries
        .iter()
        .filter(|e| table.col_index(&e.source).is_none())
        .map(|e| e.source.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "map_tags: source tags not found: {}",
            missing.join(", ")
        )));
    }
    let mut values = Matrix::zeros(table.n_rows(), mapping.entries.len());
    let mut columns = Vec::with_capacity(mapping.entries.len());
    for (out_c, e) in mapping.entries.iter().enumerate() {
        let src = table.col_index(&e.source).unwrap();
        for r in 0..table.n_rows() {
            values.set(r, out_c, table.values.get(r, src));
        }
        columns.push((e.canonical.clone(), table.columns[src].1));
    }
    Ok(TagTable {
        timestamps: table.timestamps.clone(),
        columns,
        values,
        labels: table.labels.clone(),
    })
}
