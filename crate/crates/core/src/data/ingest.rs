use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{class_counts, Modality, ModalityDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

/// How to read one modality's CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub label_column: String,
    /// Explicit feature columns. When `None`, every column other than the
    /// label and `exclude_columns` whose values all parse as numbers is used;
    /// non-numeric columns are rejected and reported.
    pub feature_columns: Option<Vec<String>>,
    pub exclude_columns: Vec<String>,
    /// Label string (matched case-insensitively, trimmed) to class index.
    pub label_map: BTreeMap<String, usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        let label_map = [("benign", 0), ("dos", 1), ("recon", 2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            label_column: "label".to_string(),
            feature_columns: None,
            exclude_columns: Vec::new(),
            label_map,
        }
    }
}

impl CsvSchema {
    fn class_of(&self, raw: &str) -> Option<usize> {
        let key = raw.trim().to_lowercase();
        self.label_map
            .iter()
            .find(|(k, _)| k.to_lowercase() == key)
            .map(|(_, &v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub paths: Vec<PathBuf>,
    pub modality: Modality,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub feature_count: usize,
    pub rejected_columns: Vec<String>,
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// A cell that is present but does not denote a number.
fn is_non_numeric(cell: &str) -> bool {
    let t = cell.trim();
    if t.is_empty() {
        return false;
    }
    match t.parse::<f64>() {
        Ok(_) => false,
        Err(_) => !matches!(t.to_lowercase().as_str(), "nan" | "na" | "null" | "inf" | "-inf"),
    }
}

pub fn load_csv(path: &Path, modality: Modality, schema: &CsvSchema) -> Result<(ModalityDataset, IngestReport)> {
    load_csv_many(&[path.to_path_buf()], modality, schema)
}

/// Loads and concatenates several CSV files sharing one header layout.
///
/// Rows with a missing or non-finite feature value are dropped and
/// counted. Unknown label values are an error naming the file and row.
pub fn load_csv_many(
    paths: &[PathBuf],
    modality: Modality,
    schema: &CsvSchema,
) -> Result<(ModalityDataset, IngestReport)> {
    if paths.is_empty() {
        return Err(Error::Ingest("no input files given".into()));
    }
    let mut header: Option<Vec<String>> = None;
    let mut records: Vec<(usize, usize, csv::StringRecord)> = Vec::new();
    for (file_idx, path) in paths.iter().enumerate() {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
        let h: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if h.is_empty() || h.iter().all(String::is_empty) {
            return Err(Error::Ingest(format!("{}: empty file", path.display())));
        }
        match &header {
            None => header = Some(h),
            Some(prev) if *prev != h => {
                return Err(Error::Ingest(format!(
                    "{}: header differs from {}",
                    path.display(),
                    paths[0].display()
                )))
            }
            _ => {}
        }
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
            // row numbers are 1-based data rows after the header line
            records.push((file_idx, row + 1, rec));
        }
    }
    let header = header.expect("at least one file");
    if records.is_empty() {
        return Err(Error::Ingest(format!("{}: no data rows", paths[0].display())));
    }

    let label_idx = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case(&schema.label_column))
        .ok_or_else(|| Error::Ingest(format!("label column '{}' not found", schema.label_column)))?;

    let mut rejected = Vec::new();
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Error::Ingest(format!("feature column '{c}' not found")))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&j| j != label_idx && !schema.exclude_columns.contains(&header[j]))
            .filter(|&j| {
                let numeric = records.iter().all(|(_, _, r)| !is_non_numeric(r.get(j).unwrap_or("")));
                if !numeric {
                    rejected.push(header[j].clone());
                }
                numeric
            })
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Ingest("no numeric feature columns".into()));
    }

    let d = feature_idx.len();
    let mut data = Vec::with_capacity(records.len() * d);
    let mut labels = Vec::with_capacity(records.len());
    let mut dropped = 0;
    let mut row_buf = Vec::with_capacity(d);
    'rows: for (file_idx, row, rec) in &records {
        let raw_label = rec.get(label_idx).unwrap_or("");
        let class = schema.class_of(raw_label).ok_or_else(|| {
            Error::Ingest(format!(
                "{} row {row}: unknown label value '{raw_label}'",
                paths[*file_idx].display()
            ))
        })?;
        if class >= NUM_CLASSES {
            return Err(Error::Ingest(format!("label map sends '{raw_label}' to class {class}")));
        }
        row_buf.clear();
        for &j in &feature_idx {
            let cell = rec.get(j).unwrap_or("");
            match parse_cell(cell) {
                Some(v) => row_buf.push(v),
                None if is_non_numeric(cell) => {
                    return Err(Error::Ingest(format!(
                        "{} row {row}: non-numeric value '{cell}' in feature column '{}'",
                        paths[*file_idx].display(),
                        header[j]
                    )))
                }
                None => {
                    dropped += 1;
                    continue 'rows;
                }
            }
        }
        data.extend_from_slice(&row_buf);
        labels.push(class);
    }

    let n = labels.len();
    let feature_names: Vec<String> = feature_idx.iter().map(|&j| header[j].clone()).collect();
    let counts = class_counts(&labels);
    let report = IngestReport {
        paths: paths.to_vec(),
        modality,
        rows_read: records.len(),
        rows_dropped: dropped,
        class_counts: super::CLASS_NAMES
            .iter()
            .zip(counts)
            .map(|(name, c)| (name.to_string(), c))
            .collect(),
        feature_count: d,
        rejected_columns: rejected,
    };
    let ds = ModalityDataset {
        modality,
        features: Tensor::new(vec![n, d], data)?,
        labels,
        feature_names,
        norm_stats: None,
    };
    Ok((ds, report))
}
