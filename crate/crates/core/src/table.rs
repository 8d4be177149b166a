//! Tabular inputs and outputs: feature tables, clinical records, labels.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a table
//! read back from disk is bit-identical to the one written.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of risk classes: healthy, low, high.
pub const N_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["healthy", "low", "high"];

/// One case of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub case_id: String,
    pub center: String,
    pub label: usize,
    pub values: Vec<f64>,
}

/// Per-case named features with labels. Every row has `columns.len()` values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        FeatureTable {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TableRow) -> Result<()> {
        if row.values.len() != self.columns.len() {
            return Err(Error::InvalidInput(format!(
                "case {} has {} values, table has {} columns",
                row.case_id,
                row.values.len(),
                self.columns.len()
            )));
        }
        if row.label >= N_CLASSES {
            return Err(Error::InvalidInput(format!(
                "case {} has label {} outside 0..{N_CLASSES}",
                row.case_id, row.label
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.case_id.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Keep the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::InvalidInput(format!("no column {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            columns: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| TableRow {
                    values: idx.iter().map(|&i| r.values[i]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    /// Keep the rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Join column-wise with another table over the same cases in the same order.
    pub fn hconcat(&self, other: &FeatureTable) -> Result<FeatureTable> {
        if self.len() != other.len() {
            return Err(Error::CaseMismatch(format!(
                "tables have {} and {} rows",
                self.len(),
                other.len()
            )));
        }
        let mut out = FeatureTable::new(self.columns.iter().chain(&other.columns).cloned().collect());
        for (a, b) in self.rows.iter().zip(&other.rows) {
            if a.case_id != b.case_id || a.label != b.label {
                return Err(Error::CaseMismatch(format!(
                    "row {} vs {} (labels {} vs {})",
                    a.case_id, b.case_id, a.label, b.label
                )));
            }
            let mut values = a.values.clone();
            values.extend_from_slice(&b.values);
            out.push(TableRow { values, ..a.clone() })?;
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv_open(path, e))?;
        let mut header = vec!["case_id".to_string(), "center".into(), "label".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            let mut rec = vec![r.case_id.clone(), r.center.clone(), r.label.to_string()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv_open(path, e))?;
        let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
        if header.len() < 3 || &header[0] != "case_id" || &header[1] != "center" || &header[2] != "label" {
            return Err(Error::csv(path, "header must start with case_id,center,label"));
        }
        let mut table = FeatureTable::new(header.iter().skip(3).map(String::from).collect());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let at = |what: &str| Error::csv(path, format!("row {}: {what}", line + 1));
            let label = rec[2].parse().map_err(|_| at("bad label"))?;
            let values = rec
                .iter()
                .skip(3)
                .map(|s| s.parse::<f64>().map_err(|_| at(&format!("bad number {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            table.push(TableRow {
                case_id: rec[0].to_string(),
                center: rec[1].to_string(),
                label,
                values,
            })?;
        }
        Ok(table)
    }
}

/// Clinical covariate columns, in file order.
pub const CLINICAL_COLUMNS: [&str; 8] = [
    "diabetes",
    "volume_ml",
    "diagonal_mm",
    "vol_over_diag",
    "age",
    "gender",
    "bmi",
    "chronic_pancreatitis",
];

/// One row of the clinical CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub case_id: String,
    pub diabetes: f64,
    pub volume_ml: f64,
    pub diagonal_mm: f64,
    pub vol_over_diag: f64,
    pub age: f64,
    pub gender: f64,
    pub bmi: f64,
    pub chronic_pancreatitis: f64,
    pub label: usize,
}

impl ClinicalRecord {
    pub fn values(&self) -> [f64; 8] {
        [
            self.diabetes,
            self.volume_ml,
            self.diagonal_mm,
            self.vol_over_diag,
            self.age,
            self.gender,
            self.bmi,
            self.chronic_pancreatitis,
        ]
    }

    fn from_values(case_id: String, v: [f64; 8], label: usize) -> Self {
        ClinicalRecord {
            case_id,
            diabetes: v[0],
            volume_ml: v[1],
            diagonal_mm: v[2],
            vol_over_diag: v[3],
            age: v[4],
            gender: v[5],
            bmi: v[6],
            chronic_pancreatitis: v[7],
            label,
        }
    }
}

pub fn write_clinical_csv(path: &Path, records: &[ClinicalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    let mut header = vec!["case_id"];
    header.extend(CLINICAL_COLUMNS);
    header.push("label");
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in records {
        let mut rec = vec![r.case_id.clone()];
        rec.extend(r.values().iter().map(|v| v.to_string()));
        rec.push(r.label.to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read the clinical CSV. Empty cells are an error unless `impute` is set,
/// in which case they take the column mean of the present values.
pub fn read_clinical_csv(path: &Path, impute: bool) -> Result<Vec<ClinicalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut expected = vec!["case_id"];
    expected.extend(CLINICAL_COLUMNS);
    expected.push("label");
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::csv(path, format!("header must be {}", expected.join(","))));
    }
    let mut raw: Vec<(String, [Option<f64>; 8], usize)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let at = |what: String| Error::csv(path, format!("row {}: {what}", line + 1));
        let mut v = [None; 8];
        for (j, slot) in v.iter_mut().enumerate() {
            let cell = rec[j + 1].trim();
            if cell.is_empty() {
                if !impute {
                    return Err(at(format!("missing {} for case {}", CLINICAL_COLUMNS[j], &rec[0])));
                }
            } else {
                *slot = Some(cell.parse().map_err(|_| at(format!("bad number {cell:?}")))?);
            }
        }
        let label: usize = rec[9].trim().parse().map_err(|_| at("bad label".into()))?;
        if label >= N_CLASSES {
            return Err(at(format!("label {label} outside 0..{N_CLASSES}")));
        }
        raw.push((rec[0].to_string(), v, label));
    }
    let mut means = [0.0; 8];
    for (j, m) in means.iter_mut().enumerate() {
        let present: Vec<f64> = raw.iter().filter_map(|r| r.1[j]).collect();
        if present.is_empty() && raw.iter().any(|r| r.1[j].is_none()) {
            return Err(Error::csv(
                path,
                format!("column {} has no values to impute from", CLINICAL_COLUMNS[j]),
            ));
        }
        *m = present.iter().sum::<f64>() / present.len().max(1) as f64;
    }
    let out: Vec<ClinicalRecord> = raw
        .into_iter()
        .map(|(id, v, label)| {
            let mut full = [0.0; 8];
            for j in 0..8 {
                full[j] = v[j].unwrap_or(means[j]);
            }
            ClinicalRecord::from_values(id, full, label)
        })
        .collect();
    ensure_unique(path, out.iter().map(|r| r.case_id.as_str()))?;
    Ok(out)
}

/// One row of `labels.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case_id: String,
    pub center: String,
    pub label: usize,
}

pub fn write_labels_csv(path: &Path, labels: &[CaseLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    for l in labels {
        w.serialize(l).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<CaseLabel>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    let out = r
        .deserialize()
        .collect::<std::result::Result<Vec<CaseLabel>, _>>()
        .map_err(|e| Error::csv(path, e))?;
    if let Some(l) = out.iter().find(|l| l.label >= N_CLASSES) {
        return Err(Error::csv(path, format!("case {} has label {}", l.case_id, l.label)));
    }
    ensure_unique(path, out.iter().map(|l| l.case_id.as_str()))?;
    Ok(out)
}

fn ensure_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::csv(path, format!("duplicate case id {id:?}")));
        }
    }
    Ok(())
}

/// Index records by case id, failing unless the id sets are identical.
pub fn align_by_case<T: Clone>(
    what: &str,
    ids: &[String],
    records: &[T],
    id_of: impl Fn(&T) -> &str,
) -> Result<Vec<T>> {
    let map: BTreeMap<&str, &T> = records.iter().map(|r| (id_of(r), r)).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        match map.get(id.as_str()) {
            Some(r) => out.push((*r).clone()),
            None => return Err(Error::CaseMismatch(format!("case {id} missing from {what}"))),
        }
    }
    if map.len() != ids.len() {
        let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let extra = map.keys().find(|k| !known.contains(*k)).copied().unwrap_or("?");
        return Err(Error::CaseMismatch(format!("{what} has unknown case {extra}")));
    }
    Ok(out)
}
