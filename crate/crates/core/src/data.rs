//! Dataset types, CSV ingestion and activity-unit conversion.
//!
//! Input tables are comma-delimited UTF-8 with a header row. The first column
//! holds molecule identifiers; one named column holds the activity; every other
//! column is a numeric descriptor. Lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QsarError, Result};

/// Units of the activity column as it appears in the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivityKind {
    /// Already on the pIC50 scale.
    #[default]
    Pic50,
    /// IC50 in micromolar; converted with [`pic50_from_ic50`] on load.
    Ic50Micromolar,
}

impl FromStr for ActivityKind {
    type Err = QsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pic50" => Ok(ActivityKind::Pic50),
            "ic50" | "ic50_um" | "ic50_micromolar" => Ok(ActivityKind::Ic50Micromolar),
            other => Err(QsarError::Config(format!(
                "unknown activity kind '{other}' (expected pic50 or ic50_micromolar)"
            ))),
        }
    }
}

impl fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityKind::Pic50 => f.write_str("pic50"),
            ActivityKind::Ic50Micromolar => f.write_str("ic50_micromolar"),
        }
    }
}

/// Convert an IC50 in micromolar to pIC50 = -log10(IC50 * 1e-6).
pub fn pic50_from_ic50(ic50_micromolar: f64) -> Result<f64> {
    if !ic50_micromolar.is_finite() || ic50_micromolar <= 0.0 {
        return Err(QsarError::Domain(format!(
            "IC50 must be positive and finite, got {ic50_micromolar}"
        )));
    }
    Ok(6.0 - ic50_micromolar.log10())
}

/// Molecule ids with a named descriptor matrix, no activity.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    ids: Vec<String>,
    names: Vec<String>,
    x: DMatrix<f64>,
}

impl DescriptorTable {
    pub fn new(ids: Vec<String>, names: Vec<String>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != ids.len() {
            return Err(QsarError::Validation(format!(
                "{} molecule ids for {} matrix rows",
                ids.len(),
                x.nrows()
            )));
        }
        if x.ncols() != names.len() {
            return Err(QsarError::Validation(format!(
                "{} descriptor names for {} matrix columns",
                names.len(),
                x.ncols()
            )));
        }
        check_unique("molecule id", &ids)?;
        check_unique("descriptor name", &names)?;
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % x.nrows(), idx / x.nrows());
            return Err(QsarError::Validation(format!(
                "non-finite value for molecule '{}', descriptor '{}'",
                ids[row], names[col]
            )));
        }
        Ok(Self { ids, names, x })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns matched by name, in the order given.
    pub fn columns_by_name(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|name| {
                self.column_index(name)
                    .ok_or_else(|| QsarError::Schema(format!("descriptor column '{name}' not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.x.select_columns(&idx))
    }

    fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            names: self.names.clone(),
            x: self.x.select_rows(rows),
        }
    }

    fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            ids: self.ids.clone(),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            x: self.x.select_columns(cols),
        }
    }
}

/// Molecules, their descriptors and their activities on the pIC50 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    table: DescriptorTable,
    y: DVector<f64>,
    activity_kind: ActivityKind,
}

impl Dataset {
    pub fn new(
        ids: Vec<String>,
        names: Vec<String>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        activity_kind: ActivityKind,
    ) -> Result<Self> {
        let table = DescriptorTable::new(ids, names, x)?;
        Self::from_table(table, y, activity_kind)
    }

    pub fn from_table(table: DescriptorTable, y: DVector<f64>, activity_kind: ActivityKind) -> Result<Self> {
        if y.len() != table.n() {
            return Err(QsarError::Validation(format!(
                "{} activities for {} molecules",
                y.len(),
                table.n()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(QsarError::Validation(format!(
                "non-finite activity for molecule '{}'",
                table.ids[i]
            )));
        }
        Ok(Self {
            table,
            y,
            activity_kind,
        })
    }

    /// Build a dataset with generated ids (`m1`, `m2`, ...) and names (`d1`, `d2`, ...).
    pub fn from_matrix(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let ids = (1..=x.nrows()).map(|i| format!("m{i}")).collect();
        let names = (1..=x.ncols()).map(|j| format!("d{j}")).collect();
        Self::new(ids, names, x, y, ActivityKind::Pic50)
    }

    pub fn table(&self) -> &DescriptorTable {
        &self.table
    }

    pub fn ids(&self) -> &[String] {
        &self.table.ids
    }

    pub fn descriptor_names(&self) -> &[String] {
        &self.table.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.table.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.table.n()
    }

    pub fn m(&self) -> usize {
        self.table.m()
    }

    /// Units of the activity column in the source file. Activities held here
    /// are always pIC50.
    pub fn activity_kind(&self) -> ActivityKind {
        self.activity_kind
    }

    pub fn y_mean(&self) -> f64 {
        self.y.mean()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            table: self.table.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            activity_kind: self.activity_kind,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            table: self.table.select_columns(cols),
            y: self.y.clone(),
            activity_kind: self.activity_kind,
        }
    }

    pub fn select_named(&self, names: &[String]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|name| {
                self.table
                    .column_index(name)
                    .ok_or_else(|| QsarError::Schema(format!("descriptor column '{name}' not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&cols))
    }

    /// Same molecules and descriptors with replaced activities.
    pub fn with_activities(&self, y: DVector<f64>) -> Result<Dataset> {
        Dataset::from_table(self.table.clone(), y, self.activity_kind)
    }

    /// Write as CSV with an `id` column, a `pIC50` activity column, then
    /// descriptors. Values use the shortest representation that reads back
    /// to the identical double.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), ACTIVITY_OUT.to_string()];
        header.extend(self.table.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.table.ids[i].clone(), format_full(self.y[i])];
            rec.extend(self.table.x.row(i).iter().map(|v| format_full(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| QsarError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| QsarError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Name of the activity column in files written by this crate.
pub const ACTIVITY_OUT: &str = "pIC50";

pub(crate) fn format_full(v: f64) -> String {
    // Rust's `Display` for f64 is the shortest round-trip representation.
    format!("{v}")
}

fn check_unique(what: &str, items: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        if item.trim().is_empty() {
            return Err(QsarError::Validation(format!("empty {what}")));
        }
        if !seen.insert(item.as_str()) {
            return Err(QsarError::Validation(format!("duplicate {what} '{item}'")));
        }
    }
    Ok(())
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = value.trim().parse().map_err(|_| QsarError::Parse {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })?;
    if !v.is_finite() {
        return Err(QsarError::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        });
    }
    Ok(v)
}

struct RawTable {
    ids: Vec<String>,
    names: Vec<String>,
    x: DMatrix<f64>,
    activity: Option<Vec<f64>>,
}

/// Rows are numbered from 1 for the first data line, so error locations match
/// what a spreadsheet shows below the header.
fn read_raw<R: Read>(reader: R, activity_column: Option<&str>) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(QsarError::Schema(
            "header must contain an id column and at least one other column".into(),
        ));
    }
    let activity_idx = match activity_column {
        Some(col) => Some(
            headers
                .iter()
                .skip(1)
                .position(|h| h == col)
                .map(|p| p + 1)
                .ok_or_else(|| QsarError::Schema(format!("activity column '{col}' not found")))?,
        ),
        None => None,
    };
    let descriptor_cols: Vec<usize> = (1..headers.len()).filter(|&c| Some(c) != activity_idx).collect();
    if descriptor_cols.is_empty() {
        return Err(QsarError::Schema("no descriptor columns".into()));
    }
    let names: Vec<String> = descriptor_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut activity = activity_idx.map(|_| Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != headers.len() {
            return Err(QsarError::Schema(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        ids.push(record[0].to_string());
        if let (Some(idx), Some(act)) = (activity_idx, activity.as_mut()) {
            act.push(parse_cell(&record[idx], row, &headers[idx])?);
        }
        for &c in &descriptor_cols {
            values.push(parse_cell(&record[c], row, &headers[c])?);
        }
    }
    if ids.is_empty() {
        return Err(QsarError::Schema("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(ids.len(), names.len(), &values);
    Ok(RawTable {
        ids,
        names,
        x,
        activity,
    })
}

/// Read a dataset from CSV text.
pub fn read_dataset<R: Read>(reader: R, activity_column: &str, activity_kind: ActivityKind) -> Result<Dataset> {
    let raw = read_raw(reader, Some(activity_column))?;
    let activity = raw.activity.unwrap_or_default();
    let y = match activity_kind {
        ActivityKind::Pic50 => activity,
        ActivityKind::Ic50Micromolar => activity
            .iter()
            .zip(&raw.ids)
            .map(|(&v, id)| pic50_from_ic50(v).map_err(|e| QsarError::Domain(format!("molecule '{id}': {e}"))))
            .collect::<Result<Vec<_>>>()?,
    };
    Dataset::new(raw.ids, raw.names, raw.x, DVector::from_vec(y), activity_kind)
}

pub fn load_dataset(path: impl AsRef<Path>, activity_column: &str, activity_kind: ActivityKind) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| QsarError::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), activity_column, activity_kind)
}

/// Read a descriptor-only table (first column ids, every other column a descriptor).
pub fn read_descriptor_table<R: Read>(reader: R) -> Result<DescriptorTable> {
    let raw = read_raw(reader, None)?;
    DescriptorTable::new(raw.ids, raw.names, raw.x)
}

pub fn load_descriptor_table(path: impl AsRef<Path>) -> Result<DescriptorTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| QsarError::io(path, e))?;
    read_descriptor_table(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Train,
    Test,
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Membership::Train => f.write_str("train"),
            Membership::Test => f.write_str("test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub molecule_id: String,
    pub observed: f64,
    pub predicted: f64,
    pub residual: f64,
    pub membership: Membership,
}

pub fn residual_table(
    observed: &[f64],
    predicted: &[f64],
    ids: &[String],
    membership: &[Membership],
) -> Result<Vec<PredictionRow>> {
    let n = observed.len();
    if predicted.len() != n || ids.len() != n || membership.len() != n {
        return Err(QsarError::Validation(format!(
            "length mismatch: {} observed, {} predicted, {} ids, {} membership flags",
            n,
            predicted.len(),
            ids.len(),
            membership.len()
        )));
    }
    Ok((0..n)
        .map(|i| PredictionRow {
            molecule_id: ids[i].clone(),
            observed: observed[i],
            predicted: predicted[i],
            residual: observed[i] - predicted[i],
            membership: membership[i],
        })
        .collect())
}

/// Write prediction rows as CSV. The first two numeric columns double as
/// observed-vs-predicted plot data.
pub fn write_prediction_rows<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["molecule_id", "observed", "predicted", "residual", "membership"])?;
    for r in rows {
        w.write_record([
            r.molecule_id.clone(),
            format_full(r.observed),
            format_full(r.predicted),
            format_full(r.residual),
            r.membership.to_string(),
        ])?;
    }
    w.flush().map_err(|e| QsarError::io("<csv writer>", e))?;
    Ok(())
}
