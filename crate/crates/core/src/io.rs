//! Dataset ingestion and result serialization.
//!
//! Input is CSV with a header row. Fits and reports are written as JSON
//! objects carrying a `format_version` field and, optionally, the run
//! configuration that produced them.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdmError};
use crate::locallinear::SpatialDataset;
use crate::profile::FitResult;

pub const FORMAT_VERSION: u32 = 1;

/// Column roles in a dataset file.
///
/// Unset location and response columns fall back to `u`/`v` (else
/// `LON`/`LAT`) and `y` (else `MEDV`). Unset covariates mean every other
/// column, in file order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub location: Option<(String, String)>,
    pub response: Option<String>,
    pub covariates: Option<Vec<String>>,
    /// Columns rescaled to mean 0, standard deviation 1 after loading.
    #[serde(default)]
    pub standardize: BTreeSet<String>,
}

impl DatasetSchema {
    pub fn with_covariates(covariates: Vec<String>) -> Self {
        DatasetSchema {
            covariates: Some(covariates),
            ..Default::default()
        }
    }

    /// Response MEDV with covariates CRIM, RM, RAD, TAX, LSTAT at LON/LAT.
    pub fn boston() -> Self {
        DatasetSchema {
            location: Some(("LON".into(), "LAT".into())),
            response: Some("MEDV".into()),
            covariates: Some(
                ["CRIM", "RM", "RAD", "TAX", "LSTAT"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            standardize: BTreeSet::new(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SsdmError {
    SsdmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> SsdmError {
    if source.is_io_error() {
        if let csv::ErrorKind::Io(e) = source.into_kind() {
            return io_err(path, e);
        }
        unreachable!("checked is_io_error");
    }
    SsdmError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn pick(
    explicit: &Option<String>,
    fallbacks: &[&str],
    index: &HashMap<String, usize>,
) -> Result<String> {
    if let Some(name) = explicit {
        return if index.contains_key(name) {
            Ok(name.clone())
        } else {
            Err(SsdmError::MissingColumn(name.clone()))
        };
    }
    fallbacks
        .iter()
        .find(|f| index.contains_key(**f))
        .map(|f| f.to_string())
        .ok_or_else(|| SsdmError::MissingColumn(fallbacks.join(" or ")))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Read a dataset; rows are numbered from 1 (first data row) in errors.
pub fn read_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<SpatialDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.clone(), i))
        .collect();

    let (u, v) = match &schema.location {
        Some((u, v)) => (
            pick(&Some(u.clone()), &[], &index)?,
            pick(&Some(v.clone()), &[], &index)?,
        ),
        None => {
            if index.contains_key("u") && index.contains_key("v") {
                ("u".to_string(), "v".to_string())
            } else if index.contains_key("LON") && index.contains_key("LAT") {
                ("LON".to_string(), "LAT".to_string())
            } else {
                return Err(SsdmError::MissingColumn("u/v or LON/LAT".into()));
            }
        }
    };
    let response = pick(&schema.response, &["y", "MEDV"], &index)?;
    let covariates: Vec<String> = match &schema.covariates {
        Some(cols) => {
            for c in cols {
                if !index.contains_key(c) {
                    return Err(SsdmError::MissingColumn(c.clone()));
                }
            }
            cols.clone()
        }
        None => headers
            .iter()
            .filter(|h| **h != u && **h != v && **h != response)
            .cloned()
            .collect(),
    };
    for c in &schema.standardize {
        if !index.contains_key(c) {
            return Err(SsdmError::MissingColumn(c.clone()));
        }
    }

    let selected: Vec<&String> = [&u, &v, &response].into_iter().chain(&covariates).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    let mut missing: Vec<Vec<usize>> = vec![Vec::new(); selected.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = r + 1;
        for (k, name) in selected.iter().enumerate() {
            let cell = record.get(index[*name]).unwrap_or("");
            if is_missing(cell) {
                missing[k].push(row);
                columns[k].push(f64::NAN);
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| SsdmError::ParseCell {
                row,
                column: (*name).clone(),
                value: cell.to_string(),
            })?;
            columns[k].push(value);
        }
    }
    if let Some(k) = missing.iter().position(|m| !m.is_empty()) {
        return Err(SsdmError::MissingValues {
            column: selected[k].clone(),
            rows: missing[k].clone(),
        });
    }

    for (k, name) in selected.iter().enumerate() {
        if schema.standardize.contains(*name) {
            standardize_in_place(&mut columns[k], name)?;
        }
    }

    let n = columns[0].len();
    let p = covariates.len();
    let locations = (0..n).map(|i| [columns[0][i], columns[1][i]]).collect();
    let y = DVector::from_vec(columns[2].clone());
    let x = DMatrix::from_fn(n, p, |i, j| columns[3 + j][i]);
    SpatialDataset::with_names(locations, x, y, covariates)
}

fn standardize_in_place(col: &mut [f64], name: &str) -> Result<()> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(SsdmError::InvalidData(format!(
            "cannot standardize constant column \"{name}\""
        )));
    }
    col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    Ok(())
}

/// Write a dataset as `u,v,y,<covariates…>`.
pub fn write_dataset(data: &SpatialDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["u".to_string(), "v".to_string(), "y".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.n() {
        let s = data.locations()[i];
        let mut rec = vec![fmt_f64(s[0]), fmt_f64(s[1]), fmt_f64(data.y()[i])];
        rec.extend((0..data.p()).map(|j| fmt_f64(data.x()[(i, j)])));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// Shortest representation that round-trips exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Read an `n × n` weight matrix from a CSV file without header.
pub fn read_weights_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| SsdmError::ParseCell {
                    row: r + 1,
                    column: format!("{}", c + 1),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(SsdmError::InvalidData(format!(
            "{}: weight rows have unequal length",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

/// Versioned JSON envelope around any result.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope<T> {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(
    body: &T,
    provenance: Option<serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        provenance,
        body,
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &envelope).map_err(|e| SsdmError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Envelope<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| SsdmError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| SsdmError::InvalidData(format!("{}: no format_version", path.display())))?;
    if found != FORMAT_VERSION as u64 {
        return Err(SsdmError::FormatVersion {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    // Deserialize the body from the object itself: flattened buffering
    // would turn integer map keys into strings.
    let serde_json::Value::Object(mut fields) = value else {
        return Err(SsdmError::InvalidData(format!("{}: not a JSON object", path.display())));
    };
    fields.remove("format_version");
    let provenance = fields.remove("provenance");
    let body = serde_json::from_value(serde_json::Value::Object(fields)).map_err(|e| {
        SsdmError::Json {
            path: path.to_path_buf(),
            source: e,
        }
    })?;
    Ok(Envelope {
        format_version: FORMAT_VERSION,
        provenance,
        body,
    })
}

#[derive(Serialize, Deserialize)]
struct FitBody<F> {
    fit: F,
}

pub fn write_fit(fit: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    write_fit_with_provenance(fit, None, path)
}

pub fn write_fit_with_provenance(
    fit: &FitResult,
    provenance: Option<serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_json(&FitBody { fit }, provenance, path)
}

pub fn read_fit(path: impl AsRef<Path>) -> Result<FitResult> {
    Ok(read_json::<FitBody<FitResult>>(path)?.body.fit)
}

/// Surface table `u,v,beta_1..beta_p[,se_1..se_p]`.
pub fn write_surface_csv(
    fit: &FitResult,
    data: &SpatialDataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if fit.beta_surface.nrows() != data.n() {
        return Err(SsdmError::InvalidData(format!(
            "fit has {} rows but the dataset has {}",
            fit.beta_surface.nrows(),
            data.n()
        )));
    }
    let p = fit.p();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["u".to_string(), "v".to_string()];
    header.extend((1..=p).map(|j| format!("beta_{j}")));
    if fit.beta_se_surface.is_some() {
        header.extend((1..=p).map(|j| format!("se_{j}")));
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.n() {
        let s = data.locations()[i];
        let mut rec = vec![fmt_f64(s[0]), fmt_f64(s[1])];
        rec.extend((0..p).map(|j| fmt_f64(fit.beta_surface[(i, j)])));
        if let Some(se) = &fit.beta_se_surface {
            rec.extend((0..p).map(|j| fmt_f64(se[(i, j)])));
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Generic CSV table writer for report side outputs.
pub fn write_table(
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
