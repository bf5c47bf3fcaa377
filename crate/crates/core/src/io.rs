//! On-disk formats: series and manifest CSV, kernel and label CSV, model JSON,
//! objective traces and prediction JSON lines. Floats in CSV are written with
//! 17 significant digits so every value round-trips exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CkscError, Result};
use crate::kernelcore::{CrossKernel, KernelMatrix, TimeSeries};
use crate::labels::LabelMatrix;
use crate::recall::PredictionRecord;
use crate::synthetic::LabeledSeries;
use crate::train::{Hyperparams, TraceEntry, TrainedModel};

pub const MODEL_FORMAT: &str = "cksc-model/1";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: usize, message: impl std::fmt::Display) -> CkscError {
    CkscError::Parse { file: path.display().to_string(), message: format!("line {line}: {message}") }
}

/// Reads a headerless numeric CSV into rows.
pub fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(File::open(path).map_err(|e| parse_err(path, 0, e))?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|cell| cell.trim().parse::<f64>().map_err(|e| parse_err(path, i + 1, format!("`{cell}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_numeric_rows<I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    m.row_iter().map(|r| r.iter().copied().collect())
}

fn rows_to_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(parse_err(path, i + 1, format!("expected {cols} columns, found {}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// One series per file: rows are time steps, columns are channels.
pub fn read_series(path: &Path) -> Result<TimeSeries> {
    let rows = read_numeric_rows(path)?;
    if rows.is_empty() {
        return Err(parse_err(path, 0, "empty series file"));
    }
    let steps = rows_to_matrix(path, &rows)?;
    TimeSeries::new(steps.transpose())
}

pub fn write_series(path: &Path, s: &TimeSeries) -> Result<()> {
    write_numeric_rows(path, matrix_rows(&s.values().transpose()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
}

/// Manifest CSV with header `path,label`. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, String)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e))?;
        let p = PathBuf::from(&rec.path);
        out.push((if p.is_absolute() { p } else { base.join(p) }, rec.label));
    }
    Ok(out)
}

/// Loads every series listed in a manifest, checking channel counts agree.
pub fn load_dataset(manifest: &Path) -> Result<(Vec<TimeSeries>, Vec<String>)> {
    let entries = read_manifest(manifest)?;
    let mut series = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (path, label) in entries {
        let s = read_series(&path)?;
        if let Some(first) = series.first() {
            let first: &TimeSeries = first;
            if first.channels() != s.channels() {
                return Err(CkscError::Dimension(format!(
                    "{} has {} channels, expected {}",
                    path.display(),
                    s.channels(),
                    first.channels()
                )));
            }
        }
        series.push(s);
        labels.push(label);
    }
    Ok((series, labels))
}

/// Writes `series/sample_XXXX.csv` files and `manifest.csv` under `dir`.
pub fn write_dataset(dir: &Path, data: &[LabeledSeries]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("series"))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| parse_err(&manifest, 0, e))?;
    for (i, d) in data.iter().enumerate() {
        let rel = format!("series/sample_{i:04}.csv");
        write_series(&dir.join(&rel), &d.series)?;
        w.serialize(ManifestEntry { path: rel, label: d.class.to_string() }).map_err(|e| parse_err(&manifest, i + 2, e))?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn read_kernel(path: &Path) -> Result<KernelMatrix> {
    let rows = read_numeric_rows(path)?;
    let m = rows_to_matrix(path, &rows)?;
    KernelMatrix::new(m)
}

pub fn write_kernel(path: &Path, k: &KernelMatrix) -> Result<()> {
    write_numeric_rows(path, matrix_rows(k.values()))
}

pub fn read_cross_kernel(path: &Path) -> Result<Vec<CrossKernel>> {
    read_numeric_rows(path)?.into_iter().map(CrossKernel::new).collect()
}

pub fn write_cross_kernel(path: &Path, rows: &[CrossKernel]) -> Result<()> {
    write_numeric_rows(path, rows.iter().map(|r| r.values().to_vec()))
}

/// Labels CSV: optional `label` header, then one class identifier per line.
pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let text = fs::read_to_string(path).map_err(|e| parse_err(path, 0, e))?;
    let mut names: Vec<String> = text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
    if names.first().is_some_and(|h| h == "label") {
        names.remove(0);
    }
    if names.is_empty() {
        return Err(parse_err(path, 0, "no labels"));
    }
    LabelMatrix::from_names(&names)
}

pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label")?;
    for &c in labels.assignment() {
        writeln!(w, "{}", labels.classes()[c])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialized form of a trained model. The training kernel itself is not
/// stored; its content hash pins which kernel the model may be paired with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub classes: Vec<String>,
    /// Class index of every training sample.
    pub labels: Vec<usize>,
    /// `N` rows of `k` dictionary coefficients.
    pub dictionary: Vec<Vec<f64>>,
    pub beta: f64,
    pub hyper: Hyperparams,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kernel_hash: String,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub band: Option<usize>,
    /// Effective run configuration that produced the model.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelDocument {
    pub fn from_model(model: &TrainedModel, band: Option<usize>, config: serde_json::Value) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            classes: model.labels.classes().to_vec(),
            labels: model.labels.assignment().to_vec(),
            dictionary: matrix_rows(&model.dictionary).collect(),
            beta: model.beta,
            hyper: model.hyper.clone(),
            objective_trace: model.objective_trace.clone(),
            iterations: model.iterations,
            converged: model.converged,
            kernel_hash: model.kernel_hash.clone(),
            bandwidth: model.bandwidth,
            band,
            config,
        }
    }

    /// Rebuilds the model around its training kernel.
    pub fn into_model(self, kernel: KernelMatrix) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT {
            return Err(CkscError::schema("format", format!("expected `{MODEL_FORMAT}`, found `{}`", self.format)));
        }
        let actual = kernel.content_hash();
        if actual != self.kernel_hash {
            return Err(CkscError::Integrity(format!(
                "model was trained on kernel {} but the supplied kernel hashes to {actual}",
                self.kernel_hash
            )));
        }
        let n = kernel.n();
        if self.labels.len() != n {
            return Err(CkscError::schema("labels", format!("{} entries for {n} training samples", self.labels.len())));
        }
        if self.dictionary.len() != n {
            return Err(CkscError::schema("dictionary", format!("{} rows for {n} training samples", self.dictionary.len())));
        }
        let k = self.dictionary.first().map_or(0, |r| r.len());
        if k == 0 || self.dictionary.iter().any(|r| r.len() != k) {
            return Err(CkscError::schema("dictionary", "rows must be non-empty and of equal length"));
        }
        if self.dictionary.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(CkscError::schema("dictionary", "entries must be finite and non-negative"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(CkscError::schema("beta", "must be finite and non-negative"));
        }
        self.hyper.validate()?;
        let labels = LabelMatrix::new(self.classes, self.labels).map_err(|e| CkscError::schema("labels", e.to_string()))?;
        let dictionary = DMatrix::from_fn(n, k, |i, j| self.dictionary[i][j]);
        Ok(TrainedModel {
            codes: DMatrix::zeros(k, n),
            dictionary,
            labels,
            kernel,
            beta: self.beta,
            hyper: self.hyper,
            objective_trace: self.objective_trace,
            trace: Vec::new(),
            iterations: self.iterations,
            converged: self.converged,
            kernel_hash: self.kernel_hash,
            bandwidth: self.bandwidth,
        })
    }
}

fn schema_from_serde(e: serde_path_to_error::Error<serde_json::Error>) -> CkscError {
    let path = e.path().to_string();
    let msg = e.into_inner().to_string();
    // missing and unknown fields are reported at the parent, with the name in backticks
    let field = match (path.as_str(), msg.split('`').nth(1)) {
        (".", Some(name)) => name.to_string(),
        (".", None) => "<document>".to_string(),
        _ => path,
    };
    CkscError::Schema { field, message: msg }
}

pub fn parse_model_document(text: &str) -> Result<ModelDocument> {
    serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(text)).map_err(schema_from_serde)
}

pub fn read_model_document(path: &Path) -> Result<ModelDocument> {
    parse_model_document(&fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CkscError::schema("<document>", e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,half_step,objective,reconstruction,ridge,discriminant")?;
    for e in trace {
        let half = match e.half_step {
            crate::train::HalfStep::Codes => "codes",
            crate::train::HalfStep::Dictionary => "dictionary",
        };
        writeln!(
            w,
            "{},{half},{},{},{},{}",
            e.iteration,
            fmt_f64(e.objective),
            fmt_f64(e.terms.reconstruction),
            fmt_f64(e.terms.ridge),
            fmt_f64(e.terms.discriminant)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| CkscError::schema("<record>", e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[crate::metrics::SweepRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "param_name,param_value,mean_accuracy,std_accuracy")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.param_name, fmt_f64(r.param_value), fmt_f64(r.mean_accuracy), fmt_f64(r.std_accuracy))?;
    }
    w.flush()?;
    Ok(())
}
