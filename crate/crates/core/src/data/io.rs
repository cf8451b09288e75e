use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, LossRecord, OptimizerConfig};
use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};
use crate::metrics::MetricReport;

/// Column selector for `load_csv`: zero-based index or header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ColumnRef {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        })
    }
}

impl ColumnRef {
    fn resolve(&self, header: Option<&[String]>, width: usize, path: &Path) -> Result<usize> {
        let idx = match self {
            ColumnRef::Index(i) => *i,
            ColumnRef::Name(name) => {
                header
                    .and_then(|h| h.iter().position(|c| c == name))
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        message: match header {
                            Some(_) => format!("no column named `{name}` in header"),
                            None => format!("column `{name}` given by name but the file has no header"),
                        },
                    })?
            }
        };
        if idx >= width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("column {idx} out of range for {width} columns"),
            });
        }
        Ok(idx)
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_column: Option<ColumnRef>,
    pub anomaly_column: Option<ColumnRef>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_label(cell: &str) -> Option<i64> {
    cell.parse::<i64>().ok().or_else(|| {
        let v = cell.parse::<f64>().ok()?;
        (v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
    })
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" | "yes" => Some(true),
        "0" | "0.0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a comma-separated numeric file. Designated columns become labels
/// and anomaly flags; every other column is a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut header: Option<Vec<String>> = None;
    let mut width = None;
    let mut cells: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut flags = Vec::new();
    let mut label_idx = None;
    let mut anomaly_idx = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                path,
                line,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        if options.has_header && header.is_none() {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        if rows == 0 {
            label_idx = options
                .label_column
                .as_ref()
                .map(|c| c.resolve(header.as_deref(), w, path))
                .transpose()?;
            anomaly_idx = options
                .anomaly_column
                .as_ref()
                .map(|c| c.resolve(header.as_deref(), w, path))
                .transpose()?;
            if label_idx.is_some() && label_idx == anomaly_idx {
                return Err(parse_err(path, line, "label and anomaly columns coincide"));
            }
        }
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(
                    parse_label(cell)
                        .ok_or_else(|| parse_err(path, line, format!("label `{cell}` is not an integer")))?,
                );
            } else if Some(j) == anomaly_idx {
                flags
                    .push(parse_flag(cell).ok_or_else(|| {
                        parse_err(path, line, format!("anomaly flag `{cell}` is not 0/1/true/false"))
                    })?);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("column {j}: `{cell}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, format!("column {j}: non-finite value `{cell}`")));
                }
                cells.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "no data rows"));
    }
    let features = cells.len() / rows;
    if features == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    let mut data = DataMatrix::new(Matrix::from_vec(rows, features, cells)?)?;
    if label_idx.is_some() {
        data = data.with_labels(labels)?;
    }
    if anomaly_idx.is_some() {
        data = data.with_anomaly(flags)?;
    }
    Ok(data)
}

/// Shortest representation that parses back to the same `f64`, in plain
/// notation for moderate magnitudes and scientific otherwise.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = String>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        out.push_str(&v);
        first = false;
    }
    out.push('\n');
}

/// CSV text with header `x0,…` followed by `label` and `anomaly` columns
/// when present.
pub fn data_to_csv(data: &DataMatrix) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    if data.anomaly().is_some() {
        header.push("anomaly".into());
    }
    push_row(&mut out, header);
    for (i, row) in data.values().iter_rows().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        if let Some(l) = data.labels() {
            cells.push(l[i].to_string());
        }
        if let Some(a) = data.anomaly() {
            cells.push(u8::from(a[i]).to_string());
        }
        push_row(&mut out, cells);
    }
    out
}

pub fn save_csv(data: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomically(&[(path.as_ref().to_path_buf(), data_to_csv(data).into_bytes())])
}

/// Writes every file to a temporary sibling first and renames only after
/// all writes succeeded.
pub fn write_atomically(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| Error::io(path, e))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    }
    Ok(())
}

/// Condensed loss trace stored in the provenance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub records: usize,
    pub first: Option<LossRecord>,
    pub last: Option<LossRecord>,
}

/// Preprocessing applied before the optimizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub standardize: bool,
    pub pca_dim: Option<usize>,
}

/// Sidecar JSON written next to an embedding CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceFile {
    pub seed: u64,
    pub rng: String,
    pub n: usize,
    pub dim: usize,
    pub iterations: usize,
    pub capped_rows: usize,
    pub config: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessing>,
    pub trace_summary: TraceSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

/// Output paths derived from an embedding CSV path: `stem.json` for
/// provenance and `stem.trace.csv` for the loss trace.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let json = path.with_extension("json");
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let trace = path.with_file_name(format!("{stem}.trace.csv"));
    (json, trace)
}

pub fn embedding_to_csv(z: &Matrix) -> String {
    let mut out = String::new();
    push_row(&mut out, (0..z.cols()).map(|j| format!("dim{j}")));
    for row in z.iter_rows() {
        push_row(&mut out, row.iter().map(|&v| format_f64(v)));
    }
    out
}

pub fn trace_to_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("iteration,kl_loss,dens_loss,total,grad_norm\n");
    for r in trace {
        let dens = r.dens_loss.map(format_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            format_f64(r.kl_loss),
            dens,
            format_f64(r.total),
            format_f64(r.grad_norm)
        );
    }
    out
}

pub fn provenance_file(embedding: &Embedding, preprocessing: Option<Preprocessing>) -> ProvenanceFile {
    let p = &embedding.provenance;
    ProvenanceFile {
        seed: p.seed,
        rng: p.rng.clone(),
        n: embedding.z.rows(),
        dim: embedding.z.cols(),
        iterations: p.iterations,
        capped_rows: p.capped_rows,
        config: p.config.clone(),
        preprocessing,
        trace_summary: TraceSummary {
            records: p.trace.len(),
            first: p.trace.first().copied(),
            last: p.trace.last().copied(),
        },
        metrics: p.metrics.clone(),
    }
}

/// Writes the coordinate CSV, its provenance JSON and the loss-trace CSV,
/// all or nothing.
pub fn save_embedding(embedding: &Embedding, path: impl AsRef<Path>) -> Result<()> {
    save_embedding_with(embedding, path, None)
}

pub fn save_embedding_with(
    embedding: &Embedding,
    path: impl AsRef<Path>,
    preprocessing: Option<Preprocessing>,
) -> Result<()> {
    let path = path.as_ref();
    let (json, trace) = sidecar_paths(path);
    let mut prov = serde_json::to_string_pretty(&provenance_file(embedding, preprocessing))?;
    prov.push('\n');
    write_atomically(&[
        (path.to_path_buf(), embedding_to_csv(&embedding.z).into_bytes()),
        (json, prov.into_bytes()),
        (trace, trace_to_csv(&embedding.provenance.trace).into_bytes()),
    ])
}

/// Reads embedding coordinates written by [`save_embedding`] (or any
/// headered numeric CSV).
pub fn load_embedding(path: impl AsRef<Path>) -> Result<Matrix> {
    let opts = CsvOptions {
        has_header: true,
        ..Default::default()
    };
    Ok(load_csv(path, &opts)?.values().clone())
}

pub fn load_provenance(path: impl AsRef<Path>) -> Result<ProvenanceFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
