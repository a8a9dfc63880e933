//! File formats: CSV data matrices, JSON partitions, models, truths and metrics.
//!
//! Every JSON document carries a `schema_version` string; readers reject
//! documents from a different schema.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::learner::{Algorithm, Embedding, FittedModel, TraceEntry};
use crate::model::{CorrMatrix, Dataset, Edge, MixedGraph, ModelParams, Partition};
use crate::synthetic::TrueModel;
use crate::{Error, Result};

pub const PARTITION_SCHEMA: &str = "scca-partition/1";
pub const MODEL_SCHEMA: &str = "scca-model/1";
pub const TRUTH_SCHEMA: &str = "scca-truth/1";
pub const METRICS_SCHEMA: &str = "scca-metrics/1";
pub const SUMMARY_SCHEMA: &str = "scca-summary/1";

/// `(format, schema)` for every file type, for `--version` output.
pub const SCHEMAS: [(&str, &str); 5] = [
    ("partition", PARTITION_SCHEMA),
    ("model", MODEL_SCHEMA),
    ("truth", TRUTH_SCHEMA),
    ("metrics", METRICS_SCHEMA),
    ("summary", SUMMARY_SCHEMA),
];

fn schema_err(context: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        context: context.display().to_string(),
        message: message.into(),
    }
}

/// Reads a CSV with a header of variable names followed by 0/1 rows. Row
/// numbers in errors are file line numbers.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

fn read_csv(reader: impl std::io::Read, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::InvalidData(format!("{}: unreadable header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().any(String::is_empty) {
        return Err(Error::InvalidData(format!("{}: header has empty column names", path.display())));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(Error::InvalidData(format!("{}: duplicate column {dup:?}", path.display())));
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| Error::Data {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != columns.len() {
            return Err(Error::Data {
                row: line,
                column: String::new(),
                message: format!("{} fields, expected {}", rec.len(), columns.len()),
            });
        }
        let row = rec
            .iter()
            .zip(&columns)
            .map(|(cell, col)| match cell {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Data {
                    row: line,
                    column: col.clone(),
                    message: format!("value {other:?} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(row);
    }
    Dataset::new(columns, rows)
}

pub fn save_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(data.n_rows() * (2 * data.n_cols() + 1) + 64);
    out.push_str(&data.columns().join(","));
    out.push('\n');
    for row in data.rows() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push(if *v == 0 { '0' } else { '1' });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes any serializable value as pretty JSON.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| schema_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| schema_err(path, e.to_string()))
}

fn check_schema(path: &Path, found: &str, want: &str) -> Result<()> {
    if found != want {
        return Err(schema_err(path, format!("schema_version {found:?}, expected {want:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionDoc {
    schema_version: String,
    #[serde(flatten)]
    partition: Partition,
}

pub fn save_partition(path: impl AsRef<Path>, partition: &Partition) -> Result<()> {
    save_json(
        path,
        &PartitionDoc {
            schema_version: PARTITION_SCHEMA.into(),
            partition: partition.clone(),
        },
    )
}

/// Reads a partition. The `schema_version` field may be omitted in
/// hand-written files.
pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    #[derive(Deserialize)]
    struct Loose {
        schema_version: Option<String>,
        #[serde(flatten)]
        partition: serde_json::Value,
    }
    let path = path.as_ref();
    let doc: Loose = load_json(path)?;
    if let Some(v) = &doc.schema_version {
        check_schema(path, v, PARTITION_SCHEMA)?;
    }
    serde_json::from_value(doc.partition).map_err(|e| schema_err(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub slope: f64,
    pub intercept: f64,
}

/// Learner output kept alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub algorithm: Algorithm,
    pub pcl: f64,
    pub pcl_regressions: usize,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    schema_version: String,
    partition: Partition,
    edges: Vec<[String; 2]>,
    beta: BTreeMap<String, Beta>,
    sigma: Vec<Vec<f64>>,
    theta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_raw: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitInfo>,
}

/// A model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub graph: MixedGraph,
    pub params: ModelParams,
    pub fit: Option<FitInfo>,
}

impl From<&FittedModel> for StoredModel {
    fn from(m: &FittedModel) -> Self {
        StoredModel {
            graph: m.graph.clone(),
            params: m.params.clone(),
            fit: Some(FitInfo {
                algorithm: m.algorithm,
                pcl: m.pcl,
                pcl_regressions: m.pcl_regressions,
                trace: m.trace.clone(),
            }),
        }
    }
}

fn theta_key(part: &Partition, e: Edge) -> String {
    format!("{}<->{}", part.name(e.lo()), part.name(e.hi()))
}

fn to_doc(schema: &str, graph: &MixedGraph, params: &ModelParams, sigma_raw: Option<Vec<Vec<f64>>>, fit: Option<FitInfo>) -> ModelDoc {
    let part = graph.partition();
    ModelDoc {
        schema_version: schema.into(),
        partition: (**part).clone(),
        edges: graph
            .edges()
            .iter()
            .map(|e| [part.name(e.lo()).to_string(), part.name(e.hi()).to_string()])
            .collect(),
        beta: (0..part.n_vars())
            .map(|i| {
                (
                    part.name(i).to_string(),
                    Beta {
                        slope: params.slopes[i],
                        intercept: params.intercepts[i],
                    },
                )
            })
            .collect(),
        sigma: params.sigma.to_rows(),
        theta: params.thetas.iter().map(|(&e, &t)| (theta_key(part, e), t)).collect(),
        sigma_raw,
        fit,
    }
}

fn from_doc(path: &Path, doc: ModelDoc) -> Result<(MixedGraph, ModelParams, Option<Vec<Vec<f64>>>, Option<FitInfo>)> {
    let part = Arc::new(doc.partition);
    let edge_of = |a: &str, b: &str| -> Result<Edge> {
        let (ia, ib) = (part.index_of(a)?, part.index_of(b)?);
        if ia == ib {
            return Err(schema_err(path, format!("self-loop edge on {a:?}")));
        }
        Edge::new(ia, ib)
    };
    let edges = doc.edges.iter().map(|[a, b]| edge_of(a, b)).collect::<Result<Vec<_>>>()?;
    let graph = MixedGraph::with_edges(part.clone(), edges)?;
    let p = part.n_vars();
    let mut slopes = vec![f64::NAN; p];
    let mut intercepts = vec![f64::NAN; p];
    for (name, b) in &doc.beta {
        let i = part.index_of(name)?;
        slopes[i] = b.slope;
        intercepts[i] = b.intercept;
    }
    if let Some(i) = slopes.iter().position(|s| s.is_nan()) {
        return Err(schema_err(path, format!("beta missing for variable {:?}", part.name(i))));
    }
    if doc.sigma.len() != part.n_groups() {
        return Err(schema_err(path, format!("sigma has {} rows, expected {}", doc.sigma.len(), part.n_groups())));
    }
    let sigma = CorrMatrix::from_values(&doc.sigma).map_err(|e| schema_err(path, format!("sigma: {e}")))?;
    let mut thetas = BTreeMap::new();
    for (key, &t) in &doc.theta {
        let (a, b) = key
            .split_once("<->")
            .ok_or_else(|| schema_err(path, format!("theta key {key:?} is not of the form A<->B")))?;
        thetas.insert(edge_of(a, b)?, t);
    }
    let params = ModelParams {
        slopes,
        intercepts,
        sigma,
        thetas,
    };
    params.validate(&graph).map_err(|e| schema_err(path, e.to_string()))?;
    Ok((graph, params, doc.sigma_raw, doc.fit))
}

pub fn save_model(path: impl AsRef<Path>, model: &StoredModel) -> Result<()> {
    save_json(path, &to_doc(MODEL_SCHEMA, &model.graph, &model.params, None, model.fit.clone()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<StoredModel> {
    let path = path.as_ref();
    let doc: ModelDoc = load_json(path)?;
    check_schema(path, &doc.schema_version, MODEL_SCHEMA)?;
    let (graph, params, _, fit) = from_doc(path, doc)?;
    Ok(StoredModel { graph, params, fit })
}

pub fn save_truth(path: impl AsRef<Path>, truth: &TrueModel) -> Result<()> {
    save_json(
        path,
        &to_doc(TRUTH_SCHEMA, &truth.graph, &truth.params, Some(truth.sigma_raw.clone()), None),
    )
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<TrueModel> {
    let path = path.as_ref();
    let doc: ModelDoc = load_json(path)?;
    check_schema(path, &doc.schema_version, TRUTH_SCHEMA)?;
    let (graph, params, raw, _) = from_doc(path, doc)?;
    let sigma_raw = raw.ok_or_else(|| schema_err(path, "truth file lacks sigma_raw"))?;
    Ok(TrueModel {
        graph,
        params,
        sigma_raw,
    })
}

/// Recovery metrics of one learned model against its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// Absent when the truth has no edges.
    pub omission: Option<f64>,
    pub commission: f64,
    pub slope_rmse: f64,
    pub true_edges: usize,
    pub learned_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub algorithms: BTreeMap<Algorithm, RecoveryMetrics>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pcl_regressions: BTreeMap<Algorithm, usize>,
}

impl MetricsDoc {
    pub fn new(trial: Option<usize>) -> Self {
        MetricsDoc {
            schema_version: METRICS_SCHEMA.into(),
            trial,
            algorithms: BTreeMap::new(),
            pcl_regressions: BTreeMap::new(),
        }
    }
}

pub fn save_metrics(path: impl AsRef<Path>, metrics: &MetricsDoc) -> Result<()> {
    save_json(path, metrics)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<MetricsDoc> {
    let path = path.as_ref();
    let doc: MetricsDoc = load_json(path)?;
    check_schema(path, &doc.schema_version, METRICS_SCHEMA)?;
    Ok(doc)
}

/// One row per embedded observation: the latent values by group name, then a
/// convergence flag.
pub fn save_embeddings(path: impl AsRef<Path>, partition: &Partition, rows: &[Embedding]) -> Result<()> {
    let path = path.as_ref();
    let mut out: Vec<String> = partition.groups().iter().map(|g| g.name.clone()).collect();
    out.push("converged".into());
    let mut text = out.join(",") + "\n";
    for e in rows {
        let mut cells: Vec<String> = e.x.iter().map(|v| v.to_string()).collect();
        cells.push(u8::from(e.converged).to_string());
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
