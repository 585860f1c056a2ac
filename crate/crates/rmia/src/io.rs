//! File formats: tabular CSV, model manifests with binary parameter blobs,
//! log-scale ROC tables and JSON-lines score streams.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rmia_core::attack::{AttackKind, Guess};
use rmia_core::data::{apply_label_rule, Dataset, LabelRule, Provenance};
use rmia_core::metrics::{log_rows, RocCurve};
use rmia_core::nn::{Classifier, Model, TrainingMeta, VaeModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};

const BLOB_MAGIC: &[u8; 8] = b"RMIABLOB";
const MODEL_FORMAT: &str = "rmia-model";
const MODEL_FORMAT_VERSION: u32 = 1;

/// Read a CSV with a header row. Every column except `label_column` is a
/// numeric feature; the label column is mapped to {0, 1} by `rule`.
pub fn load_tabular(path: &Path, label_column: &str, rule: LabelRule) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    let headers = reader.headers()?.clone();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| Error::Format {
        path: path.into(),
        reason: format!("label column {label_column:?} not found"),
    })?;
    let names: Vec<String> = headers.iter().enumerate().filter(|&(j, _)| j != label_idx).map(|(_, h)| h.to_string()).collect();
    if names.is_empty() {
        return Err(Error::Format { path: path.into(), reason: "no feature columns".into() });
    }
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse { path: path.into(), row, column: String::new(), reason: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.into(),
                row,
                column: String::new(),
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                row,
                column: headers[j].to_string(),
                reason: format!("not a number: {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse { path: path.into(), row, column: headers[j].to_string(), reason: "not finite".into() });
            }
            if j == label_idx {
                raw_labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let labels = apply_label_rule(&raw_labels, rule).map_err(|e| match e {
        rmia_core::Error::NonBinaryLabel { row, value } => Error::Parse {
            path: path.into(),
            row: row + 1,
            column: label_column.to_string(),
            reason: format!("label {value} is not 0 or 1"),
        },
        other => Error::Stage { stage: "load", source: other },
    })?;
    let provenance = Provenance::File { path: path.display().to_string(), label_column: label_column.into(), label_rule: rule };
    Dataset::with_names(features, labels, names, provenance).stage("load")
}

/// Write features under their names plus a trailing `label` column.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for (row, y) in data.rows().zip(data.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON half of a saved model; parameters live in the sibling `blob` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub format_version: u32,
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Hidden widths of a classifier, or `[hidden, latent]` of a VAE.
    pub hidden: Vec<usize>,
    pub tensors: Vec<TensorInfo>,
    pub n_params: usize,
    pub blob: String,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Vae,
}

fn tensor_names(n: usize) -> Vec<String> {
    (0..n).map(|i| if i % 2 == 0 { format!("layer{}.weight", i / 2) } else { format!("layer{}.bias", i / 2) }).collect()
}

fn write_blob(path: &Path, shapes: &[Vec<usize>], params: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + params.len() * 8);
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for s in shapes {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for &d in s {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out).map_err(Error::io(path))
}

fn read_blob(path: &Path) -> Result<(Vec<Vec<usize>>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let bad = |reason: &str| Error::Format { path: path.into(), reason: reason.into() };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated blob"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != BLOB_MAGIC {
        return Err(bad("bad magic"));
    }
    let n_tensors = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shapes = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let dims = (0..rank).map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize)).collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let params = (0..total).map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap()))).collect::<Result<Vec<_>>>()?;
    if take(1).is_ok() {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok((shapes, params))
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn save_parts(path: &Path, kind: ModelKind, input_dim: usize, hidden: Vec<usize>, shapes: Vec<Vec<usize>>, params: &[f64], meta: &TrainingMeta) -> Result<()> {
    let blob = blob_path(path);
    write_blob(&blob, &shapes, params)?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        format_version: MODEL_FORMAT_VERSION,
        kind,
        input_dim,
        hidden,
        tensors: tensor_names(shapes.len()).into_iter().zip(shapes).map(|(name, shape)| TensorInfo { name, shape }).collect(),
        n_params: params.len(),
        blob: blob.file_name().unwrap().to_string_lossy().into_owned(),
        meta: meta.clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&manifest)?).map_err(Error::io(path))
}

fn load_parts(path: &Path, kind: ModelKind) -> Result<(ModelManifest, Vec<f64>)> {
    let text = fs::read(path).map_err(Error::io(path))?;
    let manifest: ModelManifest = serde_json::from_slice(&text)?;
    let bad = |reason: String| Error::Format { path: path.into(), reason };
    if manifest.format != MODEL_FORMAT || manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.format_version)));
    }
    if manifest.kind != kind {
        return Err(bad(format!("expected a {kind:?} file, found {:?}", manifest.kind)));
    }
    let blob = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let (shapes, params) = read_blob(&blob)?;
    let declared: Vec<Vec<usize>> = manifest.tensors.iter().map(|t| t.shape.clone()).collect();
    if shapes != declared || params.len() != manifest.n_params {
        return Err(bad("tensor shapes in manifest and blob disagree".into()));
    }
    Ok((manifest, params))
}

/// Write `<path>` (JSON manifest) and `<path>.bin` (parameters).
pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    save_parts(path, ModelKind::Classifier, model.input_dim(), model.hidden().to_vec(), model.tensor_shapes(), model.params(), &model.meta)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let (m, params) = load_parts(path, ModelKind::Classifier)?;
    let model = Model::from_parts(m.input_dim, &m.hidden, params, m.meta).stage("load model")?;
    if model.tensor_shapes() != m.tensors.iter().map(|t| t.shape.clone()).collect::<Vec<_>>() {
        return Err(Error::Format { path: path.into(), reason: "tensor shapes do not match the architecture".into() });
    }
    Ok(model)
}

pub fn save_vae(path: &Path, vae: &VaeModel) -> Result<()> {
    save_parts(path, ModelKind::Vae, vae.input_dim(), vec![vae.hidden_dim(), vae.latent_dim()], vae.tensor_shapes(), vae.params(), &vae.meta)
}

pub fn load_vae(path: &Path) -> Result<VaeModel> {
    let (m, params) = load_parts(path, ModelKind::Vae)?;
    let [hidden, latent] = m.hidden[..] else {
        return Err(Error::Format { path: path.into(), reason: "VAE manifest needs [hidden, latent]".into() });
    };
    let vae = VaeModel::from_parts(m.input_dim, hidden, latent, params, m.meta).stage("load vae")?;
    if vae.tensor_shapes() != m.tensors.iter().map(|t| t.shape.clone()).collect::<Vec<_>>() {
        return Err(Error::Format { path: path.into(), reason: "tensor shapes do not match the architecture".into() });
    }
    Ok(vae)
}

/// CSV `fpr,tpr,fpr_raw`, one row per curve point, zero FPR clamped for log axes.
pub fn export_log_roc(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    w.write_record(["fpr", "tpr", "fpr_raw"])?;
    for (f, t, raw) in log_rows(curve) {
        w.write_record([format!("{f:?}"), format!("{t:?}"), format!("{raw:?}")])?;
    }
    w.flush().map_err(Error::io(path))
}

/// Read an exported ROC table back as `(fpr_raw, tpr)` points.
pub fn read_log_roc(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["fpr", "tpr", "fpr_raw"] {
        return Err(Error::Format { path: path.into(), reason: "header must be fpr,tpr,fpr_raw".into() });
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize, name: &str| -> Result<f64> {
            rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.into(),
                row: i + 1,
                column: name.into(),
                reason: "not a number".into(),
            })
        };
        points.push((field(2, "fpr_raw")?, field(1, "tpr")?));
    }
    Ok(points)
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub point_id: String,
    pub attack: AttackKind,
    /// Raw attack statistic (distance, loss or logit confidence) before any fit.
    pub statistic: f64,
    /// Value ranked by the ROC sweep; larger means MEMBER in this direction.
    pub score: f64,
    pub direction: crate::runner::Direction,
    pub guess_at: BTreeMap<String, Guess>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            row: i + 1,
            column: String::new(),
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
