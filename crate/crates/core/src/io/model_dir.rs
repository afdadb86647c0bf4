//! Model directory format: `manifest.json` + `weights.bin`.
//!
//! The manifest records the config, the generation seed (if any), and one
//! entry per tensor — name, shape, byte offset — in a fixed canonical order.
//! `weights.bin` is the tensors' f32 data, little-endian, concatenated in
//! that same order. Saving is deterministic; loading is strict (every
//! expected tensor present with the expected shape, nothing extra) so a
//! save/load/save round trip is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecoderLayerWeights, NeuralModel, ShareConfig};
use crate::tensor::Tensor2D;

const MANIFEST_FORMAT: &str = "shared-pipeline-model-v1";
const MANIFEST_FILE: &str = "manifest.json";
const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ShareConfig,
    seed: Option<u64>,
    tensors: Vec<TensorMeta>,
}

/// What `save_model` wrote, for CLI reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub tensors: usize,
    pub weight_bytes: u64,
    pub parameters: u64,
}

/// Canonical tensor order: embedding, then per unique layer the projections
/// and norms, then the shared final norm.
fn tensor_views(model: &NeuralModel) -> Vec<(String, usize, usize, &[f32])> {
    let mut v: Vec<(String, usize, usize, &[f32])> = Vec::new();
    let emb = model.embedding();
    v.push(("embedding".into(), emb.rows(), emb.cols(), emb.data()));
    for (i, layer) in model.layers().iter().enumerate() {
        let mats: [(&str, &Tensor2D); 6] = [
            ("wq", &layer.wq),
            ("wk", &layer.wk),
            ("wv", &layer.wv),
            ("wo", &layer.wo),
            ("w_in", &layer.w_in),
            ("w_out", &layer.w_out),
        ];
        for (name, t) in mats {
            v.push((format!("layer{i}.{name}"), t.rows(), t.cols(), t.data()));
        }
        let vecs: [(&str, &[f32]); 4] = [
            ("ln_attn_gain", &layer.ln_attn_gain),
            ("ln_attn_bias", &layer.ln_attn_bias),
            ("ln_ffn_gain", &layer.ln_ffn_gain),
            ("ln_ffn_bias", &layer.ln_ffn_bias),
        ];
        for (name, s) in vecs {
            v.push((format!("layer{i}.{name}"), 1, s.len(), s));
        }
    }
    let (gain, bias) = model.final_norm();
    v.push(("final_gain".into(), 1, gain.len(), gain));
    v.push(("final_bias".into(), 1, bias.len(), bias));
    v
}

fn expected_names(config: &ShareConfig) -> Vec<String> {
    let mut names = vec!["embedding".to_string()];
    for i in 0..config.n_unique {
        for n in ["wq", "wk", "wv", "wo", "w_in", "w_out", "ln_attn_gain", "ln_attn_bias", "ln_ffn_gain", "ln_ffn_bias"] {
            names.push(format!("layer{i}.{n}"));
        }
    }
    names.push("final_gain".into());
    names.push("final_bias".into());
    names
}

fn file_err(path: &Path, e: std::io::Error) -> Error {
    Error::File(path.display().to_string(), e)
}

/// Write `manifest.json` and `weights.bin` under `dir` (created if needed).
pub fn save_model(model: &NeuralModel, dir: &Path) -> Result<ModelSummary> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let views = tensor_views(model);
    let mut tensors = Vec::with_capacity(views.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, rows, cols, data) in &views {
        tensors.push(TensorMeta {
            name: name.clone(),
            rows: *rows,
            cols: *cols,
            offset: blob.len() as u64,
        });
        for x in *data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config: model.config().clone(),
        seed: model.seed(),
        tensors,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format {
        kind: "manifest",
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(&manifest_path, json + "\n").map_err(|e| file_err(&manifest_path, e))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, &blob).map_err(|e| file_err(&weights_path, e))?;
    let parameters: u64 = views.iter().map(|(_, r, c, _)| (r * c) as u64).sum();
    Ok(ModelSummary { tensors: views.len(), weight_bytes: blob.len() as u64, parameters })
}

fn take_tensor(
    meta: &TensorMeta,
    blob: &[u8],
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<Vec<f32>> {
    let bad = |detail: String| Error::Format {
        kind: "manifest",
        path: path.display().to_string(),
        detail,
    };
    if meta.rows != rows || meta.cols != cols {
        return Err(bad(format!(
            "tensor {} is {}x{}, expected {rows}x{cols}",
            meta.name, meta.rows, meta.cols
        )));
    }
    let n = rows * cols * 4;
    let start = meta.offset as usize;
    let end = start.checked_add(n).filter(|&e| e <= blob.len()).ok_or_else(|| {
        bad(format!(
            "tensor {} spans bytes {start}..{} but weights hold {}",
            meta.name,
            start + n,
            blob.len()
        ))
    })?;
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Load a model directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<NeuralModel> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bad = |detail: String| Error::Format {
        kind: "manifest",
        path: manifest_path.display().to_string(),
        detail,
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| file_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(bad(format!(
            "format tag {:?}, this reader understands {MANIFEST_FORMAT:?}",
            manifest.format
        )));
    }
    let config = manifest.config.clone();
    config.validate()?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights_path).map_err(|e| file_err(&weights_path, e))?;

    let names = expected_names(&config);
    if manifest.tensors.len() != names.len() {
        return Err(bad(format!(
            "{} tensors listed, expected {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let mut by_name = std::collections::HashMap::new();
    for t in &manifest.tensors {
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(bad(format!("tensor {} listed twice", t.name)));
        }
    }
    let get = |name: &str| {
        by_name.get(name).copied().ok_or_else(|| bad(format!("tensor {name} missing")))
    };
    let d = config.d_model;
    let matrix = |name: &str, rows: usize, cols: usize| -> Result<Tensor2D> {
        let data = take_tensor(get(name)?, &blob, rows, cols, &manifest_path)?;
        Tensor2D::new(rows, cols, data)
    };
    let vector = |name: &str, len: usize| -> Result<Vec<f32>> {
        take_tensor(get(name)?, &blob, 1, len, &manifest_path)
    };

    let embedding = matrix("embedding", config.vocab_size, d)?;
    let mut layers = Vec::with_capacity(config.n_unique);
    for i in 0..config.n_unique {
        let p = |n: &str| format!("layer{i}.{n}");
        layers.push(DecoderLayerWeights {
            wq: matrix(&p("wq"), d, d)?,
            wk: matrix(&p("wk"), d, d)?,
            wv: matrix(&p("wv"), d, d)?,
            wo: matrix(&p("wo"), d, d)?,
            w_in: matrix(&p("w_in"), d, config.d_ffn)?,
            w_out: matrix(&p("w_out"), config.d_ffn, d)?,
            ln_attn_gain: vector(&p("ln_attn_gain"), d)?,
            ln_attn_bias: vector(&p("ln_attn_bias"), d)?,
            ln_ffn_gain: vector(&p("ln_ffn_gain"), d)?,
            ln_ffn_bias: vector(&p("ln_ffn_bias"), d)?,
        });
    }
    let final_gain = vector("final_gain", d)?;
    let final_bias = vector("final_bias", d)?;
    NeuralModel::from_parts(config, layers, embedding, final_gain, final_bias, manifest.seed)
}
