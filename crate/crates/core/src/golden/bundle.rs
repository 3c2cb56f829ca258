//! Weight bundles: one tensor file per matrix plus a JSON manifest listing
//! paths, scales, biases, LayerNorm parameters and scale plans.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::weights::{EncoderDims, LayerNormParams, LayerWeights, ModelWeights, ScalePlan};
use crate::error::{Error, Result};
use crate::quant::{read_tensor_file, write_tensor_file, QTensor};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub path: String,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub wq: TensorEntry,
    pub wk: TensorEntry,
    pub wv: TensorEntry,
    pub w_msa: TensorEntry,
    pub w_fc1: TensorEntry,
    pub w_fc2: TensorEntry,
    pub bq: Vec<i32>,
    pub bk: Vec<i32>,
    pub bv: Vec<i32>,
    pub b_msa: Vec<i32>,
    pub b_fc1: Vec<i32>,
    pub b_fc2: Vec<i32>,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub plan: ScalePlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub dims: EncoderDims,
    #[serde(default)]
    pub input: Option<TensorEntry>,
    pub layers: Vec<LayerEntry>,
}

fn store(dir: &Path, name: String, t: &QTensor) -> Result<TensorEntry> {
    write_tensor_file(&dir.join(&name), t)?;
    Ok(TensorEntry {
        path: name,
        scale: t.scale(),
    })
}

fn load(dir: &Path, e: &TensorEntry) -> Result<QTensor> {
    let t = read_tensor_file(&dir.join(&e.path))?;
    if t.scale() != e.scale {
        return Err(Error::Parse(format!(
            "{}: file scale {} disagrees with manifest scale {}",
            e.path,
            t.scale(),
            e.scale
        )));
    }
    Ok(t)
}

/// Write every matrix under `dir` and return the manifest path.
pub fn save_bundle(dir: &Path, weights: &ModelWeights, input: Option<&QTensor>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(weights.layers.len());
    for (i, (w, plan)) in weights.layers.iter().zip(&weights.plans).enumerate() {
        layers.push(LayerEntry {
            wq: store(dir, format!("l{i}_wq.bin"), &w.wq)?,
            wk: store(dir, format!("l{i}_wk.bin"), &w.wk)?,
            wv: store(dir, format!("l{i}_wv.bin"), &w.wv)?,
            w_msa: store(dir, format!("l{i}_wmsa.bin"), &w.w_msa)?,
            w_fc1: store(dir, format!("l{i}_wfc1.bin"), &w.w_fc1)?,
            w_fc2: store(dir, format!("l{i}_wfc2.bin"), &w.w_fc2)?,
            bq: w.bq.clone(),
            bk: w.bk.clone(),
            bv: w.bv.clone(),
            b_msa: w.b_msa.clone(),
            b_fc1: w.b_fc1.clone(),
            b_fc2: w.b_fc2.clone(),
            ln1: w.ln1.clone(),
            ln2: w.ln2.clone(),
            plan: *plan,
        });
    }
    let input = input
        .map(|t| store(dir, "input.bin".into(), t))
        .transpose()?;
    let manifest = BundleManifest {
        dims: weights.dims,
        input,
        layers,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Load a bundle; tensor paths resolve relative to the manifest's directory.
pub fn load_bundle(manifest_path: &Path) -> Result<(ModelWeights, Option<QTensor>)> {
    let text = std::fs::read_to_string(manifest_path)?;
    let m: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    m.dims.validate()?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(m.layers.len());
    let mut plans = Vec::with_capacity(m.layers.len());
    for e in &m.layers {
        let w = LayerWeights {
            heads: m.dims.heads,
            wq: load(dir, &e.wq)?,
            wk: load(dir, &e.wk)?,
            wv: load(dir, &e.wv)?,
            w_msa: load(dir, &e.w_msa)?,
            w_fc1: load(dir, &e.w_fc1)?,
            w_fc2: load(dir, &e.w_fc2)?,
            bq: e.bq.clone(),
            bk: e.bk.clone(),
            bv: e.bv.clone(),
            b_msa: e.b_msa.clone(),
            b_fc1: e.b_fc1.clone(),
            b_fc2: e.b_fc2.clone(),
            ln1: e.ln1.clone(),
            ln2: e.ln2.clone(),
        };
        w.check()?;
        layers.push(w);
        plans.push(e.plan);
    }
    let input = m.input.as_ref().map(|e| load(dir, e)).transpose()?;
    Ok((
        ModelWeights {
            dims: m.dims,
            layers,
            plans,
        },
        input,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden::toy_model;

    #[test]
    fn bundle_round_trip() {
        let dims = EncoderDims {
            tokens: 4,
            dim: 8,
            heads: 2,
            mlp_hidden: 12,
            depth: 2,
        };
        let (w, x, _, _) = toy_model(dims, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_bundle(dir.path(), &w, Some(&x)).unwrap();
        let (w2, x2) = load_bundle(&path).unwrap();
        assert_eq!(w2, w);
        assert_eq!(x2.unwrap(), x);
    }
}
