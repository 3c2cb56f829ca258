use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelzoo::ModelSpec;
use crate::quant::{calibrate_scale, quantize, QTensor};

/// Dimensions of a single-stage encoder stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub tokens: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub depth: usize,
}

impl EncoderDims {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.dim == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return Err(Error::Shape(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "D={} not divisible by k={}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    /// Dimensions of a single plain-stage model at `tokens` sequence length.
    pub fn from_model(model: &ModelSpec, tokens: usize) -> Result<Self> {
        if !model.is_single_plain_stage() {
            return Err(Error::UnsupportedFunctionalModel(model.name.clone()));
        }
        let s = &model.stages[0];
        let d = Self {
            tokens,
            dim: s.latent_dim as usize,
            heads: s.heads as usize,
            mlp_hidden: s.mlp_hidden as usize,
            depth: s.depth as usize,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }
}

/// Output scale of every requantizing step of one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub ln1: f64,
    pub q: f64,
    pub k: f64,
    pub v: f64,
    pub scores: f64,
    pub probs: f64,
    pub sa: f64,
    pub msa: f64,
    pub res1: f64,
    pub ln2: f64,
    pub fc1: f64,
    pub gelu: f64,
    pub fc2: f64,
    pub res2: f64,
}

impl ScalePlan {
    /// Every scale set to `s` except the softmax output, which uses `1/127`.
    pub fn uniform(s: f64) -> Self {
        Self {
            ln1: s,
            q: s,
            k: s,
            v: s,
            scores: s,
            probs: 1.0 / 127.0,
            sa: s,
            msa: s,
            res1: s,
            ln2: s,
            fc1: s,
            gelu: s,
            fc2: s,
            res2: s,
        }
    }
}

/// Quantized weights of one encoder layer. Biases are pre-scaled into the
/// accumulator domain of their matmul.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub heads: usize,
    pub wq: QTensor,
    pub wk: QTensor,
    pub wv: QTensor,
    pub w_msa: QTensor,
    pub w_fc1: QTensor,
    pub w_fc2: QTensor,
    pub bq: Vec<i32>,
    pub bk: Vec<i32>,
    pub bv: Vec<i32>,
    pub b_msa: Vec<i32>,
    pub b_fc1: Vec<i32>,
    pub b_fc2: Vec<i32>,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl LayerWeights {
    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.w_fc1.shape()[1]
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        let m = self.mlp_hidden();
        let want = |t: &QTensor, r: usize, c: usize, name: &str| {
            if t.shape() == [r, c] {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected [{r}, {c}]",
                    t.shape()
                )))
            }
        };
        want(&self.wq, d, d, "wq")?;
        want(&self.wk, d, d, "wk")?;
        want(&self.wv, d, d, "wv")?;
        want(&self.w_msa, d, d, "w_msa")?;
        want(&self.w_fc1, d, m, "w_fc1")?;
        want(&self.w_fc2, m, d, "w_fc2")?;
        let lens = [
            (self.bq.len(), d),
            (self.bk.len(), d),
            (self.bv.len(), d),
            (self.b_msa.len(), d),
            (self.b_fc1.len(), m),
            (self.b_fc2.len(), d),
            (self.ln1.gamma.len(), d),
            (self.ln1.beta.len(), d),
            (self.ln2.gamma.len(), d),
            (self.ln2.beta.len(), d),
        ];
        if lens.iter().any(|(a, b)| a != b) {
            return Err(Error::Shape("bias or layernorm length mismatch".into()));
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "D={d} not divisible by k={}",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Quantized encoder stack with its frozen scale plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub dims: EncoderDims,
    pub layers: Vec<LayerWeights>,
    pub plans: Vec<ScalePlan>,
}

/// Real-valued weights of one layer, row-major `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatLayer {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub w_msa: Vec<f64>,
    pub w_fc1: Vec<f64>,
    pub w_fc2: Vec<f64>,
    pub bq: Vec<f64>,
    pub bk: Vec<f64>,
    pub bv: Vec<f64>,
    pub b_msa: Vec<f64>,
    pub b_fc1: Vec<f64>,
    pub b_fc2: Vec<f64>,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatModel {
    pub dims: EncoderDims,
    pub layers: Vec<FloatLayer>,
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl FloatModel {
    /// Seeded random model. The generator is ChaCha8 seeded with `seed`; per
    /// layer it draws, in order, W^Q, W^K, W^V, W^msa, W^fc1, W^fc2 (uniform in
    /// ±1/sqrt(fan_in)), the six biases (±0.02), then γ1, β1, γ2, β2.
    pub fn random(dims: EncoderDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m) = (dims.dim, dims.mlp_hidden);
        let sd = 1.0 / (d as f64).sqrt();
        let sm = 1.0 / (m as f64).sqrt();
        let layers = (0..dims.depth)
            .map(|_| {
                let wq = uniform(&mut rng, d * d, sd);
                let wk = uniform(&mut rng, d * d, sd);
                let wv = uniform(&mut rng, d * d, sd);
                let w_msa = uniform(&mut rng, d * d, sd);
                let w_fc1 = uniform(&mut rng, d * m, sd);
                let w_fc2 = uniform(&mut rng, m * d, sm);
                let bq = uniform(&mut rng, d, 0.02);
                let bk = uniform(&mut rng, d, 0.02);
                let bv = uniform(&mut rng, d, 0.02);
                let b_msa = uniform(&mut rng, d, 0.02);
                let b_fc1 = uniform(&mut rng, m, 0.02);
                let b_fc2 = uniform(&mut rng, d, 0.02);
                let mut ln = || LayerNormParams {
                    gamma: (0..d).map(|_| rng.gen_range(0.8..=1.2)).collect(),
                    beta: uniform(&mut rng, d, 0.1),
                };
                let ln1 = ln();
                let ln2 = ln();
                FloatLayer {
                    wq,
                    wk,
                    wv,
                    w_msa,
                    w_fc1,
                    w_fc2,
                    bq,
                    bk,
                    bv,
                    b_msa,
                    b_fc1,
                    b_fc2,
                    ln1,
                    ln2,
                }
            })
            .collect();
        Ok(Self { dims, layers })
    }
}

/// Seeded input activations, uniform in ±1, drawn after the model with the same rule.
pub fn random_input(dims: &EncoderDims, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    uniform(&mut rng, dims.tokens * dims.dim, 1.0)
}

pub(crate) fn quantize_matrix(w: &[f64], rows: usize, cols: usize) -> Result<QTensor> {
    quantize(w, vec![rows, cols], calibrate_scale(w))
}

pub(crate) fn quantize_bias(b: &[f64], acc_scale: f64) -> Vec<i32> {
    b.iter()
        .map(|&v| {
            (v / acc_scale)
                .round_ties_even()
                .clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect()
}
