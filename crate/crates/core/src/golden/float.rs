//! Real-valued reference forward pass and scale-plan calibration.

use super::weights::{
    quantize_bias, quantize_matrix, EncoderDims, FloatLayer, FloatModel, LayerNormParams,
    LayerWeights, ModelWeights, ScalePlan,
};
use crate::error::{Error, Result};
use crate::quant::{calibrate_scale, gelu_real, quantize, QTensor};

fn matmul(a: &[f64], n: usize, m: usize, b: &[f64], p: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let row = &mut out[i * p..(i + 1) * p];
        row.copy_from_slice(bias);
        for k in 0..m {
            let av = a[i * m + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn layernorm(x: &[f64], width: usize, ln: &LayerNormParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let w = width as f64;
        let mean = row.iter().sum::<f64>() / w;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(
            row.iter()
                .zip(ln.gamma.iter().zip(&ln.beta))
                .map(|(v, (g, b))| (v - mean) * inv * g + b),
        );
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Running max-abs of every intermediate a scale is needed for.
#[derive(Default)]
struct Ranges {
    ln1: f64,
    q: f64,
    k: f64,
    v: f64,
    scores: f64,
    sa: f64,
    msa: f64,
    res1: f64,
    ln2: f64,
    fc1: f64,
    gelu: f64,
    fc2: f64,
    res2: f64,
}

fn scale_of(max: f64) -> f64 {
    calibrate_scale(&[max])
}

impl Ranges {
    fn plan(&self) -> ScalePlan {
        ScalePlan {
            ln1: scale_of(self.ln1),
            q: scale_of(self.q),
            k: scale_of(self.k),
            v: scale_of(self.v),
            scores: scale_of(self.scores),
            probs: 1.0 / 127.0,
            sa: scale_of(self.sa),
            msa: scale_of(self.msa),
            res1: scale_of(self.res1),
            ln2: scale_of(self.ln2),
            fc1: scale_of(self.fc1),
            gelu: scale_of(self.gelu),
            fc2: scale_of(self.fc2),
            res2: scale_of(self.res2),
        }
    }
}

fn forward_layer(x: &[f64], w: &FloatLayer, dims: &EncoderDims, r: &mut Ranges) -> Vec<f64> {
    let (n, d, m, k) = (dims.tokens, dims.dim, dims.mlp_hidden, dims.heads);
    let dh = dims.head_dim();
    let h = layernorm(x, d, &w.ln1);
    r.ln1 = r.ln1.max(max_abs(&h));
    let q = matmul(&h, n, d, &w.wq, d, &w.bq);
    let kk = matmul(&h, n, d, &w.wk, d, &w.bk);
    let v = matmul(&h, n, d, &w.wv, d, &w.bv);
    r.q = r.q.max(max_abs(&q));
    r.k = r.k.max(max_abs(&kk));
    r.v = r.v.max(max_abs(&v));
    let inv = 1.0 / (dh as f64).sqrt();
    let mut sa = vec![0.0; n * d];
    for head in 0..k {
        let off = head * dh;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let mut logits: Vec<f64> = (0..n)
                .map(|j| {
                    qi.iter()
                        .zip(&kk[j * d + off..j * d + off + dh])
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            r.scores = r.scores.max(max_abs(&logits));
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * inv;
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l * inv - mx).exp();
                sum += *l;
            }
            for c in 0..dh {
                let mut acc = 0.0;
                for (j, p) in logits.iter().enumerate() {
                    acc += p / sum * v[j * d + off + c];
                }
                sa[i * d + off + c] = acc;
            }
        }
    }
    r.sa = r.sa.max(max_abs(&sa));
    let proj = matmul(&sa, n, d, &w.w_msa, d, &w.b_msa);
    r.msa = r.msa.max(max_abs(&proj));
    let r1: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
    r.res1 = r.res1.max(max_abs(&r1));
    let h2 = layernorm(&r1, d, &w.ln2);
    r.ln2 = r.ln2.max(max_abs(&h2));
    let f1 = matmul(&h2, n, d, &w.w_fc1, m, &w.b_fc1);
    r.fc1 = r.fc1.max(max_abs(&f1));
    let g: Vec<f64> = f1.iter().map(|&v| gelu_real(v)).collect();
    r.gelu = r.gelu.max(max_abs(&g));
    let f2 = matmul(&g, n, m, &w.w_fc2, d, &w.b_fc2);
    r.fc2 = r.fc2.max(max_abs(&f2));
    let out: Vec<f64> = r1.iter().zip(&f2).map(|(a, b)| a + b).collect();
    r.res2 = r.res2.max(max_abs(&out));
    out
}

/// Real-valued forward pass of the whole stack.
pub fn float_forward(model: &FloatModel, input: &[f64]) -> Result<Vec<f64>> {
    let dims = &model.dims;
    if input.len() != dims.tokens * dims.dim {
        return Err(Error::Shape(format!(
            "input has {} values, expected {}x{}",
            input.len(),
            dims.tokens,
            dims.dim
        )));
    }
    let mut x = input.to_vec();
    for layer in &model.layers {
        x = forward_layer(&x, layer, dims, &mut Ranges::default());
    }
    Ok(x)
}

fn dequantized(t: &QTensor) -> Vec<f64> {
    t.dequantize()
}

/// Quantize a float model: per-tensor max-abs weight scales, and a scale plan
/// calibrated on one forward pass over `input` using the dequantized weights.
pub fn quantize_model(model: &FloatModel, input: &[f64]) -> Result<(ModelWeights, QTensor)> {
    let dims = model.dims;
    let (n, d, m) = (dims.tokens, dims.dim, dims.mlp_hidden);
    if input.len() != n * d {
        return Err(Error::Shape(format!(
            "input has {} values, expected {}",
            input.len(),
            n * d
        )));
    }
    let xq = quantize(input, vec![n, d], calibrate_scale(input))?;
    let mut x = xq.dequantize();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut plans = Vec::with_capacity(model.layers.len());
    for fl in &model.layers {
        let wq = quantize_matrix(&fl.wq, d, d)?;
        let wk = quantize_matrix(&fl.wk, d, d)?;
        let wv = quantize_matrix(&fl.wv, d, d)?;
        let w_msa = quantize_matrix(&fl.w_msa, d, d)?;
        let w_fc1 = quantize_matrix(&fl.w_fc1, d, m)?;
        let w_fc2 = quantize_matrix(&fl.w_fc2, m, d)?;
        let deq = FloatLayer {
            wq: dequantized(&wq),
            wk: dequantized(&wk),
            wv: dequantized(&wv),
            w_msa: dequantized(&w_msa),
            w_fc1: dequantized(&w_fc1),
            w_fc2: dequantized(&w_fc2),
            ..fl.clone()
        };
        let mut ranges = Ranges::default();
        let next = forward_layer(&x, &deq, &dims, &mut ranges);
        let plan = ranges.plan();
        layers.push(LayerWeights {
            heads: dims.heads,
            bq: quantize_bias(&fl.bq, plan.ln1 * wq.scale()),
            bk: quantize_bias(&fl.bk, plan.ln1 * wk.scale()),
            bv: quantize_bias(&fl.bv, plan.ln1 * wv.scale()),
            b_msa: quantize_bias(&fl.b_msa, plan.sa * w_msa.scale()),
            b_fc1: quantize_bias(&fl.b_fc1, plan.ln2 * w_fc1.scale()),
            b_fc2: quantize_bias(&fl.b_fc2, plan.gelu * w_fc2.scale()),
            wq,
            wk,
            wv,
            w_msa,
            w_fc1,
            w_fc2,
            ln1: fl.ln1.clone(),
            ln2: fl.ln2.clone(),
        });
        plans.push(plan);
        x = next;
    }
    Ok((
        ModelWeights {
            dims,
            layers,
            plans,
        },
        xq,
    ))
}

/// Cosine similarity of two equally long vectors (1.0 when both are zero).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
