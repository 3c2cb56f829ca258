//! Reference execution of the encoder stack, op by op with every
//! intermediate materialized. The dataflow engine must match it byte for byte.

mod bundle;
mod float;
mod weights;

pub use bundle::{load_bundle, save_bundle, BundleManifest};
pub use float::{cosine_similarity, float_forward, quantize_model};
pub use weights::{
    random_input, EncoderDims, FloatLayer, FloatModel, LayerNormParams, LayerWeights, ModelWeights,
    ScalePlan,
};

use crate::error::{Error, Result};
use crate::quant::{gelu, layernorm_rows, qmatmul, residual_add, softmax_rows, QTensor};

/// Multi-head self-attention on an already normalized input `z`, including
/// the output projection.
pub fn golden_msa(z: &QTensor, w: &LayerWeights, plan: &ScalePlan) -> Result<QTensor> {
    w.check()?;
    let (_, d) = z.dims2()?;
    if d != w.dim() {
        return Err(Error::Shape(format!(
            "input width {d} != model width {}",
            w.dim()
        )));
    }
    let dh = w.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let (c0, c1) = (h * dh, (h + 1) * dh);
        let q = qmatmul(z, &w.wq.slice_cols(c0, c1)?, &w.bq[c0..c1], plan.q)?;
        let k = qmatmul(z, &w.wk.slice_cols(c0, c1)?, &w.bk[c0..c1], plan.k)?;
        let v = qmatmul(z, &w.wv.slice_cols(c0, c1)?, &w.bv[c0..c1], plan.v)?;
        let scores = qmatmul(&q, &k.transpose()?, &[], plan.scores)?;
        let s = softmax_rows(&scores, inv_sqrt, plan.probs)?;
        heads.push(qmatmul(&s, &v, &[], plan.sa)?);
    }
    let sa = QTensor::concat_cols(&heads)?;
    qmatmul(&sa, &w.w_msa, &w.b_msa, plan.msa)
}

/// FC1, GELU and FC2 with the hidden matrix fully materialized.
pub fn golden_mlp(z: &QTensor, w: &LayerWeights, plan: &ScalePlan) -> Result<QTensor> {
    w.check()?;
    let hidden = qmatmul(z, &w.w_fc1, &w.b_fc1, plan.fc1)?;
    let act = gelu(&hidden, plan.gelu)?;
    qmatmul(&act, &w.w_fc2, &w.b_fc2, plan.fc2)
}

/// Pre-norm encoder layer: `x + MSA(LN(x))`, then `r + MLP(LN(r))`.
pub fn golden_layer(x: &QTensor, w: &LayerWeights, plan: &ScalePlan) -> Result<QTensor> {
    let h = layernorm_rows(x, &w.ln1.gamma, &w.ln1.beta, plan.ln1)?;
    let msa = golden_msa(&h, w, plan)?;
    let r1 = residual_add(x, &msa, plan.res1)?;
    let h2 = layernorm_rows(&r1, &w.ln2.gamma, &w.ln2.beta, plan.ln2)?;
    let mlp = golden_mlp(&h2, w, plan)?;
    residual_add(&r1, &mlp, plan.res2)
}

pub fn golden_model(weights: &ModelWeights, input: &QTensor) -> Result<QTensor> {
    if weights.layers.len() != weights.plans.len() {
        return Err(Error::Shape("one scale plan per layer required".into()));
    }
    let mut x = input.clone();
    for (w, p) in weights.layers.iter().zip(&weights.plans) {
        x = golden_layer(&x, w, p)?;
    }
    Ok(x)
}

/// Seeded toy model, quantized, with its quantized input and the float model
/// it came from.
pub fn toy_model(
    dims: EncoderDims,
    seed: u64,
) -> Result<(ModelWeights, QTensor, FloatModel, Vec<f64>)> {
    let fm = FloatModel::random(dims, seed)?;
    let input = random_input(&dims, seed);
    let (w, x) = quantize_model(&fm, &input)?;
    Ok((w, x, fm, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quantize;

    fn dims(n: usize, d: usize, k: usize, m: usize, l: usize) -> EncoderDims {
        EncoderDims {
            tokens: n,
            dim: d,
            heads: k,
            mlp_hidden: m,
            depth: l,
        }
    }

    fn zero_layer(d: usize, m: usize, k: usize) -> LayerWeights {
        let z = |r, c| QTensor::zeros(vec![r, c], 0.01).unwrap();
        LayerWeights {
            heads: k,
            wq: z(d, d),
            wk: z(d, d),
            wv: z(d, d),
            w_msa: z(d, d),
            w_fc1: z(d, m),
            w_fc2: z(m, d),
            bq: vec![0; d],
            bk: vec![0; d],
            bv: vec![0; d],
            b_msa: vec![0; d],
            b_fc1: vec![0; m],
            b_fc2: vec![0; d],
            ln1: LayerNormParams {
                gamma: vec![0.0; d],
                beta: vec![0.0; d],
            },
            ln2: LayerNormParams {
                gamma: vec![0.0; d],
                beta: vec![0.0; d],
            },
        }
    }

    #[test]
    fn hand_computed_single_head() {
        // N=1, D=1, k=1: softmax of a single logit is 1, so SA = V.
        let z = QTensor::new(vec![1, 1], vec![10], 0.1).unwrap();
        let mut w = zero_layer(1, 1, 1);
        w.wq = QTensor::new(vec![1, 1], vec![50], 0.02).unwrap();
        w.wk = QTensor::new(vec![1, 1], vec![-30], 0.02).unwrap();
        w.wv = QTensor::new(vec![1, 1], vec![40], 0.02).unwrap();
        w.w_msa = QTensor::new(vec![1, 1], vec![100], 0.01).unwrap();
        let mut plan = ScalePlan::uniform(0.01);
        plan.probs = 1.0 / 127.0;
        // V = 10·40 · (0.1·0.02/0.01) = 80 ; real 0.8
        // S = 127 (real 1.0) ; SA = 127·80 · ((1/127)·0.01/0.01) = 80
        // out = 80·100 · (0.01·0.01/0.01) = 80
        let out = golden_msa(&z, &w, &plan).unwrap();
        assert_eq!(out.data(), &[80]);
    }

    #[test]
    fn zero_input_gives_zero_attention() {
        let d = dims(4, 8, 2, 16, 1);
        let (mut w, _, _, _) = toy_model(d, 1).unwrap();
        let layer = &mut w.layers[0];
        for b in [
            &mut layer.bq,
            &mut layer.bk,
            &mut layer.bv,
            &mut layer.b_msa,
        ] {
            b.iter_mut().for_each(|v| *v = 0);
        }
        let z = QTensor::zeros(vec![4, 8], 0.1).unwrap();
        assert!(golden_msa(&z, &w.layers[0], &w.plans[0])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn residual_skip_path_is_exact() {
        let x = quantize(&[0.3, -0.7, 1.1, 0.05, -1.27, 0.9], vec![2, 3], 0.01).unwrap();
        let w = zero_layer(3, 5, 1);
        let plan = ScalePlan::uniform(0.01);
        assert_eq!(golden_layer(&x, &w, &plan).unwrap(), x);
    }

    #[test]
    fn mlp_zero_output_weights_leave_bias() {
        let d = dims(3, 4, 1, 6, 1);
        let (mut w, x, _, _) = toy_model(d, 5).unwrap();
        w.layers[0].w_fc2 = QTensor::zeros(vec![6, 4], w.layers[0].w_fc2.scale()).unwrap();
        let out = golden_mlp(&x, &w.layers[0], &w.plans[0]).unwrap();
        let p = &w.plans[0];
        let mult = p.gelu * w.layers[0].w_fc2.scale() / p.fc2;
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(
                    out.at(r, c),
                    crate::quant::requantize(0, w.layers[0].b_fc2[c], mult)
                );
            }
        }
    }

    #[test]
    fn head_slices_concatenate_to_full_projection() {
        let d = dims(5, 12, 3, 8, 1);
        let (w, x, _, _) = toy_model(d, 11).unwrap();
        let l = &w.layers[0];
        let full = qmatmul(&x, &l.wq, &l.bq, 0.05).unwrap();
        let parts: Vec<QTensor> = (0..3)
            .map(|h| {
                qmatmul(
                    &x,
                    &l.wq.slice_cols(4 * h, 4 * h + 4).unwrap(),
                    &l.bq[4 * h..4 * h + 4],
                    0.05,
                )
                .unwrap()
            })
            .collect();
        assert_eq!(QTensor::concat_cols(&parts).unwrap(), full);
    }

    #[test]
    fn stacking_changes_output() {
        let (w, x, _, _) = toy_model(dims(8, 16, 2, 32, 2), 7).unwrap();
        let one = golden_layer(&x, &w.layers[0], &w.plans[0]).unwrap();
        let two = golden_model(&w, &x).unwrap();
        assert_ne!(one, two);
    }

    #[test]
    fn float_and_int8_agree_on_toy() {
        let (w, x, fm, input) = toy_model(dims(16, 32, 2, 64, 2), 7).unwrap();
        let q = golden_model(&w, &x).unwrap().dequantize();
        let f = float_forward(&fm, &input).unwrap();
        assert!(cosine_similarity(&q, &f) > 0.99);
    }
}
