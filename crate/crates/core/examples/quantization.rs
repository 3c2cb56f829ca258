//! Symmetric int8 quantization: calibrate, quantize, multiply with an int32
//! accumulator, requantize, and compare a whole toy encoder against its float reference.

use vita_sim::golden::{cosine_similarity, float_forward, golden_model, toy_model, EncoderDims};
use vita_sim::quant::{calibrate_scale, qmatmul, quantize};

fn main() -> vita_sim::Result<()> {
    let a: Vec<f64> = (0..12).map(|i| (i as f64 - 5.5) / 4.0).collect();
    let b: Vec<f64> = (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 8.0).collect();
    let (sa, sb) = (calibrate_scale(&a), calibrate_scale(&b));
    let qa = quantize(&a, vec![3, 4], sa)?;
    let qb = quantize(&b, vec![4, 3], sb)?;
    let exact: Vec<f64> = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| (0..4).map(|k| a[r * 4 + k] * b[k * 3 + c]).sum())
        .collect();
    let out_scale = calibrate_scale(&exact);
    let qc = qmatmul(&qa, &qb, &[], out_scale)?;
    println!("scales: a {sa:.5}, b {sb:.5}, out {out_scale:.5}");
    for (q, e) in qc.dequantize().iter().zip(&exact) {
        println!("  int8 {q:>8.4}   float {e:>8.4}");
    }

    let dims = EncoderDims {
        tokens: 16,
        dim: 48,
        heads: 3,
        mlp_hidden: 96,
        depth: 2,
    };
    println!("\ntoy encoder {dims:?}");
    for seed in 0..5 {
        let (weights, input, fm, x) = toy_model(dims, seed)?;
        let q = golden_model(&weights, &input)?.dequantize();
        let f = float_forward(&fm, &x)?;
        println!(
            "  seed {seed}: cosine(float, int8) = {:.5}",
            cosine_similarity(&f, &q)
        );
    }
    Ok(())
}
