use super::{check_scale, QTensor, SCALE_EPSILON};
use crate::error::{Error, Result};

/// Largest inner dimension for which `m * 127^2` fits an i32 accumulator.
pub const MAX_INNER: usize = 1 << 15;

const LN_EPSILON: f64 = 1e-5;

/// `clamp(round_half_even(v / scale), -127, 127)`.
#[inline]
pub fn quantize_value(v: f64, scale: f64) -> i8 {
    (v / scale).round_ties_even().clamp(-127.0, 127.0) as i8
}

pub fn quantize(values: &[f64], shape: Vec<usize>, scale: f64) -> Result<QTensor> {
    check_scale(scale)?;
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "cannot quantize non-finite value {bad}"
        )));
    }
    QTensor::new(
        shape,
        values.iter().map(|&v| quantize_value(v, scale)).collect(),
        scale,
    )
}

/// Max-abs calibration: `max|v| / 127`, floored at [`SCALE_EPSILON`].
pub fn calibrate_scale(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max.is_finite() && max > 0.0 {
        (max / 127.0).max(SCALE_EPSILON)
    } else {
        SCALE_EPSILON
    }
}

/// Factor mapping an `a * b` accumulator onto `out_scale`.
#[inline]
pub fn requant_multiplier(a_scale: f64, b_scale: f64, out_scale: f64) -> f64 {
    a_scale * b_scale / out_scale
}

/// Rescale an accumulator (plus its pre-scaled bias) into int8.
#[inline]
pub fn requantize(acc: i32, bias: i32, multiplier: f64) -> i8 {
    let total = acc as i64 + bias as i64;
    (total as f64 * multiplier)
        .round_ties_even()
        .clamp(-127.0, 127.0) as i8
}

#[inline]
pub fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

pub fn check_inner(m: usize) -> Result<()> {
    if m > MAX_INNER {
        Err(Error::OverflowRisk {
            inner: m,
            limit: MAX_INNER,
        })
    } else {
        Ok(())
    }
}

/// `a (n×m) · b (m×p) + bias` with exact i32 accumulation, requantized to `out_scale`.
/// An empty `bias` means zero bias.
pub fn qmatmul(a: &QTensor, b: &QTensor, bias: &[i32], out_scale: f64) -> Result<QTensor> {
    check_scale(out_scale)?;
    let (n, m) = a.dims2()?;
    let (mb, p) = b.dims2()?;
    if m != mb {
        return Err(Error::Shape(format!(
            "qmatmul inner mismatch: {n}x{m} · {mb}x{p}"
        )));
    }
    if !bias.is_empty() && bias.len() != p {
        return Err(Error::Shape(format!("bias length {} != {p}", bias.len())));
    }
    check_inner(m)?;
    let bt = b.transpose()?;
    let mult = requant_multiplier(a.scale(), b.scale(), out_scale);
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        let row = a.row(i);
        for j in 0..p {
            let bj = bias.get(j).copied().unwrap_or(0);
            out.push(requantize(dot_i8(row, bt.row(j)), bj, mult));
        }
    }
    QTensor::new(vec![n, p], out, out_scale)
}

/// Softmax of one row of logits `x * in_scale * inv_sqrt_dh`.
pub fn softmax_row(x: &[i8], in_scale: f64, inv_sqrt_dh: f64, out_scale: f64) -> Vec<i8> {
    let logits: Vec<f64> = x
        .iter()
        .map(|&v| v as f64 * in_scale * inv_sqrt_dh)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter()
        .map(|&e| quantize_value(e / sum, out_scale))
        .collect()
}

pub fn softmax_rows(x: &QTensor, inv_sqrt_dh: f64, out_scale: f64) -> Result<QTensor> {
    check_scale(out_scale)?;
    let (n, m) = x.dims2()?;
    if m == 0 {
        return Err(Error::Shape("softmax over an empty row".into()));
    }
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        out.extend(softmax_row(x.row(i), x.scale(), inv_sqrt_dh, out_scale));
    }
    QTensor::new(vec![n, m], out, out_scale)
}

/// LayerNorm of one token row in real arithmetic, then requantized.
pub fn layernorm_row(
    x: &[i8],
    in_scale: f64,
    gamma: &[f64],
    beta: &[f64],
    out_scale: f64,
) -> Vec<i8> {
    let w = x.len() as f64;
    let vals: Vec<f64> = x.iter().map(|&v| v as f64 * in_scale).collect();
    let mean = vals.iter().sum::<f64>() / w;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
    let inv = 1.0 / (var + LN_EPSILON).sqrt();
    vals.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| quantize_value((v - mean) * inv * g + b, out_scale))
        .collect()
}

pub fn layernorm_rows(x: &QTensor, gamma: &[f64], beta: &[f64], out_scale: f64) -> Result<QTensor> {
    check_scale(out_scale)?;
    let (n, d) = x.dims2()?;
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layernorm params ({}, {}) do not match width {d}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        out.extend(layernorm_row(x.row(i), x.scale(), gamma, beta, out_scale));
    }
    QTensor::new(vec![n, d], out, out_scale)
}

/// tanh-approximation GELU.
pub fn gelu_real(v: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

#[inline]
pub fn gelu_value(v: i8, in_scale: f64, out_scale: f64) -> i8 {
    quantize_value(gelu_real(v as f64 * in_scale), out_scale)
}

pub fn gelu(x: &QTensor, out_scale: f64) -> Result<QTensor> {
    check_scale(out_scale)?;
    let data = x
        .data()
        .iter()
        .map(|&v| gelu_value(v, x.scale(), out_scale))
        .collect();
    QTensor::new(x.shape().to_vec(), data, out_scale)
}

/// Residual sum of two int8 values rescaled to a common real scale, rounded once.
#[inline]
pub fn residual_value(a: i8, a_scale: f64, b: i8, b_scale: f64, out_scale: f64) -> i8 {
    quantize_value(a as f64 * a_scale + b as f64 * b_scale, out_scale)
}

pub fn residual_add(a: &QTensor, b: &QTensor, out_scale: f64) -> Result<QTensor> {
    check_scale(out_scale)?;
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "residual shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| residual_value(x, a.scale(), y, b.scale(), out_scale))
        .collect();
    QTensor::new(a.shape().to_vec(), data, out_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<i8>, s: f64) -> QTensor {
        QTensor::new(shape, data, s).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[3.0], vec![1], 1.0).unwrap().data(), &[3]);
        assert_eq!(quantize(&[1000.0], vec![1], 1.0).unwrap().data(), &[127]);
        assert_eq!(quantize(&[-1000.0], vec![1], 1.0).unwrap().data(), &[-127]);
        assert_eq!(
            quantize(&[2.5, 3.5, -2.5], vec![3], 1.0).unwrap().data(),
            &[2, 4, -2]
        );
        assert!(matches!(
            quantize(&[f64::NAN], vec![1], 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn calibration() {
        assert_eq!(calibrate_scale(&[-2.0, 1.0]), 2.0 / 127.0);
        assert_eq!(calibrate_scale(&[0.0, 0.0]), SCALE_EPSILON);
        let q = quantize(&[127.0], vec![1], calibrate_scale(&[127.0])).unwrap();
        assert_eq!(q.dequantize(), vec![127.0]);
    }

    #[test]
    fn qmatmul_hand_example() {
        let a = t(vec![1, 1], vec![2], 0.5);
        let b = t(vec![1, 1], vec![3], 0.25);
        let c = qmatmul(&a, &b, &[], 0.125).unwrap();
        assert_eq!(c.data(), &[6]);
        assert_eq!(c.dequantize(), vec![0.75]);
    }

    #[test]
    fn qmatmul_identity() {
        let x = t(vec![2, 3], vec![1, -5, 7, 100, 0, -127], 0.1);
        let id = t(vec![3, 3], vec![1, 0, 0, 0, 1, 0, 0, 0, 1], 1.0);
        let y = qmatmul(&x, &id, &[0, 0, 0], 0.1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn qmatmul_errors() {
        let a = t(vec![1, 2], vec![1, 1], 1.0);
        let b = t(vec![3, 1], vec![1, 1, 1], 1.0);
        assert!(matches!(qmatmul(&a, &b, &[], 1.0), Err(Error::Shape(_))));
        let big = QTensor::zeros(vec![1, 40_000], 1.0).unwrap();
        let bigb = QTensor::zeros(vec![40_000, 1], 1.0).unwrap();
        assert!(matches!(
            qmatmul(&big, &bigb, &[], 1.0),
            Err(Error::OverflowRisk { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let x = t(vec![1, 4], vec![5, 5, 5, 5], 1.0);
        let s = softmax_rows(&x, 1.0, 1.0 / 127.0).unwrap();
        for v in s.dequantize() {
            assert!((v - 0.25).abs() <= 0.5 / 127.0);
        }
        let x = t(vec![1, 3], vec![127, 0, 0], 1.0);
        let s = softmax_rows(&x, 1.0, 1.0 / 127.0).unwrap();
        assert_eq!(s.data(), &[127, 0, 0]);
        let one = softmax_rows(&t(vec![1, 1], vec![-40], 1.0), 1.0, 1.0 / 127.0).unwrap();
        assert_eq!(one.data(), &[127]);
    }

    #[test]
    fn layernorm_examples() {
        let x = t(vec![1, 4], vec![9, 9, 9, 9], 0.5);
        let g = vec![1.0; 4];
        let z = vec![0.0; 4];
        assert_eq!(
            layernorm_rows(&x, &g, &z, 0.05).unwrap().data(),
            &[0, 0, 0, 0]
        );
        let x = t(vec![1, 4], vec![1, -7, 30, 2], 0.5);
        let beta = vec![0.5, -0.25, 1.0, 0.0];
        let y = layernorm_rows(&x, &[0.0; 4], &beta, 0.01).unwrap();
        assert_eq!(y, quantize(&beta, vec![1, 4], 0.01).unwrap());
        assert!(matches!(
            layernorm_rows(&x, &g[..3], &z, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gelu_examples() {
        let s = 0.05;
        assert_eq!(gelu_value(0, s, s), 0);
        assert_eq!(gelu_value(100, s, s), 100);
        assert_eq!(gelu_value(-10, 1.0, s), 0);
    }

    #[test]
    fn residual_single_rounding() {
        let a = t(vec![2], vec![3, -1], 0.5);
        let b = t(vec![2], vec![1, -1], 0.25);
        // 1.75 / 0.5 = 3.5 -> 4 ; -0.75 / 0.5 = -1.5 -> -2
        assert_eq!(residual_add(&a, &b, 0.5).unwrap().data(), &[4, -2]);
    }
}
