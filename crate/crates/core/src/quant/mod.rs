//! Symmetric per-tensor int8 tensors and the kernels shared by the golden
//! and dataflow engines.

mod io;
mod kernels;

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file};
pub use kernels::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest scale [`calibrate_scale`] returns.
pub const SCALE_EPSILON: f64 = 1e-8;

/// int8 tensor, row-major, `real = value * scale`, zero point 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    shape: Vec<usize>,
    data: Vec<i8>,
    scale: f64,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {len} values but data has {}",
                data.len()
            )));
        }
        if data.contains(&i8::MIN) {
            return Err(Error::Numeric(
                "-128 is outside the symmetric int8 range".into(),
            ));
        }
        Ok(Self { shape, data, scale })
    }

    pub fn zeros(shape: Vec<usize>, scale: f64) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0; len], scale)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn into_data(self) -> Vec<i8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, r: usize) -> &[i8] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn at(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.shape[1] + c]
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 * self.scale).collect()
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0i8; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
            scale: self.scale,
        })
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start > end || end > c {
            return Err(Error::Shape(format!(
                "column range {start}..{end} out of 0..{c}"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Self {
            shape: vec![r, w],
            data: out,
            scale: self.scale,
        })
    }

    /// Rows `[start, end)` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start > end || end > r {
            return Err(Error::Shape(format!(
                "row range {start}..{end} out of 0..{r}"
            )));
        }
        Ok(Self {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
            scale: self.scale,
        })
    }

    /// Side-by-side concatenation of equally tall, equally scaled matrices.
    pub fn concat_cols(parts: &[QTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (r, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pr != r || p.scale != first.scale {
                return Err(Error::Shape("concat parts differ in rows or scale".into()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(p.row(i));
            }
        }
        Ok(Self {
            shape: vec![r, total],
            data: out,
            scale: first.scale,
        })
    }
}

pub(crate) fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "scale must be positive and finite, got {scale}"
        )))
    }
}
