//! Int8 execution in schedule order: Q/K/V produced column by column, attention
//! row by row from a two-head buffer, the projection column-wise with an
//! in-place residual, and the MLP through hidden-column broadcast without ever
//! materializing the hidden matrix.

use serde::{Deserialize, Serialize};

use super::buffers::plan_buffers;
use super::cost::{stage_costs, StageCosts};
use super::schedule::{simulate, simulate_part, Datapath, LnSite, Part, Schedule};
use super::spec::AcceleratorSpec;
use super::trace::ScheduleTrace;
use crate::error::{Error, Result};
use crate::golden::{EncoderDims, LayerWeights, ModelWeights, ScalePlan};
use crate::modelzoo::StageGeom;
use crate::quant::{
    check_inner, dot_i8, gelu_value, layernorm_row, requant_multiplier, requantize, residual_value,
    softmax_row, QTensor,
};

/// Test hook: perturb one MLP output accumulator so the result must diverge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub layer: usize,
    pub token: usize,
    pub col: usize,
}

/// Geometry of a single plain stage with the given encoder dims.
pub fn functional_geometry(dims: &EncoderDims) -> StageGeom {
    StageGeom {
        index: 0,
        depth: dims.depth as u32,
        grid_h: dims.tokens as u32,
        grid_w: 1,
        tokens: dims.tokens as u64,
        dim: dims.dim as u64,
        heads: dims.heads as u64,
        head_dim: dims.head_dim() as u64,
        mlp_hidden: dims.mlp_hidden as u64,
        window: None,
        merge: None,
    }
}

fn transpose(data: &[i8], rows: usize, cols: usize) -> Vec<i8> {
    let mut out = vec![0i8; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Score row, softmax and S·V for one query row. `k` is `n × dh`, `vt` is `dh × n`.
fn attention_row_kernel(q_row: &[i8], k: &[i8], vt: &[i8], n: usize, plan: &ScalePlan) -> Vec<i8> {
    let dh = q_row.len();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let ms = requant_multiplier(plan.q, plan.k, plan.scores);
    let scores: Vec<i8> = (0..n)
        .map(|j| requantize(dot_i8(q_row, &k[j * dh..(j + 1) * dh]), 0, ms))
        .collect();
    let p = softmax_row(&scores, plan.scores, inv_sqrt, plan.probs);
    let mp = requant_multiplier(plan.probs, plan.v, plan.sa);
    (0..dh)
        .map(|c| requantize(dot_i8(&p, &vt[c * n..(c + 1) * n]), 0, mp))
        .collect()
}

/// Per-layer weights rearranged so every streamed column is contiguous.
struct Columns {
    wq: Vec<i8>,
    wk: Vec<i8>,
    wv: Vec<i8>,
    w_msa: Vec<i8>,
    w_fc1: Vec<i8>,
}

impl Columns {
    fn of(w: &LayerWeights) -> Self {
        let (d, m) = (w.dim(), w.mlp_hidden());
        Self {
            wq: transpose(w.wq.data(), d, d),
            wk: transpose(w.wk.data(), d, d),
            wv: transpose(w.wv.data(), d, d),
            w_msa: transpose(w.w_msa.data(), d, d),
            w_fc1: transpose(w.w_fc1.data(), d, m),
        }
    }
}

/// Where projection and MLP results go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sink {
    /// Residual-add into the resident activations.
    Residual,
    /// Write the raw block output (standalone MSA / MLP runs).
    Raw,
}

/// Bit-exact int8 datapath driven by the scheduler.
pub struct Int8Datapath<'w> {
    layers: &'w [LayerWeights],
    plans: &'w [ScalePlan],
    n: usize,
    d: usize,
    dh: usize,
    x: Vec<i8>,
    x_scale: f64,
    z: Vec<i8>,
    q: [Vec<i8>; 2],
    k: [Vec<i8>; 2],
    vt: [Vec<i8>; 2],
    sa: Vec<i8>,
    proj_acc: Vec<i32>,
    mlp_acc: Vec<i32>,
    out: Vec<i8>,
    cols: Option<Columns>,
    sink: Sink,
    fault: Option<Fault>,
}

impl<'w> Int8Datapath<'w> {
    fn with_layers(
        layers: &'w [LayerWeights],
        plans: &'w [ScalePlan],
        n: usize,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        if layers.len() != plans.len() {
            return Err(Error::Shape("one scale plan per layer required".into()));
        }
        let dh = d / heads.max(1);
        for w in layers {
            w.check()?;
            if w.dim() != d || w.heads != heads {
                return Err(Error::Shape(format!(
                    "layer width {} / heads {} != {d} / {heads}",
                    w.dim(),
                    w.heads
                )));
            }
            check_inner(w.mlp_hidden())?;
        }
        check_inner(d)?;
        check_inner(n)?;
        Ok(Self {
            layers,
            plans,
            n,
            d,
            dh,
            x: Vec::new(),
            x_scale: 1.0,
            z: Vec::new(),
            q: [vec![0; n * dh], vec![0; n * dh]],
            k: [vec![0; n * dh], vec![0; n * dh]],
            vt: [vec![0; n * dh], vec![0; n * dh]],
            sa: vec![0; n * d],
            proj_acc: vec![0; n * d],
            mlp_acc: Vec::new(),
            out: vec![0; n * d],
            cols: None,
            sink: Sink::Residual,
            fault: None,
        })
    }

    pub fn new(weights: &'w ModelWeights, input: &QTensor) -> Result<Self> {
        weights.dims.validate()?;
        let (n, d) = input.dims2()?;
        if n != weights.dims.tokens || d != weights.dims.dim {
            return Err(Error::Shape(format!(
                "input {n}x{d} does not match model {}x{}",
                weights.dims.tokens, weights.dims.dim
            )));
        }
        let mut dp = Self::with_layers(&weights.layers, &weights.plans, n, d, weights.dims.heads)?;
        dp.x = input.data().to_vec();
        dp.x_scale = input.scale();
        Ok(dp)
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    /// Resident activations after the last layer.
    pub fn output(&self) -> Result<QTensor> {
        QTensor::new(vec![self.n, self.d], self.x.clone(), self.x_scale)
    }

    fn prepare(&mut self, layer: usize) {
        self.cols = Some(Columns::of(&self.layers[layer]));
    }
}

impl Datapath for Int8Datapath<'_> {
    fn layer_start(&mut self, layer: usize) -> Result<()> {
        self.prepare(layer);
        Ok(())
    }

    fn layernorm(&mut self, layer: usize, site: LnSite) -> Result<()> {
        let (w, plan) = (&self.layers[layer], &self.plans[layer]);
        let (ln, out_scale) = match site {
            LnSite::PreAttention => (&w.ln1, plan.ln1),
            LnSite::PreMlp => (&w.ln2, plan.ln2),
        };
        let mut z = Vec::with_capacity(self.n * self.d);
        for t in 0..self.n {
            z.extend(layernorm_row(
                &self.x[t * self.d..(t + 1) * self.d],
                self.x_scale,
                &ln.gamma,
                &ln.beta,
                out_scale,
            ));
        }
        self.z = z;
        Ok(())
    }

    fn qkv_column(&mut self, layer: usize, head: usize, col: usize) -> Result<()> {
        let (w, plan) = (&self.layers[layer], &self.plans[layer]);
        let cols = self
            .cols
            .as_ref()
            .expect("layer_start prepares the weight columns");
        let (n, d, dh) = (self.n, self.d, self.dh);
        let j = head * dh + col;
        let slot = head % 2;
        let mq = requant_multiplier(plan.ln1, w.wq.scale(), plan.q);
        let mk = requant_multiplier(plan.ln1, w.wk.scale(), plan.k);
        let mv = requant_multiplier(plan.ln1, w.wv.scale(), plan.v);
        let (cq, ck, cv) = (
            &cols.wq[j * d..(j + 1) * d],
            &cols.wk[j * d..(j + 1) * d],
            &cols.wv[j * d..(j + 1) * d],
        );
        for t in 0..n {
            let zr = &self.z[t * d..(t + 1) * d];
            self.q[slot][t * dh + col] = requantize(dot_i8(zr, cq), w.bq[j], mq);
            self.k[slot][t * dh + col] = requantize(dot_i8(zr, ck), w.bk[j], mk);
            self.vt[slot][col * n + t] = requantize(dot_i8(zr, cv), w.bv[j], mv);
        }
        Ok(())
    }

    fn attention_row(&mut self, layer: usize, head: usize, row: usize) -> Result<()> {
        let plan = &self.plans[layer];
        let (n, d, dh) = (self.n, self.d, self.dh);
        let slot = head % 2;
        let out = attention_row_kernel(
            &self.q[slot][row * dh..(row + 1) * dh],
            &self.k[slot],
            &self.vt[slot],
            n,
            plan,
        );
        self.sa[row * d + head * dh..row * d + (head + 1) * dh].copy_from_slice(&out);
        Ok(())
    }

    fn projection_partial(&mut self, _layer: usize, col: usize, heads: usize) -> Result<()> {
        let (n, d) = (self.n, self.d);
        let span = heads * self.dh;
        let wc = &self
            .cols
            .as_ref()
            .expect("layer_start prepares the weight columns")
            .w_msa[col * d..col * d + span];
        for t in 0..n {
            self.proj_acc[t * d + col] = dot_i8(&self.sa[t * d..t * d + span], wc);
        }
        Ok(())
    }

    fn projection_column(&mut self, layer: usize, col: usize, from_head: usize) -> Result<()> {
        let (w, plan) = (&self.layers[layer], &self.plans[layer]);
        let (n, d) = (self.n, self.d);
        let lo = from_head * self.dh;
        let wc = &self
            .cols
            .as_ref()
            .expect("layer_start prepares the weight columns")
            .w_msa[col * d..(col + 1) * d];
        let mm = requant_multiplier(plan.sa, w.w_msa.scale(), plan.msa);
        for t in 0..n {
            let partial = if from_head > 0 {
                self.proj_acc[t * d + col]
            } else {
                0
            };
            let acc = partial + dot_i8(&self.sa[t * d + lo..(t + 1) * d], &wc[lo..]);
            let y = requantize(acc, w.b_msa[col], mm);
            match self.sink {
                Sink::Residual => {
                    let i = t * d + col;
                    self.x[i] = residual_value(self.x[i], self.x_scale, y, plan.msa, plan.res1);
                }
                Sink::Raw => self.out[t * d + col] = y,
            }
        }
        if col + 1 == d && self.sink == Sink::Residual {
            self.x_scale = plan.res1;
        }
        Ok(())
    }

    fn mlp_hidden_column(&mut self, layer: usize, tokens: (usize, usize), j: usize) -> Result<()> {
        let (w, plan) = (&self.layers[layer], &self.plans[layer]);
        let d = self.d;
        let len = tokens.1 - tokens.0;
        if self.mlp_acc.len() != len * d {
            self.mlp_acc = vec![0; len * d];
        }
        let wc = &self
            .cols
            .as_ref()
            .expect("layer_start prepares the weight columns")
            .w_fc1[j * d..(j + 1) * d];
        let fc2_row = &w.w_fc2.data()[j * d..(j + 1) * d];
        let m1 = requant_multiplier(plan.ln2, w.w_fc1.scale(), plan.fc1);
        for (i, t) in (tokens.0..tokens.1).enumerate() {
            let h = requantize(dot_i8(&self.z[t * d..(t + 1) * d], wc), w.b_fc1[j], m1);
            let g = gelu_value(h, plan.fc1, plan.gelu) as i32;
            if g == 0 {
                continue;
            }
            for (acc, &wv) in self.mlp_acc[i * d..(i + 1) * d].iter_mut().zip(fc2_row) {
                *acc += g * wv as i32;
            }
        }
        Ok(())
    }

    fn mlp_pass_done(&mut self, layer: usize, tokens: (usize, usize)) -> Result<()> {
        let (w, plan) = (&self.layers[layer], &self.plans[layer]);
        let d = self.d;
        let len = tokens.1 - tokens.0;
        if self.mlp_acc.len() != len * d {
            self.mlp_acc = vec![0; len * d];
        }
        let m2 = requant_multiplier(plan.gelu, w.w_fc2.scale(), plan.fc2);
        if let Some(f) = self.fault {
            if f.layer == layer && (tokens.0..tokens.1).contains(&f.token) && f.col < d {
                let i = (f.token - tokens.0) * d + f.col;
                let before = requantize(self.mlp_acc[i], w.b_fc2[f.col], m2);
                // Shift the requantized value by 64 steps away from its nearer rail.
                let step = ((64.0 / m2).ceil() as i64).clamp(1, i32::MAX as i64 / 4) as i32;
                self.mlp_acc[i] = if before >= 0 {
                    self.mlp_acc[i].saturating_sub(step)
                } else {
                    self.mlp_acc[i].saturating_add(step)
                };
            }
        }
        for (i, t) in (tokens.0..tokens.1).enumerate() {
            for c in 0..d {
                let y = requantize(self.mlp_acc[i * d + c], w.b_fc2[c], m2);
                match self.sink {
                    Sink::Residual => {
                        let xi = t * d + c;
                        self.x[xi] =
                            residual_value(self.x[xi], self.x_scale, y, plan.fc2, plan.res2);
                    }
                    Sink::Raw => self.out[t * d + c] = y,
                }
            }
        }
        self.mlp_acc.iter_mut().for_each(|a| *a = 0);
        if tokens.1 == self.n && self.sink == Sink::Residual {
            self.x_scale = plan.res2;
        }
        Ok(())
    }
}

/// Run the whole encoder stack in schedule order. Output and trace.
pub fn run_model_vita(
    weights: &ModelWeights,
    input: &QTensor,
    spec: &AcceleratorSpec,
) -> Result<(QTensor, Schedule)> {
    run_model_vita_with_fault(weights, input, spec, None)
}

pub fn run_model_vita_with_fault(
    weights: &ModelWeights,
    input: &QTensor,
    spec: &AcceleratorSpec,
    fault: Option<Fault>,
) -> Result<(QTensor, Schedule)> {
    let mut dp = Int8Datapath::new(weights, input)?.with_fault(fault);
    let geom = functional_geometry(&weights.dims);
    let schedule = simulate(std::slice::from_ref(&geom), spec, &mut dp)?;
    Ok((dp.output()?, schedule))
}

fn layer_costs(n: usize, w: &LayerWeights, spec: &AcceleratorSpec) -> Result<StageCosts> {
    let dims = EncoderDims {
        tokens: n,
        dim: w.dim(),
        heads: w.heads,
        mlp_hidden: w.mlp_hidden(),
        depth: 1,
    };
    dims.validate()?;
    let geom = functional_geometry(&dims);
    let plan = plan_buffers(std::slice::from_ref(&geom), spec);
    stage_costs(&geom, spec, plan.stages[0].mlp_passes)
}

fn single_layer<'w>(
    z: &QTensor,
    w: &'w LayerWeights,
    plan: &'w ScalePlan,
    z_scale: f64,
) -> Result<Int8Datapath<'w>> {
    let (n, d) = z.dims2()?;
    if (z.scale() - z_scale).abs() > 0.0 {
        return Err(Error::Shape(format!(
            "input scale {} does not match plan scale {z_scale}",
            z.scale()
        )));
    }
    let mut dp = Int8Datapath::with_layers(
        std::slice::from_ref(w),
        std::slice::from_ref(plan),
        n,
        d,
        w.heads,
    )?;
    dp.z = z.data().to_vec();
    dp.sink = Sink::Raw;
    dp.prepare(0);
    Ok(dp)
}

/// Q, K and V of head `head`, streamed column by column on blocks 1-3.
/// `z` must be quantized at `plan.ln1`.
pub fn stream_qkv_head(
    z: &QTensor,
    w: &LayerWeights,
    plan: &ScalePlan,
    head: usize,
    spec: &AcceleratorSpec,
) -> Result<([QTensor; 3], ScheduleTrace)> {
    if head >= w.heads {
        return Err(Error::Shape(format!(
            "head {head} out of range for {} heads",
            w.heads
        )));
    }
    let mut dp = single_layer(z, w, plan, plan.ln1)?;
    let c = layer_costs(dp.n, w, spec)?;
    let trace = simulate_part(&c, spec, Part::QkvHead(head), &mut dp)?;
    let (n, dh) = (dp.n, dp.dh);
    let s = head % 2;
    let v = transpose(&dp.vt[s], dh, n);
    Ok((
        [
            QTensor::new(vec![n, dh], dp.q[s].clone(), plan.q)?,
            QTensor::new(vec![n, dh], dp.k[s].clone(), plan.k)?,
            QTensor::new(vec![n, dh], v, plan.v)?,
        ],
        trace,
    ))
}

struct AttentionOnly<'a> {
    q: &'a [i8],
    k: &'a [i8],
    vt: Vec<i8>,
    n: usize,
    dh: usize,
    plan: &'a ScalePlan,
    out: Vec<i8>,
}

impl Datapath for AttentionOnly<'_> {
    fn attention_row(&mut self, _layer: usize, _head: usize, row: usize) -> Result<()> {
        let dh = self.dh;
        let r = attention_row_kernel(
            &self.q[row * dh..(row + 1) * dh],
            self.k,
            &self.vt,
            self.n,
            self.plan,
        );
        self.out[row * dh..(row + 1) * dh].copy_from_slice(&r);
        Ok(())
    }
}

/// Row-granular attention of one head: `softmax(Q Kᵀ / sqrt(Dh)) V`.
pub fn attention_head_rows(
    q: &QTensor,
    k: &QTensor,
    v: &QTensor,
    plan: &ScalePlan,
    spec: &AcceleratorSpec,
) -> Result<(QTensor, ScheduleTrace)> {
    let (n, dh) = q.dims2()?;
    if k.dims2()? != (n, dh) || v.dims2()? != (n, dh) {
        return Err(Error::Shape(
            "Q, K and V must share one N x Dh shape".into(),
        ));
    }
    check_inner(n)?;
    let mut dp = AttentionOnly {
        q: q.data(),
        k: k.data(),
        vt: transpose(v.data(), n, dh),
        n,
        dh,
        plan,
        out: vec![0; n * dh],
    };
    let dims = EncoderDims {
        tokens: n,
        dim: dh,
        heads: 1,
        mlp_hidden: 1,
        depth: 1,
    };
    let geom = functional_geometry(&dims);
    let c = stage_costs(&geom, spec, 1)?;
    let trace = simulate_part(&c, spec, Part::AttentionHead(0), &mut dp)?;
    Ok((QTensor::new(vec![n, dh], dp.out, plan.sa)?, trace))
}

/// Every head through the two-engine pipeline, then the output projection.
/// `z` must be quantized at `plan.ln1`; the result is at `plan.msa`.
pub fn run_msa_pipelined(
    z: &QTensor,
    w: &LayerWeights,
    plan: &ScalePlan,
    spec: &AcceleratorSpec,
) -> Result<(QTensor, ScheduleTrace)> {
    let mut dp = single_layer(z, w, plan, plan.ln1)?;
    let c = layer_costs(dp.n, w, spec)?;
    let trace = simulate_part(&c, spec, Part::Msa, &mut dp)?;
    Ok((QTensor::new(vec![dp.n, dp.d], dp.out, plan.msa)?, trace))
}

/// Fused two-half MLP. `z` must be quantized at `plan.ln2`; the result is at `plan.fc2`.
pub fn run_mlp_fused(
    z: &QTensor,
    w: &LayerWeights,
    plan: &ScalePlan,
    spec: &AcceleratorSpec,
) -> Result<(QTensor, ScheduleTrace)> {
    let mut dp = single_layer(z, w, plan, plan.ln2)?;
    let c = layer_costs(dp.n, w, spec)?;
    let trace = simulate_part(&c, spec, Part::Mlp, &mut dp)?;
    Ok((QTensor::new(vec![dp.n, dp.d], dp.out, plan.fc2)?, trace))
}

/// First differing element of two equally shaped tensors: `(row, col, left, right)`.
pub fn first_divergence(a: &QTensor, b: &QTensor) -> Option<(usize, usize, i8, i8)> {
    let width = a.shape().last().copied().unwrap_or(1).max(1);
    if a.shape() != b.shape() {
        return Some((0, 0, 0, 0));
    }
    a.data()
        .iter()
        .zip(b.data())
        .position(|(x, y)| x != y)
        .map(|i| (i / width, i % width, a.data()[i], b.data()[i]))
}
