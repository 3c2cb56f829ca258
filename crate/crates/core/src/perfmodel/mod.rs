//! Closed-form cycle, utilization, throughput, energy and bandwidth model.
//! Needs no functional data; cross-checked against the event simulator with
//! [`validate_against_trace`].

pub mod reference;

use serde::{Deserialize, Serialize};

use crate::dataflow::{
    overlap_heads, plan_buffers, stage_costs, AcceleratorSpec, BufferPlan, Engine, Phase,
    PhaseSpan, Schedule, StageCosts,
};
use crate::error::{Error, Result};
use crate::modelzoo::{build_workload, ImageDims, LayerOp, ModelSpec, OpKind, Workload};

/// Cycle budget split by what the hardware is doing. The fields sum to the total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCycles {
    /// Engine-1 busy time computing Q/K/V columns.
    pub qkv: u64,
    /// Attention time not hidden behind engine 1.
    pub attn: u64,
    /// Output projection on the pool (and on engine 1 when overlapped).
    pub msa_proj: u64,
    pub mlp: u64,
    pub patch_merge: u64,
    /// I/O, LayerNorm, drains and exposed fetch latency before a phase's first column.
    pub overhead: u64,
    /// Compute waiting on weight fetches.
    pub stall: u64,
}

impl PhaseCycles {
    pub fn total(&self) -> u64 {
        self.qkv
            + self.attn
            + self.msa_proj
            + self.mlp
            + self.patch_merge
            + self.overhead
            + self.stall
    }

    pub fn named(&self) -> [(&'static str, u64); 7] {
        [
            ("qkv", self.qkv),
            ("attn", self.attn),
            ("msa_proj", self.msa_proj),
            ("mlp", self.mlp),
            ("patch_merge", self.patch_merge),
            ("overhead", self.overhead),
            ("stall", self.stall),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Weight bytes fetched over total cycles.
    pub avg_bytes_per_cycle: f64,
    /// Largest per-column demand: next column's bytes over the current column's compute cycles.
    pub peak_bytes_per_cycle: f64,
    /// Per streamed phase: (name, demand in bytes/cycle).
    pub per_phase: Vec<(String, f64)>,
    pub fetched_bytes: u64,
    pub stall_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub model: String,
    pub image: String,
    pub config: [u32; 4],
    pub mac_units: u64,
    pub total_cycles: u64,
    pub phases: PhaseCycles,
    pub useful_macs: u64,
    pub hue: f64,
    pub fps: f64,
    pub energy_j: f64,
    pub avg_bytes_per_cycle: f64,
    pub peak_bytes_per_cycle: f64,
    pub bandwidth: Bandwidth,
    pub bram_peak_bytes: u64,
    pub bram_budget: u64,
    pub bram_fits: bool,
    /// Worst stage, phase and largest buffer when BRAM overflows.
    pub bram_overflow: Option<String>,
    pub lut_usage: u64,
    pub lut_budget: u64,
    /// No DRAM bandwidth: every fetch stalls forever and the other figures are degenerate.
    pub starved: bool,
    pub spans: Vec<PhaseSpan>,
}

impl PerfReport {
    /// `ResourceError` if the configuration overflows LUTs or BRAM.
    pub fn check_resources(&self) -> Result<()> {
        if self.lut_usage > self.lut_budget {
            return Err(Error::Resource {
                resource: "lut".into(),
                needed: self.lut_usage,
                budget: self.lut_budget,
            });
        }
        if !self.bram_fits {
            return Err(Error::Resource {
                resource: self.bram_overflow.clone().unwrap_or_else(|| "bram".into()),
                needed: self.bram_peak_bytes,
                budget: self.bram_budget,
            });
        }
        Ok(())
    }
}

/// Standalone throughput cycles of one workload op (hidden-side bound for the MLP).
pub fn phase_cycles(op: &LayerOp, spec: &AcceleratorSpec) -> u64 {
    let d = &op.dims;
    let (k1, k2, k3, k4) = (
        spec.k1 as u64,
        spec.k2 as u64,
        spec.k3 as u64,
        spec.k4 as u64,
    );
    let u = spec.mac_units().max(1);
    let half = spec.mlp_half().max(1);
    match op.kind {
        // Each engine-1 block produces one of Q/K/V: heads·Dh columns of ceil(N/k1)·ceil(D/k2).
        OpKind::QkvProj => d.heads * d.outer * d.rows.div_ceil(k1) * d.inner.div_ceil(k2),
        OpKind::AttnScore => d.heads * d.rows * d.outer.div_ceil(k3) * d.inner.div_ceil(k4),
        OpKind::AttnApply => d.heads * d.rows * d.outer.div_ceil(k3) * d.inner.div_ceil(k4),
        OpKind::AttnSoftmax => d.heads * d.rows * spec.softmax_fill(d.inner),
        OpKind::MsaProj | OpKind::PatchMerge => d.outer * (d.rows * d.inner).div_ceil(u),
        OpKind::MlpFc1 => d.outer * (d.rows * d.inner).div_ceil(half),
        OpKind::MlpFc2 => d.inner * (d.rows * d.outer).div_ceil(half),
        OpKind::Layernorm => spec.ln_cycles(d.rows, d.inner),
        OpKind::Residual | OpKind::PatchEmbed => 0,
    }
}

/// Cycle marks and busy/stall totals of one encoder layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub start: u64,
    pub ln1_end: u64,
    pub msa_end: u64,
    pub proj_end: u64,
    pub ln2_end: u64,
    pub mlp_end: u64,
    pub qkv_busy: u64,
    /// Engine-1 projection partials finished inside the attention phase.
    pub partial_busy: u64,
    pub proj_busy: u64,
    pub msa_stall: u64,
    pub proj_stall: u64,
    pub mlp_stall: u64,
}

/// `(start, end, stall)` of `n` streamed columns: fetches requested at
/// `request`, compute allowed from `ready`, two column slots.
fn streamed(request: u64, ready: u64, n: u64, c: u64, f: u64) -> (u64, u64, u64) {
    if n == 0 {
        return (ready, ready, 0);
    }
    let first = ready.max(request + f);
    let period = c.max(f);
    (
        first,
        first + c + (n - 1) * period,
        (first - ready) + (n - 1) * (period - c),
    )
}

/// Compose one layer starting at `t` (end of the previous phase).
pub fn compose_layer(c: &StageCosts, spec: &AcceleratorSpec, t: u64) -> LayerTiming {
    let ln1_start = t + c.drain;
    let ln1_end = ln1_start + c.ln;

    // Engine 1: Q/K/V columns, two-slot fetch; engine 2 one head behind.
    let (col, f) = (c.qkv_column, c.qkv_fetch);
    let period = col.max(f);
    let k = c.heads as usize;
    let first = ln1_end.max(ln1_start + f);
    let mut msa_stall = (first - ln1_end) + (c.heads * c.head_dim - 1) * (period - col);
    let mut e1_end: Vec<u64> = Vec::with_capacity(k);
    let mut e2_end: Vec<u64> = Vec::with_capacity(k);
    let (rp, e2_head, tail) = (c.row_period(), c.engine2_head(), c.row_latency());
    let mut y_prev: Option<u64> = None;
    for h in 0..k {
        let end = if h == 0 {
            first + col + (c.head_dim - 1) * period
        } else {
            let mut s = e1_end[h - 1];
            if h >= 2 {
                s = s.max(e2_end[h - 2]);
            }
            s + c.head_dim * period
        };
        e1_end.push(end);
        let y = y_prev.map_or(end, |p| end.max(p + e2_head));
        y_prev = Some(y);
        e2_end.push(y + (c.rows - 1) * rp + tail);
    }
    let msa_end = *e2_end.last().expect("heads validated positive");
    let e1_free = *e1_end.last().expect("heads validated positive");
    let qkv_busy = c.heads * c.head_dim * col;

    // Output projection, optionally split with an engine-1 pass during the last heads.
    let g = overlap_heads(c, spec, e1_free, &e2_end);
    let mut request = e1_free;
    let mut ready = msa_end + c.drain;
    let mut partial_busy = 0;
    let mut proj_busy = 0;
    let mut proj_stall = 0;
    if g > 0 {
        let pc = c.partial_proj_column(g, 3 * spec.engine1_block());
        let pf = spec.fetch_cycles(g * c.head_dim).unwrap_or(0);
        let (_, a_end, a_stall) =
            streamed(e1_free, e1_free.max(e2_end[g as usize - 1]), c.dim, pc, pf);
        if a_end <= msa_end {
            partial_busy = c.dim * pc;
            msa_stall += a_stall;
        } else {
            proj_busy += c.dim * pc;
            proj_stall += a_stall;
        }
        request = a_end;
        ready = ready.max(a_end);
    }
    let (pc, pf) = if g > 0 {
        let rest = c.heads - g;
        (
            c.partial_proj_column(rest, spec.mac_units()),
            spec.fetch_cycles(rest * c.head_dim).unwrap_or(0),
        )
    } else {
        (c.proj_column, c.proj_fetch)
    };
    let (_, proj_end, b_stall) = streamed(request, ready, c.dim, pc, pf);
    proj_busy += c.dim * pc;
    proj_stall += b_stall;

    // Fused MLP as a two-machine flow over every pass's hidden columns.
    let ln2_start = proj_end + c.drain;
    let ln2_end = ln2_start + c.ln;
    let mf = c.mlp_fetch;
    let s = ln2_end.max(ln2_start + mf);
    let mut mlp_stall = s - ln2_end;
    let mut sum = 0;
    let mut max_col = 0;
    for p in &c.mlp_passes {
        let per = p.column_cycles.max(2 * mf);
        mlp_stall += c.mlp_hidden * (per - p.column_cycles);
        sum += c.mlp_hidden * per;
        max_col = max_col.max(per);
    }
    let mlp_end = s + sum + max_col;

    LayerTiming {
        start: t,
        ln1_end,
        msa_end,
        proj_end,
        ln2_end,
        mlp_end,
        qkv_busy,
        partial_busy,
        proj_busy,
        msa_stall,
        proj_stall,
        mlp_stall,
    }
}

/// Useful MACs over `total_cycles · U`.
pub fn hue(workload: &Workload, spec: &AcceleratorSpec, total_cycles: u64) -> Result<f64> {
    if total_cycles == 0 {
        return Err(Error::InvalidSpec(
            "HUE needs a positive cycle count".into(),
        ));
    }
    Ok(workload.useful_macs() as f64 / (total_cycles as f64 * spec.mac_units() as f64))
}

/// `(fps, energy_j)` at constant power.
pub fn fps_energy(total_cycles: u64, spec: &AcceleratorSpec) -> Result<(f64, f64)> {
    if !(spec.clock_hz.is_finite() && spec.clock_hz > 0.0) {
        return Err(Error::InvalidSpec("clock_hz must be positive".into()));
    }
    if total_cycles == 0 {
        return Err(Error::InvalidSpec("cycle count must be positive".into()));
    }
    let seconds = total_cycles as f64 / spec.clock_hz;
    Ok((spec.clock_hz / total_cycles as f64, spec.power_w * seconds))
}

/// Average and per-phase peak DRAM demand for the composed schedule.
pub fn bandwidth_profile(
    costs: &[StageCosts],
    spec: &AcceleratorSpec,
    total_cycles: u64,
    stall_cycles: u64,
) -> Bandwidth {
    let mut fetched = 0u64;
    let mut per_phase: Vec<(String, f64)> = Vec::new();
    let mut push = |name: String, bytes: u64, cycles: u64| {
        let demand = if cycles == 0 {
            f64::INFINITY
        } else {
            bytes as f64 / cycles as f64
        };
        per_phase.push((name, demand));
    };
    for c in costs {
        let s = c.stage;
        let passes = c.mlp_passes.len() as u64;
        let mut layer_bytes = c.dim * c.qkv_fetch_bytes
            + c.dim * c.proj_fetch_bytes
            + 2 * passes * c.mlp_hidden * c.mlp_fetch_bytes;
        push(format!("stage{s}.qkv"), c.qkv_fetch_bytes, c.qkv_column);
        push(
            format!("stage{s}.msa_proj"),
            c.proj_fetch_bytes,
            c.proj_column,
        );
        let min_mlp = c
            .mlp_passes
            .iter()
            .map(|p| p.column_cycles)
            .min()
            .unwrap_or(0);
        push(format!("stage{s}.mlp"), 2 * c.mlp_fetch_bytes, min_mlp);
        if spec.overlap_projection && c.heads > 1 {
            // Split projection fetches each head group's rows once.
            layer_bytes = layer_bytes - c.dim * c.proj_fetch_bytes + c.dim * c.heads * c.head_dim;
        }
        fetched += c.depth * layer_bytes;
        if let Some(m) = &c.merge {
            fetched += m.columns * m.fetch_bytes;
            push(
                format!("stage{s}.patch_merge"),
                m.fetch_bytes,
                m.column_cycles,
            );
        }
    }
    let peak = per_phase.iter().map(|p| p.1).fold(0.0, f64::max);
    Bandwidth {
        avg_bytes_per_cycle: if total_cycles == 0 {
            0.0
        } else {
            fetched as f64 / total_cycles as f64
        },
        peak_bytes_per_cycle: peak,
        per_phase,
        fetched_bytes: fetched,
        stall_cycles,
    }
}

/// Peak on-chip bytes for a model and image; `ResourceError` naming the
/// offending buffer when it exceeds the budget.
pub fn bram_usage(model: &ModelSpec, image: &ImageDims, spec: &AcceleratorSpec) -> Result<u64> {
    let stages = crate::modelzoo::stage_geometry(model, image)?;
    let plan = plan_buffers(&stages, spec);
    plan.check()?;
    Ok(plan.peak())
}

struct Composed {
    total: u64,
    phases: PhaseCycles,
    spans: Vec<PhaseSpan>,
}

fn compose(costs: &[StageCosts], spec: &AcceleratorSpec) -> Composed {
    let mut ph = PhaseCycles::default();
    let mut spans = Vec::new();
    let load = costs.first().map_or(0, |c| c.io_in);
    spans.push(PhaseSpan {
        phase: Phase::Load,
        layer: 0,
        start: 0,
        end: load,
    });
    let mut t = load;
    let mut layer: u32 = 0;
    for c in costs {
        if let Some(m) = &c.merge {
            let (_, end, stall) =
                streamed(t, t + c.drain, m.columns, m.column_cycles, m.fetch_cycles);
            spans.push(PhaseSpan {
                phase: Phase::PatchMerge,
                layer: c.stage as u32,
                start: t,
                end,
            });
            ph.patch_merge += m.columns * m.column_cycles;
            ph.stall += stall;
            t = end;
        }
        for _ in 0..c.depth {
            let lt = compose_layer(c, spec, t);
            spans.push(PhaseSpan {
                phase: Phase::Ln1,
                layer,
                start: t,
                end: lt.ln1_end,
            });
            spans.push(PhaseSpan {
                phase: Phase::Msa,
                layer,
                start: lt.ln1_end,
                end: lt.msa_end,
            });
            spans.push(PhaseSpan {
                phase: Phase::Projection,
                layer,
                start: lt.msa_end,
                end: lt.proj_end,
            });
            spans.push(PhaseSpan {
                phase: Phase::Ln2,
                layer,
                start: lt.proj_end,
                end: lt.ln2_end,
            });
            spans.push(PhaseSpan {
                phase: Phase::Mlp,
                layer,
                start: lt.ln2_end,
                end: lt.mlp_end,
            });
            ph.qkv += lt.qkv_busy;
            ph.msa_proj += lt.partial_busy + lt.proj_busy;
            let msa_span = lt.msa_end - lt.ln1_end;
            ph.attn += msa_span.saturating_sub(lt.qkv_busy + lt.partial_busy + lt.msa_stall);
            ph.mlp += (lt.mlp_end - lt.ln2_end) - lt.mlp_stall;
            ph.stall += lt.msa_stall + lt.proj_stall + lt.mlp_stall;
            t = lt.mlp_end;
            layer += 1;
        }
    }
    let drain = costs.last().map_or(0, |c| c.drain);
    let total = t + drain + costs.last().map_or(0, |c| c.io_out);
    spans.push(PhaseSpan {
        phase: Phase::Store,
        layer: layer.saturating_sub(1),
        start: t,
        end: total,
    });
    let accounted = ph.total();
    ph.overhead = total.saturating_sub(accounted);
    Composed {
        total,
        phases: ph,
        spans,
    }
}

fn stage_cost_table(
    workload: &Workload,
    spec: &AcceleratorSpec,
) -> Result<(Vec<StageCosts>, BufferPlan)> {
    let plan = plan_buffers(&workload.stages, spec);
    let costs = workload
        .stages
        .iter()
        .zip(&plan.stages)
        .map(|(g, b)| stage_costs(g, spec, b.mlp_passes))
        .collect::<Result<_>>()?;
    Ok((costs, plan))
}

fn overflow_detail(plan: &BufferPlan) -> Option<String> {
    match plan.check() {
        Err(Error::Resource { resource, .. }) => Some(resource),
        _ => None,
    }
}

fn starved_report(workload: &Workload, spec: &AcceleratorSpec, plan: &BufferPlan) -> PerfReport {
    PerfReport {
        model: workload.model.clone(),
        image: workload.image.to_string(),
        config: spec.config(),
        mac_units: spec.mac_units(),
        total_cycles: u64::MAX,
        phases: PhaseCycles {
            stall: u64::MAX,
            ..Default::default()
        },
        useful_macs: workload.useful_macs(),
        hue: 0.0,
        fps: 0.0,
        energy_j: f64::INFINITY,
        avg_bytes_per_cycle: 0.0,
        peak_bytes_per_cycle: 0.0,
        bandwidth: Bandwidth {
            avg_bytes_per_cycle: 0.0,
            peak_bytes_per_cycle: 0.0,
            per_phase: Vec::new(),
            fetched_bytes: 0,
            stall_cycles: u64::MAX,
        },
        bram_peak_bytes: plan.peak(),
        bram_budget: plan.budget,
        bram_fits: plan.fits(),
        bram_overflow: overflow_detail(plan),
        lut_usage: spec.lut_usage(),
        lut_budget: spec.lut_budget,
        starved: true,
        spans: Vec::new(),
    }
}

/// Analytical report for a workload on a spec. Cycle counts are exact when
/// no streamed phase demands more than the DRAM bandwidth and an upper bound
/// otherwise.
pub fn analyze(workload: &Workload, spec: &AcceleratorSpec) -> Result<PerfReport> {
    spec.validate()?;
    if workload.stages.iter().all(|s| s.depth == 0)
        && workload.stages.iter().all(|s| s.merge.is_none())
    {
        return Err(Error::EmptyWorkload);
    }
    if spec.dram_bytes_per_cycle() <= 0.0 {
        let plan = plan_buffers(&workload.stages, spec);
        return Ok(starved_report(workload, spec, &plan));
    }
    let (costs, plan) = stage_cost_table(workload, spec)?;
    let composed = compose(&costs, spec);
    let total = composed.total;
    let (fps, energy_j) = fps_energy(total, spec)?;
    let bw = bandwidth_profile(&costs, spec, total, composed.phases.stall);
    Ok(PerfReport {
        model: workload.model.clone(),
        image: workload.image.to_string(),
        config: spec.config(),
        mac_units: spec.mac_units(),
        total_cycles: total,
        phases: composed.phases,
        useful_macs: workload.useful_macs(),
        hue: hue(workload, spec, total)?,
        fps,
        energy_j,
        avg_bytes_per_cycle: bw.avg_bytes_per_cycle,
        peak_bytes_per_cycle: bw.peak_bytes_per_cycle,
        bandwidth: bw,
        bram_peak_bytes: plan.peak(),
        bram_budget: plan.budget,
        bram_fits: plan.fits(),
        bram_overflow: overflow_detail(&plan),
        lut_usage: spec.lut_usage(),
        lut_budget: spec.lut_budget,
        starved: false,
        spans: composed.spans,
    })
}

/// Convenience: build the workload and analyze it.
pub fn analyze_model(
    model: &ModelSpec,
    image: &ImageDims,
    spec: &AcceleratorSpec,
) -> Result<PerfReport> {
    analyze(&build_workload(model, image)?, spec)
}

/// LayerNorm throughput (elements per cycle) at which `model` on `image`
/// reaches `target_fps` with every other parameter of `base` unchanged.
/// Bisection to 1e-4; `None` if the target is out of reach even with free LayerNorm.
pub fn calibrate_ln_rate(
    model: &ModelSpec,
    image: &ImageDims,
    base: &AcceleratorSpec,
    target_fps: f64,
) -> Result<Option<f64>> {
    let w = build_workload(model, image)?;
    let fps_at = |rate: f64| -> Result<f64> {
        let spec = AcceleratorSpec {
            ln_elems_per_cycle: rate,
            ln_cycles_per_token: None,
            ..base.clone()
        };
        Ok(analyze(&w, &spec)?.fps)
    };
    let (mut lo, mut hi) = (1e-3, 1e6);
    if fps_at(hi)? < target_fps {
        return Ok(None);
    }
    if fps_at(lo)? >= target_fps {
        return Ok(Some(lo));
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if fps_at(mid)? >= target_fps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Sum of `(start, end)` intervals after merging overlaps.
fn union_len(mut iv: Vec<(u64, u64)>) -> u64 {
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in iv {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

/// Phase breakdown measured from a simulated schedule, by the same rules the
/// analytical composition uses.
pub fn measure_phases(schedule: &Schedule) -> PhaseCycles {
    let spans = &schedule.spans;
    let starts: Vec<u64> = spans.iter().map(|s| s.start).collect();
    let mut busy_qkv = vec![0u64; spans.len()];
    let mut busy_partial = vec![0u64; spans.len()];
    let mut busy_proj = vec![0u64; spans.len()];
    let mut busy_merge = vec![0u64; spans.len()];
    let mut stalls: Vec<Vec<(u64, u64)>> = vec![Vec::new(); spans.len()];
    for e in &schedule.trace.events {
        if !matches!(
            e.engine,
            Engine::Qkv1 | Engine::ProjPartial | Engine::Proj | Engine::PatchMerge | Engine::Stall
        ) {
            continue;
        }
        if e.end <= e.start {
            continue;
        }
        let mut i = starts.partition_point(|&s| s <= e.start).saturating_sub(1);
        while i < spans.len() && spans[i].start < e.end {
            let lo = e.start.max(spans[i].start);
            let hi = e.end.min(spans[i].end);
            if hi > lo {
                let part = hi - lo;
                match e.engine {
                    Engine::Qkv1 => busy_qkv[i] += part,
                    Engine::ProjPartial => busy_partial[i] += part,
                    Engine::Proj => busy_proj[i] += part,
                    Engine::PatchMerge => busy_merge[i] += part,
                    Engine::Stall => stalls[i].push((lo, hi)),
                    _ => {}
                }
            }
            i += 1;
        }
    }
    let mut ph = PhaseCycles::default();
    for (i, sp) in spans.iter().enumerate() {
        let len = sp.end - sp.start;
        let stall = union_len(std::mem::take(&mut stalls[i]));
        match sp.phase {
            Phase::Msa => {
                ph.qkv += busy_qkv[i];
                ph.msa_proj += busy_partial[i];
                ph.attn += len.saturating_sub(busy_qkv[i] + busy_partial[i] + stall);
                ph.stall += stall;
            }
            Phase::Projection => {
                ph.msa_proj += busy_proj[i] + busy_partial[i];
                ph.stall += stall;
            }
            Phase::Mlp => {
                ph.mlp += len - stall;
                ph.stall += stall;
            }
            Phase::PatchMerge => {
                ph.patch_merge += busy_merge[i];
                ph.stall += stall;
            }
            _ => ph.stall += stall,
        }
    }
    ph.overhead = schedule.trace.span.saturating_sub(ph.total());
    ph
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDelta {
    pub phase: String,
    pub analytic: u64,
    pub trace: u64,
    pub rel: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub analytic_total: u64,
    pub trace_total: u64,
    pub total_rel: f64,
    pub phases: Vec<PhaseDelta>,
}

pub const TOTAL_TOLERANCE: f64 = 0.01;
pub const PHASE_TOLERANCE: f64 = 0.02;

fn rel(a: u64, b: u64) -> f64 {
    if a == b {
        0.0
    } else {
        (a as f64 - b as f64).abs() / (b.max(1) as f64)
    }
}

/// Compare an analytical report with a simulated schedule of the same
/// (model, spec): total within 1%, each phase within 2% of its own size or
/// 0.1% of the total, whichever is looser.
pub fn validate_against_trace(report: &PerfReport, schedule: &Schedule) -> Result<Deltas> {
    let measured = measure_phases(schedule);
    let trace_total = schedule
        .trace
        .events
        .iter()
        .map(|e| e.end)
        .max()
        .unwrap_or(0)
        .max(schedule.trace.span);
    let total_rel = rel(report.total_cycles, trace_total);
    let floor = (trace_total as f64 * 0.001) as u64;
    let phases: Vec<PhaseDelta> = report
        .phases
        .named()
        .iter()
        .zip(measured.named())
        .map(|(&(name, a), (_, t))| {
            let r = rel(a, t);
            PhaseDelta {
                phase: name.to_string(),
                analytic: a,
                trace: t,
                rel: r,
                within: r <= PHASE_TOLERANCE || a.abs_diff(t) <= floor,
            }
        })
        .collect();
    let deltas = Deltas {
        analytic_total: report.total_cycles,
        trace_total,
        total_rel,
        phases,
    };
    let span_ok = trace_total == schedule.trace.span;
    if total_rel > TOTAL_TOLERANCE || !span_ok || deltas.phases.iter().any(|p| !p.within) {
        let detail: Vec<String> = deltas
            .phases
            .iter()
            .map(|p| {
                format!(
                    "{}: analytic {} trace {} ({:.3}%)",
                    p.phase,
                    p.analytic,
                    p.trace,
                    100.0 * p.rel
                )
            })
            .collect();
        return Err(Error::ModelDivergence(format!(
            "total analytic {} vs trace {} ({:.3}%); {}",
            report.total_cycles,
            trace_total,
            100.0 * total_rel,
            detail.join(", ")
        )));
    }
    Ok(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{simulate, TimingOnly};
    use crate::modelzoo::builtin_model;

    fn report(name: &str, side: u32) -> PerfReport {
        analyze_model(
            &builtin_model(name).unwrap(),
            &ImageDims::square(side),
            &AcceleratorSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn phases_sum_to_total() {
        for (m, s) in [("vit_b16", 256), ("deit_t", 224), ("swin_t", 224)] {
            let r = report(m, s);
            assert_eq!(r.phases.total(), r.total_cycles, "{m}");
            assert!(r.hue > 0.0 && r.hue <= 1.0);
        }
    }

    #[test]
    fn energy_identity() {
        let r = report("deit_s", 224);
        assert!((r.fps * r.energy_j - 0.88).abs() < 1e-12);
    }

    #[test]
    fn clock_zero_is_an_error() {
        let spec = AcceleratorSpec {
            clock_hz: 0.0,
            ..Default::default()
        };
        assert!(fps_energy(100, &spec).is_err());
    }

    #[test]
    fn zero_bandwidth_is_degenerate() {
        let spec = AcceleratorSpec {
            dram_words_per_cycle: 0.0,
            ..Default::default()
        };
        let r = analyze_model(
            &builtin_model("deit_t").unwrap(),
            &ImageDims::square(224),
            &spec,
        )
        .unwrap();
        assert!(r.starved);
        assert_eq!(r.fps, 0.0);
    }

    #[test]
    fn deit_t_matches_trace() {
        let model = builtin_model("deit_t").unwrap();
        let w = build_workload(&model, &ImageDims::square(224)).unwrap();
        let spec = AcceleratorSpec::default();
        let r = analyze(&w, &spec).unwrap();
        let s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
        let d = validate_against_trace(&r, &s).unwrap();
        assert_eq!(d.analytic_total, d.trace_total);
    }

    #[test]
    fn corrupted_trace_diverges() {
        let model = builtin_model("deit_t").unwrap();
        let w = build_workload(&model, &ImageDims::square(224)).unwrap();
        let spec = AcceleratorSpec::default();
        let r = analyze(&w, &spec).unwrap();
        let mut s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
        let last = s.trace.events.len() - 1;
        s.trace.events[last].end += s.trace.span / 10;
        assert!(matches!(
            validate_against_trace(&r, &s),
            Err(Error::ModelDivergence(_))
        ));
    }

    #[test]
    fn union_merges_overlaps() {
        assert_eq!(union_len(vec![(0, 5), (3, 8), (10, 12)]), 10);
    }
}
