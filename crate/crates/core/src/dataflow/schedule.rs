//! Event-level simulation of the accelerator schedule. Timing is computed by
//! explicit per-column and per-row recurrences; a [`Datapath`] receives one
//! callback per scheduled unit of work, in program order, so the same walk can
//! drive the bit-exact int8 engine.

use serde::{Deserialize, Serialize};

use super::buffers::{plan_buffers, BufferPlan};
use super::cost::{stage_costs, StageCosts};
use super::spec::AcceleratorSpec;
use super::trace::{Engine, Phase, ScheduleTrace, TraceEvent};
use crate::error::Result;
use crate::modelzoo::StageGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LnSite {
    PreAttention,
    PreMlp,
}

/// Work callbacks issued by the scheduler. Every hook defaults to a no-op.
#[allow(unused_variables)]
pub trait Datapath {
    fn layer_start(&mut self, layer: usize) -> Result<()> {
        Ok(())
    }
    fn layernorm(&mut self, layer: usize, site: LnSite) -> Result<()> {
        Ok(())
    }
    /// Column `col` of head `head` for Q, K and V on blocks 1-3.
    fn qkv_column(&mut self, layer: usize, head: usize, col: usize) -> Result<()> {
        Ok(())
    }
    /// Score row, softmax and S·V row `row` of head `head`.
    fn attention_row(&mut self, layer: usize, head: usize, row: usize) -> Result<()> {
        Ok(())
    }
    /// Partial projection of output column `col` over heads `0..heads`.
    fn projection_partial(&mut self, layer: usize, col: usize, heads: usize) -> Result<()> {
        Ok(())
    }
    /// Finish output column `col` with heads `from_head..` and apply the residual.
    fn projection_column(&mut self, layer: usize, col: usize, from_head: usize) -> Result<()> {
        Ok(())
    }
    /// Hidden column `j` for tokens `tokens`, broadcast through GELU into the output accumulators.
    fn mlp_hidden_column(&mut self, layer: usize, tokens: (usize, usize), j: usize) -> Result<()> {
        Ok(())
    }
    /// Requantize the pass accumulators and apply the residual to those tokens.
    fn mlp_pass_done(&mut self, layer: usize, tokens: (usize, usize)) -> Result<()> {
        Ok(())
    }
    fn layer_end(&mut self, layer: usize) -> Result<()> {
        Ok(())
    }
}

/// Timing-only walk.
#[derive(Clone, Copy, Debug, Default)]
pub struct TimingOnly;

impl Datapath for TimingOnly {}

/// One contiguous interval of a phase on the timeline; the spans of a
/// schedule tile `[0, span)` in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub layer: u32,
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub trace: ScheduleTrace,
    pub spans: Vec<PhaseSpan>,
    pub buffers: BufferPlan,
}

/// Number of heads whose projection rows run on engine 1 during the last
/// heads' attention, given when engine 1 frees up and when each head's
/// attention output is complete. Picks the largest count that finishes
/// before the attention phase does.
pub fn overlap_heads(c: &StageCosts, spec: &AcceleratorSpec, e1_free: u64, e2_end: &[u64]) -> u64 {
    if !spec.overlap_projection || c.heads < 2 {
        return 0;
    }
    let units = 3 * spec.engine1_block();
    let msa_end = *e2_end.last().expect("at least one head");
    for g in (1..c.heads).rev() {
        let col = c.partial_proj_column(g, units);
        let f = spec.fetch_cycles(g * c.head_dim).unwrap_or(u64::MAX / 4);
        let start = e1_free.max(e2_end[g as usize - 1]).max(e1_free + f);
        let end = start + col + (c.dim - 1) * col.max(f);
        if end <= msa_end {
            return g;
        }
    }
    0
}

struct Sim<'a, D: Datapath> {
    spec: &'a AcceleratorSpec,
    dp: &'a mut D,
    events: Vec<TraceEvent>,
    spans: Vec<PhaseSpan>,
    dram_free: u64,
}

/// Result of streaming `n` weight columns through one compute resource.
struct Streamed {
    end: u64,
}

impl<D: Datapath> Sim<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn ev(
        &mut self,
        engine: Engine,
        phase: Phase,
        layer: u32,
        head: Option<u32>,
        index: u64,
        start: u64,
        end: u64,
        bytes: u64,
    ) {
        self.events.push(TraceEvent {
            engine,
            phase,
            layer,
            head,
            index: index as u32,
            start,
            end,
            bytes,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn fetch(
        &mut self,
        phase: Phase,
        layer: u32,
        head: Option<u32>,
        index: u64,
        ready: u64,
        cycles: u64,
        bytes: u64,
    ) -> u64 {
        let start = self.dram_free.max(ready);
        let end = start + cycles;
        self.dram_free = end;
        self.ev(Engine::Fetch, phase, layer, head, index, start, end, bytes);
        end
    }

    fn span(&mut self, phase: Phase, layer: u32, start: u64, end: u64) {
        self.spans.push(PhaseSpan {
            phase,
            layer,
            start,
            end,
        });
    }

    /// Stream `n` columns of `c` cycles each, each needing a `f`-cycle fetch
    /// into one of two column slots. Fetches may start at `request`; compute
    /// may start at `ready`.
    #[allow(clippy::too_many_arguments)]
    fn stream(
        &mut self,
        engine: Engine,
        phase: Phase,
        layer: u32,
        request: u64,
        ready: u64,
        n: u64,
        c: u64,
        f: u64,
        bytes: u64,
        mut work: impl FnMut(&mut D, u64) -> Result<()>,
    ) -> Result<Streamed> {
        let mut ends: Vec<u64> = Vec::with_capacity(n as usize);
        let mut prev = ready;
        for j in 0..n {
            let slot = if j < 2 {
                request
            } else {
                ends[j as usize - 2].max(request)
            };
            let fetched = self.fetch(phase, layer, None, j, slot, f, bytes);
            let free = prev.max(ready);
            let start = free.max(fetched);
            if fetched > free {
                self.ev(Engine::Stall, phase, layer, None, j, free, fetched, 0);
            }
            self.ev(engine, phase, layer, None, j, start, start + c, 0);
            work(self.dp, j)?;
            prev = start + c;
            ends.push(prev);
        }
        Ok(Streamed { end: prev })
    }
}

/// Simulate the full model. `dp` receives every unit of work in program order.
pub fn simulate<D: Datapath>(
    stages: &[StageGeom],
    spec: &AcceleratorSpec,
    dp: &mut D,
) -> Result<Schedule> {
    spec.validate()?;
    let buffers = plan_buffers(stages, spec);
    let costs: Vec<StageCosts> = stages
        .iter()
        .zip(&buffers.stages)
        .map(|(g, b)| stage_costs(g, spec, b.mlp_passes))
        .collect::<Result<_>>()?;
    let mut sim = Sim {
        spec,
        dp,
        events: Vec::new(),
        spans: Vec::new(),
        dram_free: 0,
    };

    let load = costs.first().map_or(0, |c| c.io_in);
    let bytes_in = costs.first().map_or(0, |c| c.tokens * c.dim);
    sim.ev(Engine::Io, Phase::Load, 0, None, 0, 0, load, bytes_in);
    sim.span(Phase::Load, 0, 0, load);
    sim.dram_free = load;
    let mut t = load;
    let mut layer_idx: u32 = 0;

    for c in &costs {
        if let Some(m) = &c.merge {
            let stage = c.stage as u32;
            let s = sim.stream(
                Engine::PatchMerge,
                Phase::PatchMerge,
                stage,
                t,
                t + c.drain,
                m.columns,
                m.column_cycles,
                m.fetch_cycles,
                m.fetch_bytes,
                |_, _| Ok(()),
            )?;
            sim.span(Phase::PatchMerge, stage, t, s.end);
            t = s.end;
        }
        for _ in 0..c.depth {
            t = simulate_layer(&mut sim, c, layer_idx, t)?;
            layer_idx += 1;
        }
    }

    let drain = costs.last().map_or(0, |c| c.drain);
    let store = costs.last().map_or(0, |c| c.io_out);
    let bytes_out = costs.last().map_or(0, |c| c.tokens * c.dim);
    let io_start = (t + drain).max(sim.dram_free);
    sim.ev(
        Engine::Io,
        Phase::Store,
        layer_idx.saturating_sub(1),
        None,
        0,
        io_start,
        io_start + store,
        bytes_out,
    );
    let span = io_start + store;
    sim.span(Phase::Store, layer_idx.saturating_sub(1), t, span);

    Ok(Schedule {
        trace: ScheduleTrace {
            events: sim.events,
            span,
        },
        spans: sim.spans,
        buffers,
    })
}

/// Engine-1 / engine-2 progress through the heads of one layer.
pub(crate) struct MsaState {
    col_ends: Vec<u64>,
    request: u64,
    pub e1_free: u64,
    pub e2_end: Vec<u64>,
    y_prev: Option<u64>,
}

impl MsaState {
    fn new(request: u64, ready: u64) -> Self {
        Self {
            col_ends: Vec::new(),
            request,
            e1_free: ready,
            e2_end: Vec::new(),
            y_prev: None,
        }
    }
}

/// Q/K/V columns of head `h` on blocks 1-3. Column fetches use two slots per
/// matrix; the head's first column also waits for head `h-2` to leave the
/// two-head intermediate buffer.
fn sim_qkv_head<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    h: usize,
    st: &mut MsaState,
) -> Result<()> {
    let li = layer as usize;
    let hh = Some(h as u32);
    for col in 0..c.head_dim as usize {
        let g = st.col_ends.len();
        let slot = if g < 2 {
            st.request
        } else {
            st.col_ends[g - 2]
        };
        let fetched = sim.fetch(
            Phase::Msa,
            layer,
            hh,
            col as u64,
            slot,
            c.qkv_fetch,
            c.qkv_fetch_bytes,
        );
        let mut free = st.e1_free;
        if col == 0 && h >= 2 {
            if let Some(&e) = st.e2_end.get(h - 2) {
                free = free.max(e);
            }
        }
        let start = free.max(fetched);
        if fetched > free {
            sim.ev(
                Engine::Stall,
                Phase::Msa,
                layer,
                hh,
                col as u64,
                free,
                fetched,
                0,
            );
        }
        let end = start + c.qkv_column;
        for eng in [Engine::Qkv1, Engine::Qkv2, Engine::Qkv3] {
            sim.ev(eng, Phase::Msa, layer, hh, col as u64, start, end, 0);
        }
        sim.dp.qkv_column(li, h, col)?;
        st.col_ends.push(end);
        st.e1_free = end;
    }
    Ok(())
}

/// Row-granular attention of head `h` on block 4, the softmax unit and block 5.
fn sim_attention_head<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    h: usize,
    st: &mut MsaState,
) -> Result<()> {
    let li = layer as usize;
    let hh = Some(h as u32);
    let period = c.row_period();
    let y = match st.y_prev {
        Some(p) => st.e1_free.max(p + c.rows * period),
        None => st.e1_free,
    };
    for r in 0..c.rows {
        let s = y + r * period;
        let sm = s + c.score_row;
        let ap = sm + c.softmax_row;
        sim.ev(Engine::AttnScore, Phase::Msa, layer, hh, r, s, sm, 0);
        sim.ev(Engine::Softmax, Phase::Msa, layer, hh, r, sm, ap, 0);
        sim.ev(
            Engine::AttnApply,
            Phase::Msa,
            layer,
            hh,
            r,
            ap,
            ap + c.apply_row,
            0,
        );
        sim.dp.attention_row(li, h, r as usize)?;
    }
    st.y_prev = Some(y);
    st.e2_end.push(y + (c.rows - 1) * period + c.row_latency());
    Ok(())
}

fn sim_msa<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    request: u64,
    ready: u64,
) -> Result<MsaState> {
    let mut st = MsaState::new(request, ready);
    for h in 0..c.heads as usize {
        sim_qkv_head(sim, c, layer, h, &mut st)?;
        sim_attention_head(sim, c, layer, h, &mut st)?;
    }
    Ok(st)
}

/// Output projection on the pool after the last head, optionally preceded by
/// an engine-1 pass over the first heads' rows. Returns the end cycle.
fn sim_projection<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    st: &MsaState,
) -> Result<u64> {
    let li = layer as usize;
    let spec = sim.spec;
    let msa_end = *st.e2_end.last().expect("heads validated positive");
    let g = overlap_heads(c, spec, st.e1_free, &st.e2_end);
    let mut request = st.e1_free;
    let mut ready = msa_end + c.drain;
    if g > 0 {
        let col = c.partial_proj_column(g, 3 * spec.engine1_block());
        let bytes = g * c.head_dim;
        let f = spec.fetch_cycles(bytes).unwrap_or(0);
        let start_at = st.e1_free.max(st.e2_end[g as usize - 1]);
        let gg = g as usize;
        let a = sim.stream(
            Engine::ProjPartial,
            Phase::Projection,
            layer,
            st.e1_free,
            start_at,
            c.dim,
            col,
            f,
            bytes,
            |dp, j| dp.projection_partial(li, j as usize, gg),
        )?;
        request = a.end;
        ready = ready.max(a.end);
    }
    let (col, bytes) = if g > 0 {
        let rest = c.heads - g;
        (
            c.partial_proj_column(rest, spec.mac_units()),
            rest * c.head_dim,
        )
    } else {
        (c.proj_column, c.proj_fetch_bytes)
    };
    let f = spec.fetch_cycles(bytes).unwrap_or(0);
    let from = g as usize;
    let p = sim.stream(
        Engine::Proj,
        Phase::Projection,
        layer,
        request,
        ready,
        c.dim,
        col,
        f,
        bytes,
        |dp, j| dp.projection_column(li, j as usize, from),
    )?;
    Ok(p.end)
}

/// Fused MLP: half A computes hidden columns, half B accumulates their GELU
/// broadcast into the output. FC1 columns and FC2 rows each have two slots.
fn sim_mlp<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    request: u64,
    ready: u64,
) -> Result<u64> {
    let li = layer as usize;
    let total_cols = c.mlp_hidden as usize * c.mlp_passes.len();
    let mut a_ends: Vec<u64> = Vec::with_capacity(total_cols);
    let mut b_ends: Vec<u64> = Vec::with_capacity(total_cols);
    let (mut a_free, mut b_free) = (ready, ready);
    for (pi, pass) in c.mlp_passes.iter().enumerate() {
        let cc = pass.column_cycles;
        let toks = (pass.tokens.0 as usize, pass.tokens.1 as usize);
        let hp = Some(pi as u32);
        for j in 0..c.mlp_hidden {
            let gi = a_ends.len();
            let (slot_a, slot_b) = if gi < 2 {
                (request, request)
            } else {
                (a_ends[gi - 2], b_ends[gi - 2])
            };
            let fa = sim.fetch(
                Phase::Mlp,
                layer,
                hp,
                2 * j,
                slot_a,
                c.mlp_fetch,
                c.mlp_fetch_bytes,
            );
            let fb = sim.fetch(
                Phase::Mlp,
                layer,
                hp,
                2 * j + 1,
                slot_b,
                c.mlp_fetch,
                c.mlp_fetch_bytes,
            );
            let a_start = a_free.max(fa);
            if fa > a_free {
                sim.ev(Engine::Stall, Phase::Mlp, layer, hp, j, a_free, fa, 0);
            }
            let a_end = a_start + cc;
            sim.ev(
                Engine::MlpHidden,
                Phase::Mlp,
                layer,
                hp,
                j,
                a_start,
                a_end,
                0,
            );
            let b_ready = b_free.max(a_end);
            let b_start = b_ready.max(fb);
            if fb > b_ready {
                sim.ev(Engine::Stall, Phase::Mlp, layer, hp, j, b_ready, fb, 0);
            }
            let b_end = b_start + cc;
            sim.ev(
                Engine::MlpOutput,
                Phase::Mlp,
                layer,
                hp,
                j,
                b_start,
                b_end,
                0,
            );
            sim.dp.mlp_hidden_column(li, toks, j as usize)?;
            a_free = a_end;
            b_free = b_end;
            a_ends.push(a_end);
            b_ends.push(b_end);
        }
        sim.dp.mlp_pass_done(li, toks)?;
    }
    Ok(b_free)
}

/// One encoder layer starting at `t` (previous phase end); returns the end of its MLP.
fn simulate_layer<D: Datapath>(
    sim: &mut Sim<'_, D>,
    c: &StageCosts,
    layer: u32,
    t: u64,
) -> Result<u64> {
    let li = layer as usize;
    sim.dp.layer_start(li)?;

    // LN1 statistics; the first QKV columns are requested as it starts.
    let ln1_start = t + c.drain;
    let ln1_end = ln1_start + c.ln;
    sim.ev(
        Engine::Ln,
        Phase::Ln1,
        layer,
        None,
        0,
        ln1_start,
        ln1_end,
        0,
    );
    sim.dp.layernorm(li, LnSite::PreAttention)?;
    sim.span(Phase::Ln1, layer, t, ln1_end);

    let st = sim_msa(sim, c, layer, ln1_start, ln1_end)?;
    let msa_end = *st.e2_end.last().expect("heads validated positive");
    sim.span(Phase::Msa, layer, ln1_end, msa_end);

    let proj_end = sim_projection(sim, c, layer, &st)?;
    sim.span(Phase::Projection, layer, msa_end, proj_end);

    // LN2, then the fused MLP; its first weights are requested as LN2 starts.
    let ln2_start = proj_end + c.drain;
    let ln2_end = ln2_start + c.ln;
    sim.ev(
        Engine::Ln,
        Phase::Ln2,
        layer,
        None,
        1,
        ln2_start,
        ln2_end,
        0,
    );
    sim.dp.layernorm(li, LnSite::PreMlp)?;
    sim.span(Phase::Ln2, layer, proj_end, ln2_end);

    let mlp_end = sim_mlp(sim, c, layer, ln2_start, ln2_end)?;
    sim.span(Phase::Mlp, layer, ln2_end, mlp_end);
    sim.dp.layer_end(li)?;
    Ok(mlp_end)
}

/// Which part of a layer a standalone run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    /// Q/K/V columns of one head.
    QkvHead(usize),
    /// Attention rows of one head.
    AttentionHead(usize),
    /// Every head plus the output projection.
    Msa,
    Mlp,
}

/// Simulate one part of a single layer from cycle 0 with no LayerNorm in front.
pub fn simulate_part<D: Datapath>(
    c: &StageCosts,
    spec: &AcceleratorSpec,
    part: Part,
    dp: &mut D,
) -> Result<ScheduleTrace> {
    spec.validate()?;
    let mut sim = Sim {
        spec,
        dp,
        events: Vec::new(),
        spans: Vec::new(),
        dram_free: 0,
    };
    let span = match part {
        Part::QkvHead(h) => {
            let mut st = MsaState::new(0, 0);
            sim_qkv_head(&mut sim, c, 0, h, &mut st)?;
            st.e1_free
        }
        Part::AttentionHead(h) => {
            let mut st = MsaState::new(0, 0);
            sim_attention_head(&mut sim, c, 0, h, &mut st)?;
            st.e2_end[0]
        }
        Part::Msa => {
            let st = sim_msa(&mut sim, c, 0, 0, 0)?;
            sim_projection(&mut sim, c, 0, &st)?
        }
        Part::Mlp => sim_mlp(&mut sim, c, 0, 0, 0)?,
    };
    let span = sim
        .events
        .iter()
        .map(|e| e.end)
        .max()
        .unwrap_or(0)
        .max(span);
    Ok(ScheduleTrace {
        events: sim.events,
        span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelzoo::{builtin_model, stage_geometry, ImageDims, ModelSpec, StageSpec};

    fn plain(n_side: u32, d: u32, heads: u32, m: u32, depth: u32) -> Vec<StageGeom> {
        let model = ModelSpec {
            name: "toy".into(),
            patch_size: 1,
            stages: vec![StageSpec {
                depth,
                latent_dim: d,
                heads,
                mlp_hidden: m,
                window: None,
                patch_merge_in: false,
            }],
            include_class_token: false,
            mac_counting: Default::default(),
        };
        stage_geometry(&model, &ImageDims::new(n_side, n_side)).unwrap()
    }

    fn spans_tile(s: &Schedule) {
        let mut t = 0;
        for sp in &s.spans {
            assert_eq!(sp.start, t, "{sp:?}");
            assert!(sp.end >= sp.start);
            t = sp.end;
        }
        assert_eq!(t, s.trace.span);
    }

    #[test]
    fn toy_schedule_is_legal() {
        let g = plain(4, 16, 2, 32, 2);
        let s = simulate(
            &g,
            &AcceleratorSpec::with_config(2, 2, 2, 2),
            &mut TimingOnly,
        )
        .unwrap();
        assert!(
            s.trace.find_overlap().is_none(),
            "{:?}",
            s.trace.find_overlap()
        );
        spans_tile(&s);
    }

    #[test]
    fn overlap_mode_is_legal_and_not_slower() {
        let g = stage_geometry(&builtin_model("deit_t").unwrap(), &ImageDims::square(224)).unwrap();
        let base = simulate(&g, &AcceleratorSpec::default(), &mut TimingOnly).unwrap();
        let spec = AcceleratorSpec {
            overlap_projection: true,
            ..Default::default()
        };
        let ov = simulate(&g, &spec, &mut TimingOnly).unwrap();
        assert!(ov.trace.find_overlap().is_none());
        assert!(ov
            .trace
            .events
            .iter()
            .any(|e| e.engine == Engine::ProjPartial));
        assert!(ov.trace.span < base.trace.span);
        spans_tile(&ov);
    }

    #[test]
    fn balanced_engines_have_equal_head_spans() {
        let g =
            stage_geometry(&builtin_model("vit_b16").unwrap(), &ImageDims::square(256)).unwrap();
        let spec = AcceleratorSpec::default();
        let c = stage_costs(&g[0], &spec, 2).unwrap();
        assert_eq!(c.engine1_head(), 131_072);
        assert_eq!(c.engine2_head(), 131_072);
    }

    #[test]
    fn single_head_has_no_overlap() {
        let g = plain(4, 8, 1, 8, 1);
        let spec = AcceleratorSpec::with_config(1, 1, 1, 1).zero_overhead();
        let s = simulate(&g, &spec, &mut TimingOnly).unwrap();
        let c = stage_costs(&g[0], &spec, s.buffers.stages[0].mlp_passes).unwrap();
        let msa = s.spans.iter().find(|p| p.phase == Phase::Msa).unwrap();
        // With no LayerNorm in front, the first column waits for its own fetch.
        assert_eq!(
            msa.end - msa.start,
            c.qkv_fetch + c.engine1_head() + (c.rows - 1) * c.row_period() + c.row_latency()
        );
    }

    #[test]
    fn zero_bandwidth_is_rejected() {
        let g = plain(2, 4, 1, 4, 1);
        let spec = AcceleratorSpec {
            dram_words_per_cycle: 0.0,
            ..Default::default()
        };
        assert!(simulate(&g, &spec, &mut TimingOnly).is_err());
    }
}
