//! Per-operation cycle counts of one stage on a given PE configuration.
//! Shared by the event simulator and the analytical model.

use serde::{Deserialize, Serialize};

use super::buffers::pass_ranges;
use super::spec::AcceleratorSpec;
use crate::error::{Error, Result};
use crate::modelzoo::StageGeom;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeCosts {
    pub columns: u64,
    pub column_cycles: u64,
    pub fetch_cycles: u64,
    pub fetch_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpPass {
    pub tokens: (u64, u64),
    /// Cycles per hidden column on each half of the pool.
    pub column_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCosts {
    pub stage: usize,
    pub depth: u64,
    pub tokens: u64,
    pub dim: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub mlp_hidden: u64,
    pub ln: u64,
    pub drain: u64,
    /// One output column on each of PE blocks 1-3.
    pub qkv_column: u64,
    pub qkv_fetch: u64,
    pub qkv_fetch_bytes: u64,
    /// Attention rows streamed per head (windows times padded window tokens).
    pub rows: u64,
    pub score_row: u64,
    pub softmax_row: u64,
    pub apply_row: u64,
    pub proj_column: u64,
    pub proj_fetch: u64,
    pub proj_fetch_bytes: u64,
    pub mlp_passes: Vec<MlpPass>,
    /// Fetch of one FC1 column or one FC2 row.
    pub mlp_fetch: u64,
    pub mlp_fetch_bytes: u64,
    pub merge: Option<MergeCosts>,
    pub io_in: u64,
    pub io_out: u64,
}

impl StageCosts {
    /// Lockstep period of the three-stage row pipeline.
    pub fn row_period(&self) -> u64 {
        self.score_row.max(self.softmax_row).max(self.apply_row)
    }

    /// Row fill-to-drain tail after the last row is issued.
    pub fn row_latency(&self) -> u64 {
        self.score_row + self.softmax_row + self.apply_row
    }

    pub fn engine1_head(&self) -> u64 {
        self.head_dim * self.qkv_column
    }

    pub fn engine2_head(&self) -> u64 {
        self.rows * self.row_period()
    }

    /// Cycles per output column of the overlapped projection restricted to
    /// `heads` heads' rows on `units` MAC units.
    pub fn partial_proj_column(&self, heads: u64, units: u64) -> u64 {
        (self.tokens * heads * self.head_dim).div_ceil(units)
    }
}

fn fetch(spec: &AcceleratorSpec, bytes: u64) -> Result<u64> {
    spec.fetch_cycles(bytes).ok_or_else(|| {
        Error::InvalidSpec("zero DRAM bandwidth: weight fetches never complete".into())
    })
}

pub fn stage_costs(g: &StageGeom, spec: &AcceleratorSpec, mlp_passes: u64) -> Result<StageCosts> {
    let (n, d, dh) = (g.tokens, g.dim, g.head_dim);
    let (k1, k2, k3, k4) = (
        spec.k1 as u64,
        spec.k2 as u64,
        spec.k3 as u64,
        spec.k4 as u64,
    );
    let u = spec.mac_units();
    let half = spec.mlp_half().max(1);
    let nw = g.attn_tokens();
    let passes = pass_ranges(n, mlp_passes)
        .into_iter()
        .map(|t| MlpPass {
            tokens: t,
            column_cycles: ((t.1 - t.0) * d).div_ceil(half),
        })
        .collect();
    let merge = match g.merge {
        Some(m) => Some(MergeCosts {
            columns: d,
            column_cycles: (n * 4 * m.dim_in).div_ceil(u),
            fetch_cycles: fetch(spec, 4 * m.dim_in)?,
            fetch_bytes: 4 * m.dim_in,
        }),
        None => None,
    };
    Ok(StageCosts {
        stage: g.index,
        depth: g.depth as u64,
        tokens: n,
        dim: d,
        heads: g.heads,
        head_dim: dh,
        mlp_hidden: g.mlp_hidden,
        ln: spec.ln_cycles(n, d),
        drain: spec.phase_drain_cycles,
        qkv_column: n.div_ceil(k1) * d.div_ceil(k2),
        qkv_fetch: fetch(spec, 3 * d)?,
        qkv_fetch_bytes: 3 * d,
        rows: g.attn_rows(),
        score_row: nw.div_ceil(k3) * dh.div_ceil(k4),
        softmax_row: spec.softmax_fill(dh),
        apply_row: dh.div_ceil(k3) * nw.div_ceil(k4),
        proj_column: (n * d).div_ceil(u),
        proj_fetch: fetch(spec, d)?,
        proj_fetch_bytes: d,
        mlp_passes: passes,
        mlp_fetch: fetch(spec, d)?,
        mlp_fetch_bytes: d,
        merge,
        io_in: fetch(spec, n * d)?,
        io_out: fetch(spec, n * d)?,
    })
}
