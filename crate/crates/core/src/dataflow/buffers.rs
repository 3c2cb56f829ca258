//! On-chip buffer plan: which buffers are live in each phase and how many
//! token passes the fused MLP needs to fit its output accumulators.

use serde::{Deserialize, Serialize};

use super::spec::AcceleratorSpec;
use crate::error::{Error, Result};
use crate::modelzoo::StageGeom;

const ACC_BYTES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub bytes: u64,
}

/// Buffers live together during one phase of one stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBuffers {
    pub phase: String,
    pub buffers: Vec<Buffer>,
}

impl PhaseBuffers {
    pub fn total(&self) -> u64 {
        self.buffers.iter().map(|b| b.bytes).sum()
    }

    pub fn largest(&self) -> Option<&Buffer> {
        self.buffers.iter().max_by_key(|b| b.bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageBufferPlan {
    pub stage: usize,
    /// Token passes of the fused MLP (1 = all tokens at once).
    pub mlp_passes: u64,
    pub phases: Vec<PhaseBuffers>,
}

impl StageBufferPlan {
    pub fn peak(&self) -> u64 {
        self.phases.iter().map(|p| p.total()).max().unwrap_or(0)
    }

    pub fn peak_phase(&self) -> Option<&PhaseBuffers> {
        self.phases.iter().max_by_key(|p| p.total())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferPlan {
    pub budget: u64,
    pub stages: Vec<StageBufferPlan>,
}

impl BufferPlan {
    pub fn peak(&self) -> u64 {
        self.stages.iter().map(|s| s.peak()).max().unwrap_or(0)
    }

    pub fn fits(&self) -> bool {
        self.peak() <= self.budget
    }

    /// `ResourceError` naming the largest buffer of the worst phase.
    pub fn check(&self) -> Result<()> {
        if self.fits() {
            return Ok(());
        }
        let worst = self
            .stages
            .iter()
            .max_by_key(|s| s.peak())
            .expect("non-empty when over budget");
        let phase = worst.peak_phase().expect("stage has phases");
        let culprit = phase.largest().map(|b| b.name.as_str()).unwrap_or("?");
        Err(Error::Resource {
            resource: format!(
                "bram (stage {} {} phase, largest buffer {culprit})",
                worst.stage, phase.phase
            ),
            needed: worst.peak(),
            budget: self.budget,
        })
    }
}

fn buf(name: &str, bytes: u64) -> Buffer {
    Buffer {
        name: name.to_string(),
        bytes,
    }
}

fn msa_buffers(g: &StageGeom, spec: &AcceleratorSpec) -> PhaseBuffers {
    let (n, d) = (g.tokens, g.dim);
    let mut buffers = vec![
        buf("activations", n * d),
        buf("ln_stats", 2 * n * ACC_BYTES),
        buf("qkv_two_heads", 2 * 3 * n * g.head_dim),
        buf("score_rows", 4 * g.attn_tokens()),
        buf("sa_concat", n * d),
        buf("qkv_weight_columns", 3 * 2 * d),
        buf("proj_weight_columns", 2 * d),
    ];
    if spec.overlap_projection {
        buffers.push(buf("proj_partial_sums", n * d * ACC_BYTES));
    }
    PhaseBuffers {
        phase: "msa".into(),
        buffers,
    }
}

fn mlp_buffers(g: &StageGeom, passes: u64) -> PhaseBuffers {
    let (n, d) = (g.tokens, g.dim);
    let tile = n.div_ceil(passes);
    PhaseBuffers {
        phase: "mlp".into(),
        buffers: vec![
            buf("activations", n * d),
            buf("ln_stats", 2 * n * ACC_BYTES),
            buf("fc1_weight_columns", 2 * d),
            buf("fc2_weight_rows", 2 * d),
            buf("hidden_columns", 2 * tile),
            buf("output_accumulators", tile * d * ACC_BYTES),
        ],
    }
}

fn merge_buffers(g: &StageGeom) -> Option<PhaseBuffers> {
    let m = g.merge?;
    Some(PhaseBuffers {
        phase: "patch_merge".into(),
        buffers: vec![
            buf("merge_input", m.tokens_in * m.dim_in),
            buf("merge_output", g.tokens * g.dim),
            buf("merge_weight_columns", 2 * 4 * m.dim_in),
        ],
    })
}

/// Smallest number of token passes whose MLP working set fits the budget;
/// 1 when no tiling can make it fit.
pub fn mlp_passes(g: &StageGeom, budget: u64) -> u64 {
    let n = g.tokens.max(1);
    (1..=n)
        .find(|&p| mlp_buffers(g, p).total() <= budget)
        .unwrap_or(1)
}

/// Token ranges of each MLP pass, as even as possible.
pub fn pass_ranges(tokens: u64, passes: u64) -> Vec<(u64, u64)> {
    let passes = passes.clamp(1, tokens.max(1));
    let (base, extra) = (tokens / passes, tokens % passes);
    let mut out = Vec::with_capacity(passes as usize);
    let mut start = 0;
    for i in 0..passes {
        let len = base + u64::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

pub fn plan_buffers(stages: &[StageGeom], spec: &AcceleratorSpec) -> BufferPlan {
    let budget = spec.bram_bytes;
    let stages = stages
        .iter()
        .map(|g| {
            let passes = mlp_passes(g, budget);
            let mut phases = Vec::with_capacity(3);
            phases.extend(merge_buffers(g));
            phases.push(msa_buffers(g, spec));
            phases.push(mlp_buffers(g, passes));
            StageBufferPlan {
                stage: g.index,
                mlp_passes: passes,
                phases,
            }
        })
        .collect();
    BufferPlan { budget, stages }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelzoo::{builtin_model, stage_geometry, ImageDims};

    fn geom(name: &str, side: u32) -> Vec<StageGeom> {
        stage_geometry(&builtin_model(name).unwrap(), &ImageDims::square(side)).unwrap()
    }

    #[test]
    fn vit_b16_fits_with_two_mlp_passes() {
        let g = geom("vit_b16", 256);
        let plan = plan_buffers(&g, &AcceleratorSpec::default());
        assert_eq!(plan.stages[0].mlp_passes, 2);
        assert!(plan.fits(), "peak {}", plan.peak());
        assert_eq!(plan.stages[0].phases[0].buffers[0].bytes, 196_608);
    }

    #[test]
    fn huge_sequence_is_a_resource_error() {
        let g = geom("vit_b16", 1024);
        assert_eq!(g[0].tokens, 4096);
        let plan = plan_buffers(&g, &AcceleratorSpec::default());
        assert!(matches!(plan.check(), Err(Error::Resource { .. })));
    }

    #[test]
    fn pass_ranges_cover_tokens() {
        assert_eq!(pass_ranges(197, 2), vec![(0, 99), (99, 197)]);
        assert_eq!(pass_ranges(5, 9).len(), 5);
        assert_eq!(pass_ranges(8, 1), vec![(0, 8)]);
    }
}
