//! Vision transformer variants and their layer-level workloads.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: [&str; 5] = ["vit_b16", "deit_b", "deit_s", "deit_t", "swin_t"];

/// Which MAC-bearing layers enter the breakdown fractions.
///
/// `AllMatmuls` counts every matrix product including the two attention
/// products. `WeightLayers` counts only products against stored weights
/// (Q/K/V, projection, MLP, patch merging and the patch embedding).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacCounting {
    #[default]
    AllMatmuls,
    WeightLayers,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub depth: u32,
    pub latent_dim: u32,
    pub heads: u32,
    pub mlp_hidden: u32,
    #[serde(default)]
    pub window: Option<u32>,
    #[serde(default)]
    pub patch_merge_in: bool,
}

impl StageSpec {
    pub fn head_dim(&self) -> u32 {
        self.latent_dim / self.heads
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub patch_size: u32,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub include_class_token: bool,
    #[serde(default)]
    pub mac_counting: MacCounting,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Shape("patch_size must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Shape("model needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.heads == 0 || s.latent_dim == 0 || s.mlp_hidden == 0 {
                return Err(Error::Shape(format!(
                    "stage {i}: D, k and M must be positive"
                )));
            }
            if s.latent_dim % s.heads != 0 {
                return Err(Error::Shape(format!(
                    "stage {i}: D={} not divisible by k={}",
                    s.latent_dim, s.heads
                )));
            }
            if s.window == Some(0) {
                return Err(Error::Shape(format!(
                    "stage {i}: window side must be positive"
                )));
            }
            if i == 0 && s.patch_merge_in {
                return Err(Error::Shape(
                    "first stage cannot begin with patch merging".into(),
                ));
            }
            if self.include_class_token && (s.window.is_some() || s.patch_merge_in) {
                return Err(Error::Shape(
                    "class token is only supported for plain single-grid stages".into(),
                ));
            }
        }
        Ok(())
    }

    /// Single plain stage, the shape the functional engines execute.
    pub fn is_single_plain_stage(&self) -> bool {
        self.stages.len() == 1 && self.stages[0].window.is_none() && !self.stages[0].patch_merge_in
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: ModelSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load_toml(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Input image size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl ImageDims {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            channels: 3,
        }
    }

    pub fn square(side: u32) -> Self {
        Self::new(side, side)
    }
}

impl fmt::Display for ImageDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl FromStr for ImageDims {
    type Err = Error;

    /// Accepts `HxW` or `HxWxC`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let num = |p: &str| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| Error::Parse(format!("bad image dims `{s}`")))
        };
        match parts.as_slice() {
            [h, w] => Ok(Self::new(num(h)?, num(w)?)),
            [h, w, c] => Ok(Self {
                height: num(h)?,
                width: num(w)?,
                channels: num(c)?,
            }),
            _ => Err(Error::Parse(format!(
                "bad image dims `{s}`, expected HxW or HxWxC"
            ))),
        }
    }
}

pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    let plain = |name: &str, d: u32, k: u32| ModelSpec {
        name: name.to_string(),
        patch_size: 16,
        stages: vec![StageSpec {
            depth: 12,
            latent_dim: d,
            heads: k,
            mlp_hidden: 4 * d,
            window: None,
            patch_merge_in: false,
        }],
        include_class_token: false,
        mac_counting: MacCounting::AllMatmuls,
    };
    let m = match name {
        "vit_b16" => plain("vit_b16", 768, 12),
        "deit_b" => plain("deit_b", 768, 12),
        "deit_s" => plain("deit_s", 384, 6),
        "deit_t" => plain("deit_t", 192, 3),
        "swin_t" => {
            let dims = [96u32, 192, 384, 768];
            let heads = [3u32, 6, 12, 24];
            let depths = [2u32, 2, 6, 2];
            ModelSpec {
                name: "swin_t".into(),
                patch_size: 4,
                stages: (0..4)
                    .map(|i| StageSpec {
                        depth: depths[i],
                        latent_dim: dims[i],
                        heads: heads[i],
                        mlp_hidden: 4 * dims[i],
                        window: Some(7),
                        patch_merge_in: i > 0,
                    })
                    .collect(),
                include_class_token: false,
                mac_counting: MacCounting::WeightLayers,
            }
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(m)
}

/// Window tiling of one stage's token grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WindowGeom {
    /// Window side after clamping to the grid.
    pub side: u32,
    pub windows_h: u32,
    pub windows_w: u32,
    /// Real (unpadded) token count of every window, row-major.
    pub real_tokens: Vec<u32>,
}

impl WindowGeom {
    pub fn count(&self) -> u64 {
        self.windows_h as u64 * self.windows_w as u64
    }

    pub fn tokens_per_window(&self) -> u64 {
        self.side as u64 * self.side as u64
    }
}

/// Patch-merging input of a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MergeGeom {
    pub tokens_in: u64,
    pub dim_in: u64,
}

/// Resolved dimensions of one stage for a concrete image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageGeom {
    pub index: usize,
    pub depth: u32,
    pub grid_h: u32,
    pub grid_w: u32,
    /// Sequence length N (including the class token when enabled).
    pub tokens: u64,
    pub dim: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub mlp_hidden: u64,
    pub window: Option<WindowGeom>,
    pub merge: Option<MergeGeom>,
}

impl StageGeom {
    /// Tokens one attention row spans (N' for windowed stages).
    pub fn attn_tokens(&self) -> u64 {
        self.window
            .as_ref()
            .map_or(self.tokens, |w| w.tokens_per_window())
    }

    pub fn window_count(&self) -> u64 {
        self.window.as_ref().map_or(1, |w| w.count())
    }

    /// Attention rows streamed per head, padding included.
    pub fn attn_rows(&self) -> u64 {
        self.window_count() * self.attn_tokens()
    }

    /// Useful MACs of one attention product for a single head.
    pub fn attn_macs_per_head(&self) -> u64 {
        match &self.window {
            None => self.tokens * self.tokens * self.head_dim,
            Some(w) => w
                .real_tokens
                .iter()
                .map(|&n| n as u64 * n as u64 * self.head_dim)
                .sum(),
        }
    }
}

/// Resolve every stage's token grid for an image.
pub fn stage_geometry(model: &ModelSpec, image: &ImageDims) -> Result<Vec<StageGeom>> {
    model.validate()?;
    let p = model.patch_size;
    if image.height == 0 || image.width == 0 || image.channels == 0 {
        return Err(Error::Shape("image dims must be positive".into()));
    }
    if !image.height.is_multiple_of(p) || !image.width.is_multiple_of(p) {
        return Err(Error::Shape(format!(
            "image {}x{} not divisible by patch size {p}",
            image.height, image.width
        )));
    }
    let (mut gh, mut gw) = (image.height / p, image.width / p);
    let mut prev_dim: Option<u64> = None;
    let mut out = Vec::with_capacity(model.stages.len());
    for (i, s) in model.stages.iter().enumerate() {
        let merge = if s.patch_merge_in {
            if gh % 2 != 0 || gw % 2 != 0 {
                return Err(Error::Shape(format!(
                    "stage {i}: patch merging needs an even token grid, got {gh}x{gw}"
                )));
            }
            let m = MergeGeom {
                tokens_in: gh as u64 * gw as u64,
                dim_in: prev_dim.expect("validated: stage 0 has no merge"),
            };
            gh /= 2;
            gw /= 2;
            Some(m)
        } else {
            None
        };
        let window = s.window.map(|side| {
            let side = side.min(gh).min(gw).max(1);
            let wh = gh.div_ceil(side);
            let ww = gw.div_ceil(side);
            let mut real = Vec::with_capacity((wh * ww) as usize);
            for a in 0..wh {
                for b in 0..ww {
                    let rows = side.min(gh - a * side);
                    let cols = side.min(gw - b * side);
                    real.push(rows * cols);
                }
            }
            WindowGeom {
                side,
                windows_h: wh,
                windows_w: ww,
                real_tokens: real,
            }
        });
        let tokens = gh as u64 * gw as u64 + u64::from(model.include_class_token);
        out.push(StageGeom {
            index: i,
            depth: s.depth,
            grid_h: gh,
            grid_w: gw,
            tokens,
            dim: s.latent_dim as u64,
            heads: s.heads as u64,
            head_dim: s.head_dim() as u64,
            mlp_hidden: s.mlp_hidden as u64,
            window,
            merge,
        });
        prev_dim = Some(s.latent_dim as u64);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    PatchEmbed,
    PatchMerge,
    Layernorm,
    QkvProj,
    AttnScore,
    AttnSoftmax,
    AttnApply,
    MsaProj,
    Residual,
    MlpFc1,
    MlpFc2,
}

impl OpKind {
    pub fn is_matmul(self) -> bool {
        !matches!(
            self,
            OpKind::Layernorm | OpKind::AttnSoftmax | OpKind::Residual
        )
    }

    /// Matmuls executed on the PE array (the patch embedding runs off-array).
    pub fn is_hue_bearing(self) -> bool {
        self.is_matmul() && self != OpKind::PatchEmbed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OpDims {
    pub rows: u64,
    pub inner: u64,
    pub outer: u64,
    pub heads: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerOp {
    pub kind: OpKind,
    pub stage: usize,
    /// Encoder layer index within the stage; `None` for stage-level ops.
    pub layer: Option<u32>,
    pub dims: OpDims,
    pub mac_count: u64,
    pub weight_bytes: u64,
    /// Bytes of the op's int8 output tensor.
    pub activation_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub model: String,
    pub image: ImageDims,
    pub counting: MacCounting,
    pub stages: Vec<StageGeom>,
    pub ops: Vec<LayerOp>,
}

impl Workload {
    /// MACs executed on the PE array excluding padding.
    pub fn useful_macs(&self) -> u64 {
        self.ops
            .iter()
            .filter(|o| o.kind.is_hue_bearing())
            .map(|o| o.mac_count)
            .sum()
    }

    pub fn macs_of(&self, kind: OpKind) -> u64 {
        self.ops
            .iter()
            .filter(|o| o.kind == kind)
            .map(|o| o.mac_count)
            .sum()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.ops.iter().map(|o| o.weight_bytes).sum()
    }
}

pub fn build_workload(model: &ModelSpec, image: &ImageDims) -> Result<Workload> {
    let stages = stage_geometry(model, image)?;
    let mut ops = Vec::new();
    let p2c = model.patch_size as u64 * model.patch_size as u64 * image.channels as u64;
    for g in &stages {
        let (n, d, k, dh, m) = (g.tokens, g.dim, g.heads, g.head_dim, g.mlp_hidden);
        if g.index == 0 {
            let patches = g.grid_h as u64 * g.grid_w as u64;
            ops.push(LayerOp {
                kind: OpKind::PatchEmbed,
                stage: 0,
                layer: None,
                dims: OpDims {
                    rows: patches,
                    inner: p2c,
                    outer: d,
                    heads: 1,
                },
                mac_count: patches * p2c * d,
                weight_bytes: p2c * d,
                activation_bytes: patches * d,
            });
        }
        if let Some(mg) = g.merge {
            let inner = 4 * mg.dim_in;
            ops.push(LayerOp {
                kind: OpKind::PatchMerge,
                stage: g.index,
                layer: None,
                dims: OpDims {
                    rows: n,
                    inner,
                    outer: d,
                    heads: 1,
                },
                mac_count: n * inner * d,
                weight_bytes: inner * d,
                activation_bytes: n * d,
            });
        }
        let rows = g.attn_rows();
        let n_attn = g.attn_tokens();
        let attn_macs = k * g.attn_macs_per_head();
        for l in 0..g.depth {
            let op = |kind, dims: OpDims, mac_count, weight_bytes, activation_bytes| LayerOp {
                kind,
                stage: g.index,
                layer: Some(l),
                dims,
                mac_count,
                weight_bytes,
                activation_bytes,
            };
            let flat = |inner, outer| OpDims {
                rows: n,
                inner,
                outer,
                heads: 1,
            };
            ops.push(op(OpKind::Layernorm, flat(d, d), 0, 0, n * d));
            ops.push(op(
                OpKind::QkvProj,
                OpDims {
                    rows: n,
                    inner: d,
                    outer: dh,
                    heads: k,
                },
                3 * n * d * dh * k,
                3 * d * d,
                3 * n * d,
            ));
            let attn_dims = OpDims {
                rows,
                inner: dh,
                outer: n_attn,
                heads: k,
            };
            ops.push(op(
                OpKind::AttnScore,
                attn_dims,
                attn_macs,
                0,
                k * rows * n_attn,
            ));
            ops.push(op(OpKind::AttnSoftmax, attn_dims, 0, 0, k * rows * n_attn));
            ops.push(op(
                OpKind::AttnApply,
                OpDims {
                    rows,
                    inner: n_attn,
                    outer: dh,
                    heads: k,
                },
                attn_macs,
                0,
                n * d,
            ));
            ops.push(op(OpKind::MsaProj, flat(d, d), n * d * d, d * d, n * d));
            ops.push(op(OpKind::Residual, flat(d, d), 0, 0, n * d));
            ops.push(op(OpKind::Layernorm, flat(d, d), 0, 0, n * d));
            ops.push(op(OpKind::MlpFc1, flat(d, m), n * d * m, d * m, n * m));
            ops.push(op(OpKind::MlpFc2, flat(m, d), n * m * d, m * d, n * d));
            ops.push(op(OpKind::Residual, flat(d, d), 0, 0, n * d));
        }
    }
    Ok(Workload {
        model: model.name.clone(),
        image: *image,
        counting: model.mac_counting,
        stages,
        ops,
    })
}

/// MAC fractions per block type; the three fractions sum to exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacBreakdown {
    pub msa: Ratio<u64>,
    pub mlp: Ratio<u64>,
    pub patch_merge: Ratio<u64>,
    pub total_macs: u64,
}

impl MacBreakdown {
    pub fn percent(r: Ratio<u64>) -> f64 {
        100.0 * *r.numer() as f64 / *r.denom() as f64
    }

    pub fn msa_pct(&self) -> f64 {
        Self::percent(self.msa)
    }

    pub fn mlp_pct(&self) -> f64 {
        Self::percent(self.mlp)
    }

    pub fn patch_merge_pct(&self) -> f64 {
        Self::percent(self.patch_merge)
    }
}

pub fn mac_breakdown(w: &Workload) -> Result<MacBreakdown> {
    let (mut msa, mut mlp, mut pm) = (0u64, 0u64, 0u64);
    for op in &w.ops {
        let weights_only = w.counting == MacCounting::WeightLayers;
        match op.kind {
            OpKind::QkvProj | OpKind::MsaProj => msa += op.mac_count,
            OpKind::AttnScore | OpKind::AttnApply if !weights_only => msa += op.mac_count,
            OpKind::MlpFc1 | OpKind::MlpFc2 => mlp += op.mac_count,
            OpKind::PatchMerge => pm += op.mac_count,
            OpKind::PatchEmbed if weights_only => pm += op.mac_count,
            _ => {}
        }
    }
    let total = msa + mlp + pm;
    if total == 0 {
        return Err(Error::EmptyWorkload);
    }
    Ok(MacBreakdown {
        msa: Ratio::new(msa, total),
        mlp: Ratio::new(mlp, total),
        patch_merge: Ratio::new(pm, total),
        total_macs: total,
    })
}

/// int8 byte counts of one stage's activations and weight matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageFootprint {
    pub tokens: u64,
    pub input: u64,
    pub w_q: u64,
    pub w_k: u64,
    pub w_v: u64,
    pub w_msa: u64,
    pub w_fc1: u64,
    pub w_fc2: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryFootprint {
    pub stages: Vec<StageFootprint>,
}

impl MemoryFootprint {
    pub fn first(&self) -> &StageFootprint {
        &self.stages[0]
    }

    /// Weight bytes of every layer of every stage.
    pub fn total_weight_bytes(&self, model: &ModelSpec) -> u64 {
        self.stages
            .iter()
            .zip(&model.stages)
            .map(|(f, s)| s.depth as u64 * (f.w_q + f.w_k + f.w_v + f.w_msa + f.w_fc1 + f.w_fc2))
            .sum()
    }
}

pub fn memory_footprint(model: &ModelSpec, image: &ImageDims) -> Result<MemoryFootprint> {
    let stages = stage_geometry(model, image)?
        .iter()
        .map(|g| {
            let dd = g.dim * g.dim;
            StageFootprint {
                tokens: g.tokens,
                input: g.tokens * g.dim,
                w_q: dd,
                w_k: dd,
                w_v: dd,
                w_msa: dd,
                w_fc1: g.dim * g.mlp_hidden,
                w_fc2: g.mlp_hidden * g.dim,
            }
        })
        .collect();
    Ok(MemoryFootprint { stages })
}
