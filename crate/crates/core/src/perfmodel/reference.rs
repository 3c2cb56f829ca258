//! Published figures for the default configuration on a ZC7020 at 150 MHz.

/// One published performance row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePerf {
    pub model: &'static str,
    pub image_side: u32,
    /// Hardware utilization efficiency in percent.
    pub hue_pct: f64,
    pub fps: f64,
    pub energy_j: f64,
}

pub const REFERENCE_PERF: [ReferencePerf; 5] = [
    ReferencePerf {
        model: "vit_b16",
        image_side: 256,
        hue_pct: 93.2,
        fps: 2.17,
        energy_j: 0.406,
    },
    ReferencePerf {
        model: "vit_b16",
        image_side: 224,
        hue_pct: 92.8,
        fps: 2.75,
        energy_j: 0.320,
    },
    ReferencePerf {
        model: "deit_s",
        image_side: 224,
        hue_pct: 87.2,
        fps: 9.36,
        energy_j: 0.094,
    },
    ReferencePerf {
        model: "deit_t",
        image_side: 224,
        hue_pct: 66.2,
        fps: 19.01,
        energy_j: 0.046,
    },
    ReferencePerf {
        model: "swin_t",
        image_side: 224,
        hue_pct: 81.0,
        fps: 8.71,
        energy_j: 0.101,
    },
];

/// One published MAC split in percent; `patch_merge` is zero for plain models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceMacSplit {
    pub model: &'static str,
    pub image_side: u32,
    pub msa_pct: f64,
    pub mlp_pct: f64,
    pub patch_merge_pct: f64,
}

pub const REFERENCE_MAC_SPLIT: [ReferenceMacSplit; 5] = [
    ReferenceMacSplit {
        model: "vit_b16",
        image_side: 256,
        msa_pct: 36.8,
        mlp_pct: 63.2,
        patch_merge_pct: 0.0,
    },
    ReferenceMacSplit {
        model: "vit_b16",
        image_side: 224,
        msa_pct: 36.1,
        mlp_pct: 63.9,
        patch_merge_pct: 0.0,
    },
    ReferenceMacSplit {
        model: "deit_s",
        image_side: 224,
        msa_pct: 38.6,
        mlp_pct: 61.4,
        patch_merge_pct: 0.0,
    },
    ReferenceMacSplit {
        model: "deit_t",
        image_side: 224,
        msa_pct: 43.1,
        mlp_pct: 56.9,
        patch_merge_pct: 0.0,
    },
    ReferenceMacSplit {
        model: "swin_t",
        image_side: 224,
        msa_pct: 31.9,
        mlp_pct: 63.8,
        patch_merge_pct: 4.3,
    },
];

/// First-layer footprint of ViT-B/16 on a 256x256 image, in bytes.
pub const VIT_B16_256_FOOTPRINT: [(&str, u64); 5] = [
    ("input", 192 * 1024),
    ("w_q", 576 * 1024),
    ("w_k", 576 * 1024),
    ("w_v", 576 * 1024),
    ("w_msa", 576 * 1024),
];

/// FPGA resource budgets: (name, LUTs, DSPs, BRAM bytes).
pub const BOARDS: [(&str, u64, u64, u64); 2] = [
    ("zc7020", 53_200, 220, 630 * 1024),
    ("zcu102", 274_080, 2_520, 4 * 1024 * 1024),
];

pub fn reference_perf(model: &str, image_side: u32) -> Option<&'static ReferencePerf> {
    REFERENCE_PERF
        .iter()
        .find(|r| r.model == model && r.image_side == image_side)
}

pub fn reference_mac_split(model: &str, image_side: u32) -> Option<&'static ReferenceMacSplit> {
    REFERENCE_MAC_SPLIT
        .iter()
        .find(|r| r.model == model && r.image_side == image_side)
}
