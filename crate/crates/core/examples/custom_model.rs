//! Describe a model in TOML, then inspect its workload and modeled performance.

use vita_sim::dataflow::AcceleratorSpec;
use vita_sim::modelzoo::{build_workload, mac_breakdown, ImageDims, ModelSpec};
use vita_sim::perfmodel::analyze;

const MODEL: &str = r#"
name = "vit_s_patch32"
patch_size = 32

[[stages]]
depth = 8
latent_dim = 512
heads = 8
mlp_hidden = 2048
patch_merge_in = false
"#;

const SPEC: &str = "k1 = 8\nk2 = 8\nk3 = 8\nk4 = 4\n";

fn main() -> vita_sim::Result<()> {
    let model = ModelSpec::from_toml_str(MODEL)?;
    let spec = AcceleratorSpec::from_toml_str(SPEC)?;
    let w = build_workload(&model, &ImageDims::square(384))?;
    let b = mac_breakdown(&w)?;
    println!(
        "{}: N={} MACs={} MSA {:.2}% MLP {:.2}%",
        model.name,
        w.stages[0].tokens,
        b.total_macs,
        b.msa_pct(),
        b.mlp_pct()
    );
    let r = analyze(&w, &spec)?;
    println!(
        "{:?} (U={}): {} cycles, HUE {:.2}%, {:.2} fps, BRAM {} / {}",
        r.config,
        r.mac_units,
        r.total_cycles,
        100.0 * r.hue,
        r.fps,
        r.bram_peak_bytes,
        r.bram_budget
    );
    Ok(())
}
