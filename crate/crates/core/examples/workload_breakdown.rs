//! MAC split and memory footprint of each builtin model next to the published split.

use vita_sim::modelzoo::{
    build_workload, builtin_model, mac_breakdown, memory_footprint, ImageDims,
};
use vita_sim::perfmodel::reference::REFERENCE_MAC_SPLIT;

fn main() -> vita_sim::Result<()> {
    println!(
        "{:<8} {:>5} {:>6} {:>16} {:>14} {:>14} {:>14}",
        "model", "image", "N", "total MACs", "MSA% (ref)", "MLP% (ref)", "merge% (ref)"
    );
    for r in &REFERENCE_MAC_SPLIT {
        let model = builtin_model(r.model)?;
        let image = ImageDims::square(r.image_side);
        let w = build_workload(&model, &image)?;
        let b = mac_breakdown(&w)?;
        println!(
            "{:<8} {:>5} {:>6} {:>16} {:>6.2} ({:>4.1}) {:>6.2} ({:>4.1}) {:>6.2} ({:>4.1})",
            r.model,
            r.image_side,
            w.stages[0].tokens,
            b.total_macs,
            b.msa_pct(),
            r.msa_pct,
            b.mlp_pct(),
            r.mlp_pct,
            b.patch_merge_pct(),
            r.patch_merge_pct
        );
    }

    let model = builtin_model("vit_b16")?;
    let fp = memory_footprint(&model, &ImageDims::square(256))?;
    let s = fp.first();
    println!("\nViT-B/16 @ 256x256, one encoder layer (int8 bytes):");
    for (name, bytes) in [
        ("input", s.input),
        ("W_Q", s.w_q),
        ("W_K", s.w_k),
        ("W_V", s.w_v),
        ("W_msa", s.w_msa),
        ("W_fc1", s.w_fc1),
        ("W_fc2", s.w_fc2),
    ] {
        println!("  {name:<6} {bytes:>9} B = {:>5} KB", bytes / 1024);
    }
    println!("  all layers' weights: {} B", fp.total_weight_bytes(&model));
    Ok(())
}
