//! DRAM demand per streamed phase and the on-chip buffer plan for ViT-B/16.

use vita_sim::dataflow::{plan_buffers, AcceleratorSpec};
use vita_sim::modelzoo::{build_workload, builtin_model, ImageDims};
use vita_sim::perfmodel::analyze;

fn main() -> vita_sim::Result<()> {
    let spec = AcceleratorSpec::default();
    let w = build_workload(&builtin_model("vit_b16")?, &ImageDims::square(256))?;
    let r = analyze(&w, &spec)?;
    let limit = spec.dram_bytes_per_cycle();
    println!("DRAM limit {limit} B/cycle");
    println!(
        "  average {:.3} B/cycle over {} bytes",
        r.avg_bytes_per_cycle, r.bandwidth.fetched_bytes
    );
    for (phase, demand) in &r.bandwidth.per_phase {
        println!("  {phase:<18} {demand:.3} B/cycle");
    }
    println!("  stall cycles {}", r.phases.stall);

    let plan = plan_buffers(&w.stages, &spec);
    println!("\nBRAM budget {} bytes, peak {}", plan.budget, plan.peak());
    for st in &plan.stages {
        println!("stage {} ({} MLP token passes)", st.stage, st.mlp_passes);
        for ph in &st.phases {
            println!("  {} phase: {} bytes", ph.phase, ph.total());
            for b in &ph.buffers {
                println!("    {:<22} {:>8}", b.name, b.bytes);
            }
        }
    }
    Ok(())
}
