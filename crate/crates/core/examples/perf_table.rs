//! Analytical performance of every builtin model next to the published figures,
//! cross-checked against the event simulator.

use vita_sim::dataflow::{simulate, AcceleratorSpec, TimingOnly};
use vita_sim::modelzoo::{build_workload, builtin_model, ImageDims};
use vita_sim::perfmodel::{analyze, reference::REFERENCE_PERF, validate_against_trace};

fn main() -> vita_sim::Result<()> {
    let spec = AcceleratorSpec::default();
    println!(
        "{:<8} {:>5} {:>12} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>9}",
        "model", "image", "cycles", "hue%", "ref", "fps", "ref", "energy", "ref", "sim-delta"
    );
    for r in &REFERENCE_PERF {
        let w = build_workload(&builtin_model(r.model)?, &ImageDims::square(r.image_side))?;
        let rep = analyze(&w, &spec)?;
        let sched = simulate(&w.stages, &spec, &mut TimingOnly)?;
        let delta = match validate_against_trace(&rep, &sched) {
            Ok(d) => format!("{:.4}%", 100.0 * d.total_rel),
            Err(e) => format!("FAIL {e}"),
        };
        println!(
            "{:<8} {:>5} {:>12} {:>7.2} {:>7.1} {:>7.3} {:>7.2} {:>8.4} {:>8.3} {:>9}",
            r.model,
            r.image_side,
            rep.total_cycles,
            100.0 * rep.hue,
            r.hue_pct,
            rep.fps,
            r.fps,
            rep.energy_j,
            r.energy_j,
            delta
        );
    }
    Ok(())
}
