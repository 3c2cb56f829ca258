//! Simulate DeiT-T on the default array, export the event trace as CSV and
//! summarize per-engine utilization.

use vita_sim::dataflow::{simulate, AcceleratorSpec, TimingOnly};
use vita_sim::modelzoo::{builtin_model, stage_geometry, ImageDims};

fn main() -> vita_sim::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("deit_t_trace.csv"));
    let stages = stage_geometry(&builtin_model("deit_t")?, &ImageDims::square(224))?;
    let schedule = simulate(&stages, &AcceleratorSpec::default(), &mut TimingOnly)?;
    schedule
        .trace
        .write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    let s = schedule.trace.summary();
    println!(
        "{} events, span {} cycles -> {}",
        s.events,
        s.span,
        path.display()
    );
    for (name, e) in &s.engines {
        println!(
            "  {name:<12} {:>7} events {:>6.1}% busy",
            e.events,
            100.0 * e.utilization
        );
    }
    println!("resource conflicts: {:?}", schedule.trace.find_overlap());
    Ok(())
}
