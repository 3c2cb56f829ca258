//! Exhaustive PE-shape search for ViT-B/16 on the ZC7020 budget.

use std::time::Instant;

use vita_sim::dataflow::AcceleratorSpec;
use vita_sim::dse::{search_optimal, ConfigBounds, ResourceBudget};
use vita_sim::modelzoo::{builtin_model, ImageDims};

fn main() -> vita_sim::Result<()> {
    let model = std::env::args().nth(1).unwrap_or_else(|| "vit_b16".into());
    let side: u32 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(256);
    let t0 = Instant::now();
    let r = search_optimal(
        &builtin_model(&model)?,
        &ImageDims::square(side),
        &ResourceBudget::zc7020(),
        &ConfigBounds::default(),
        &AcceleratorSpec::default(),
        None,
    )?;
    println!(
        "{} configurations scored in {:.2?}",
        r.evaluated,
        t0.elapsed()
    );
    println!("rank  config          U   cycles      hue     fps   residual  exact");
    for (i, c) in r.ranked.iter().take(10).enumerate() {
        println!(
            "{:>4}  {:<14} {:>3} {:>10} {:>7.4} {:>7.3} {:>9} {:>6}",
            i + 1,
            format!("{:?}", c.config),
            c.mac_units,
            c.total_cycles,
            c.hue,
            c.fps,
            c.balance_residual,
            c.balance_exact
        );
    }
    Ok(())
}
