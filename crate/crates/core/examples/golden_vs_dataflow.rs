//! The scheduled int8 datapath reproduces the op-by-op golden model byte for
//! byte; a perturbed accumulator is caught at its first diverging element.

use vita_sim::dataflow::{
    first_divergence, run_model_vita, run_model_vita_with_fault, AcceleratorSpec, Fault,
};
use vita_sim::golden::{golden_model, toy_model, EncoderDims};

fn main() -> vita_sim::Result<()> {
    let dims = EncoderDims {
        tokens: 24,
        dim: 48,
        heads: 4,
        mlp_hidden: 96,
        depth: 3,
    };
    let spec = AcceleratorSpec::with_config(4, 3, 2, 2);
    let (weights, input, _, _) = toy_model(dims, 7)?;
    let golden = golden_model(&weights, &input)?;
    let (ours, schedule) = run_model_vita(&weights, &input, &spec)?;
    println!("{dims:?} on {:?}", spec.config());
    println!(
        "byte-identical: {}",
        first_divergence(&golden, &ours).is_none()
    );
    let s = schedule.trace.summary();
    println!(
        "schedule: {} events over {} cycles, {} weight bytes fetched, legal: {}",
        s.events,
        s.span,
        s.fetched_bytes,
        schedule.trace.find_overlap().is_none()
    );

    let fault = Fault {
        layer: 1,
        token: 5,
        col: 7,
    };
    let (bad, _) = run_model_vita_with_fault(&weights, &input, &spec, Some(fault))?;
    match first_divergence(&golden, &bad) {
        Some((r, c, g, o)) => {
            println!("with {fault:?}: first divergence at ({r}, {c}): golden {g}, dataflow {o}")
        }
        None => println!("with {fault:?}: no divergence"),
    }
    Ok(())
}
