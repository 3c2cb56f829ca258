//! Save a quantized toy model as a weight bundle, reload it and run it.

use vita_sim::golden::{golden_model, load_bundle, save_bundle, toy_model, EncoderDims};

fn main() -> vita_sim::Result<()> {
    let dims = EncoderDims {
        tokens: 8,
        dim: 16,
        heads: 2,
        mlp_hidden: 32,
        depth: 1,
    };
    let (weights, input, _, _) = toy_model(dims, 11)?;
    let dir = std::env::temp_dir().join("vita_sim_bundle");
    let manifest = save_bundle(&dir, &weights, Some(&input))?;
    let (loaded, x) = load_bundle(&manifest)?;
    let x = x.expect("bundle stores the input");
    let same = golden_model(&loaded, &x)?.data() == golden_model(&weights, &input)?.data();
    println!(
        "bundle at {}: reload reproduces output = {same}",
        manifest.display()
    );
    Ok(())
}
