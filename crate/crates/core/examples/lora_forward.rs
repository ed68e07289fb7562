//! A single adapter layer: factored and merged forward passes agree, and a
//! fresh adapter leaves the base output untouched.

use lora_mgpo::adapters::{lora_init, merge_weights};
use lora_mgpo::numcore::{normal_fill, Rng};

fn main() -> lora_mgpo::Result<()> {
    let mut rng = Rng::new(7);
    let layer = lora_init(&mut rng, 16, 32, 4, 8.0)?;
    println!(
        "layer {}x{} rank {} alpha {} scaling {}",
        layer.out_dim(),
        layer.in_dim(),
        layer.rank(),
        layer.alpha(),
        layer.scaling()
    );

    let x = normal_fill(&mut rng, 5, 32, 0.0, 1.0)?;
    let y = layer.forward(&x)?;
    println!("fresh adapter equals base: {}", y.bitwise_eq(&layer.forward_base(&x)?));

    // Give B some mass so the update is visible.
    let b = normal_fill(&mut rng, 16, 4, 0.0, 0.1)?;
    let trained = lora_mgpo::adapters::LoraLinear::from_parts(
        layer.w0().clone(),
        None,
        layer.a().clone(),
        b,
        layer.alpha(),
    )?;
    let factored = trained.forward(&x)?;
    let merged = x.matmul_t(&merge_weights(&trained))?;
    println!("max |factored - merged| = {:.3e}", factored.max_abs_diff(&merged));
    println!(
        "|delta W| = {:.4}",
        merge_weights(&trained).sub(trained.w0())?.frobenius_norm()
    );
    Ok(())
}
