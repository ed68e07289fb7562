//! How the normalizer turns a fixed radius into a step-dependent one.

use lora_mgpo::optimizers::{apn_update, ApnState};

fn main() -> lora_mgpo::Result<()> {
    let rho = 0.05;
    // Large gradients early, small ones late.
    let norms: Vec<f64> = (0..40).map(|t| 5.0 * (-(t as f64) / 8.0).exp() + 0.05).collect();
    let mut apn = ApnState::new(0.9)?;
    let mut fixed = ApnState::fixed_unit();
    println!("step  |g|      g_bar    radius   radius(no APN)");
    for (t, g) in norms.iter().enumerate() {
        apn = apn_update(&apn, *g)?;
        fixed.update(*g)?;
        if t % 5 == 0 {
            println!(
                "{t:>4}  {g:.4}  {:.4}  {:.4}  {:.4}",
                apn.g_bar,
                rho / apn.g_bar,
                rho / fixed.g_bar
            );
        }
    }
    Ok(())
}
