//! Analytic adapter gradients against central finite differences.

use lora_mgpo::adapters::{LoraLinear, LossKind, MlpModel};
use lora_mgpo::numcore::{normal_fill, Rng};

fn main() -> lora_mgpo::Result<()> {
    let mut rng = Rng::new(1);
    let dims = [6, 10, 3];
    let layers = dims
        .windows(2)
        .map(|w| {
            let w0 = normal_fill(&mut rng, w[1], w[0], 0.0, 0.5)?;
            let a = normal_fill(&mut rng, 2, w[0], 0.0, 0.5)?;
            let b = normal_fill(&mut rng, w[1], 2, 0.0, 0.5)?;
            LoraLinear::from_parts(w0, Some(vec![0.1; w[1]]), a, b, 4.0)
        })
        .collect::<lora_mgpo::Result<Vec<_>>>()?;
    let mut model = MlpModel::new(layers)?;
    let x = normal_fill(&mut rng, 4, 6, 0.0, 1.0)?;
    let t = normal_fill(&mut rng, 4, 3, 0.0, 1.0)?;

    let (_, cache) = model.forward_loss(&x, &t, LossKind::Mse)?;
    let grads = model.backward(&cache)?;
    let theta = model.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, analytic) in grads.flat().enumerate() {
        let bump = |s: f64| {
            let mut values: Vec<f64> = theta.flat().collect();
            values[i] += s;
            let mut offset = 0;
            let tensors = theta
                .tensors()
                .map(|m| {
                    let part = values[offset..offset + m.len()].to_vec();
                    offset += m.len();
                    lora_mgpo::numcore::Matrix::new(m.rows(), m.cols(), part)
                })
                .collect::<lora_mgpo::Result<Vec<_>>>()?;
            theta.with_tensors(tensors)
        };
        model.set_params(&bump(h)?)?;
        let up = model.forward_loss(&x, &t, LossKind::Mse)?.0;
        model.set_params(&bump(-h)?)?;
        let down = model.forward_loss(&x, &t, LossKind::Mse)?.0;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    model.set_params(&theta)?;
    println!("{} parameters, max relative error {worst:.2e}", theta.num_scalars());
    Ok(())
}
