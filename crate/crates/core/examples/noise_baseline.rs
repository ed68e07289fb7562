//! Random-direction perturbation: alignment with the momentum stays near zero,
//! while MGPO's perturbation is the momentum direction itself.

use lora_mgpo::harness::{build_model, RawConfig};
use lora_mgpo::numcore::Rng;
use lora_mgpo::optimizers::Optimizer;
use lora_mgpo::tasks::{build_task, BatchStream};

fn main() -> lora_mgpo::Result<()> {
    for kind in ["noise", "mgpo"] {
        let mut raw = RawConfig::parse(include_str!("../configs/lowrank-noise.cfg"))?;
        raw.set("optim.kind", kind)?;
        let cfg = raw.build()?;
        let task = build_task(&cfg.task)?;
        let mut model = build_model(&cfg, &task, &mut Rng::new(2))?;
        let mut opt = Optimizer::new(cfg.optim.method(), &model, cfg.optim.hyper(), 0.9, 2)?;
        let mut stream = BatchStream::new(task.train.len(), cfg.train.batch_size, 2)?;
        let mut cosines = Vec::new();
        for _ in 0..1000 {
            let r = opt.step(&mut model, &stream.next_batch(&task.train)?)?;
            cosines.extend(r.momentum_cosine);
        }
        let n = cosines.len() as f64;
        println!(
            "{kind:<6} mean cosine {:+.4}  mean |cosine| {:.4}  over {} steps",
            cosines.iter().sum::<f64>() / n,
            cosines.iter().map(|c| c.abs()).sum::<f64>() / n,
            cosines.len()
        );
    }
    Ok(())
}
