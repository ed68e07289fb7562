//! Backward passes and wall time per step for each perturbation rule.

use std::time::Instant;

use lora_mgpo::harness::{build_model, RawConfig};
use lora_mgpo::numcore::Rng;
use lora_mgpo::optimizers::Optimizer;
use lora_mgpo::tasks::{build_task, BatchStream};

fn main() -> lora_mgpo::Result<()> {
    let base = RawConfig::parse(include_str!("../configs/lowrank-mgpo.cfg"))?;
    let steps = 500;
    let mut reference = None;
    for kind in ["adamw", "mgpo", "sam", "noise"] {
        let mut raw = base.clone();
        raw.set("optim.kind", kind)?;
        let cfg = raw.build()?;
        let task = build_task(&cfg.task)?;
        let mut model = build_model(&cfg, &task, &mut Rng::new(0))?;
        let mut opt = Optimizer::new(cfg.optim.method(), &model, cfg.optim.hyper(), 0.9, 0)?;
        let mut stream = BatchStream::new(task.train.len(), cfg.train.batch_size, 0)?;
        let batches = (0..steps)
            .map(|_| stream.next_batch(&task.train))
            .collect::<lora_mgpo::Result<Vec<_>>>()?;
        let started = Instant::now();
        for b in &batches {
            opt.step(&mut model, b)?;
        }
        let per_step = started.elapsed().as_secs_f64() / steps as f64;
        let base_time = *reference.get_or_insert(per_step);
        println!(
            "{kind:<6} {:.2} grads/step  {:>7.1} us/step  x{:.2} of adamw",
            model.grad_evals() as f64 / steps as f64,
            per_step * 1e6,
            per_step / base_time
        );
    }
    Ok(())
}
