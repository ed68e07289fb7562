//! MGPO against plain AdamW on the rank-32 low-rank recovery preset.

use lora_mgpo::harness::{build_model, ExperimentConfig, RawConfig};
use lora_mgpo::metrics::{curve_summary, LossCurve};
use lora_mgpo::numcore::Rng;
use lora_mgpo::optimizers::Optimizer;
use lora_mgpo::tasks::{build_task, BatchStream};

fn train(kind: &str) -> lora_mgpo::Result<()> {
    let mut raw = RawConfig::parse(include_str!("../configs/lowrank-mgpo.cfg"))?;
    raw.set("optim.kind", kind)?;
    let cfg: ExperimentConfig = raw.build()?;
    let task = build_task(&cfg.task)?;
    let mut model = build_model(&cfg, &task, &mut Rng::new(0))?;
    let mut opt = Optimizer::new(cfg.optim.method(), &model, cfg.optim.hyper(), cfg.optim.apn_beta, 0)?;
    let mut stream = BatchStream::new(task.train.len(), cfg.train.batch_size, 1)?;
    let mut losses = Vec::with_capacity(cfg.train.steps);
    for _ in 0..cfg.train.steps {
        losses.push(opt.step(&mut model, &stream.next_batch(&task.train)?)?.loss);
    }
    let s = curve_summary(&LossCurve::new(losses)?, cfg.train.smoothing_window)?;
    println!(
        "{kind:<7} rebound {:>7.3}  final {:.4}  best {:.4}  eval {:.4}  g_bar {:.4}",
        s.rebound,
        s.final_loss,
        s.best_loss,
        task.eval.loss_of(&model)?,
        opt.apn().g_bar
    );
    Ok(())
}

fn main() -> lora_mgpo::Result<()> {
    for kind in ["adamw", "mgpo", "mgpo-no-apn"] {
        train(kind)?;
    }
    Ok(())
}
