//! Adapting a random frozen two-layer network to the two-moons classes.

use lora_mgpo::harness::{ExperimentConfig, Session};
use lora_mgpo::tasks::build_task;

fn main() -> lora_mgpo::Result<()> {
    let (cfg, raw) = ExperimentConfig::from_text(include_str!("../configs/two-moons-mgpo.cfg"))?;
    let task = build_task(&cfg.task)?;
    let mut session = Session::new(&cfg, &task, &raw.hash(), 0)?;
    println!("before: eval accuracy {:.3}", task.eval.accuracy_of(session.model())?);
    while !session.is_done() {
        let row = *session.step()?;
        if row.step % 300 == 0 {
            println!("step {:>4}  loss {:.4}  lr {:.5}", row.step, row.loss, row.lr);
        }
    }
    println!("after:  eval accuracy {:.3}", task.eval.accuracy_of(session.model())?);
    let s = session.summary()?;
    println!("rebound {:.4}  sharpness {:.2e}", s.stability.rebound, s.stability.sharpness);
    Ok(())
}
