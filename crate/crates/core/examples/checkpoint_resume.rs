//! Stop a session halfway, serialize it, and finish from the text form.

use lora_mgpo::adapters::TensorContainer;
use lora_mgpo::harness::{telemetry_to_csv, ExperimentConfig, Session};
use lora_mgpo::tasks::build_task;

fn main() -> lora_mgpo::Result<()> {
    let (cfg, raw) = ExperimentConfig::from_text(include_str!("../configs/teacher-mgpo.cfg"))?;
    let task = build_task(&cfg.task)?;
    let hash = raw.hash();

    let mut straight = Session::new(&cfg, &task, &hash, 0)?;
    straight.run_to_end()?;

    let mut first = Session::new(&cfg, &task, &hash, 0)?;
    first.run_until(cfg.train.steps / 2)?;
    let text = first.checkpoint()?.to_text();
    println!("checkpoint at step {}: {} bytes", first.step_index(), text.len());
    drop(first);

    let mut second = Session::resume(&cfg, &task, &hash, &TensorContainer::from_text(&text)?)?;
    second.run_to_end()?;
    let same = telemetry_to_csv(straight.rows(), &hash) == telemetry_to_csv(second.rows(), &hash);
    println!("resumed telemetry identical: {same}");
    println!(
        "resumed parameters identical: {}",
        second.model().params().bitwise_eq(&straight.model().params())
    );
    Ok(())
}
