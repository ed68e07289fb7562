//! Run the four low-rank configs and print the comparison table.

use std::path::PathBuf;

use lora_mgpo::harness::{compare, run, RawConfig, RunOptions};

fn main() -> lora_mgpo::Result<()> {
    let out = std::env::temp_dir().join("lora-mgpo-compare");
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        ..RunOptions::default()
    };
    let configs = [
        include_str!("../configs/lowrank-adamw.cfg"),
        include_str!("../configs/lowrank-mgpo.cfg"),
        include_str!("../configs/lowrank-sam.cfg"),
        include_str!("../configs/lowrank-noise.cfg"),
    ];
    let mut dirs: Vec<PathBuf> = Vec::new();
    for text in configs {
        dirs.push(run(&RawConfig::parse(text)?, &opts)?.dir);
    }
    let rows = compare(&dirs, &out.join("compare"), true)?;
    println!("{:<16} {:>9} {:>9} {:>9} {:>10}", "run", "rebound", "final", "eval", "sharpness");
    for r in rows {
        println!(
            "{:<16} {:>9.3} {:>9.4} {:>9.4} {:>10.2e}",
            r.label, r.rebound, r.final_loss, r.eval_loss, r.sharpness
        );
    }
    println!("plots and table in {}", out.join("compare").display());
    Ok(())
}
