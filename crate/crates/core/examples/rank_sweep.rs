//! Rebound against adapter rank for plain AdamW, written as a sweep table.

use lora_mgpo::harness::{sweep, RawConfig, RunOptions, SweepAxis};

fn main() -> lora_mgpo::Result<()> {
    let raw = RawConfig::parse(include_str!("../configs/lowrank-adamw.cfg"))?;
    let out = std::env::temp_dir().join("lora-mgpo-rank-sweep");
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        ..RunOptions::default()
    };
    let values: Vec<String> = [2, 4, 8, 16, 32].iter().map(|r| r.to_string()).collect();
    let report = sweep(&raw, SweepAxis::Rank, &values, &opts)?;
    for p in &report.points {
        let a = &p.run.aggregate;
        println!(
            "rank {:>2}  rebound {:>7.3} +- {:<7.3} final {:.4}",
            p.value,
            a.mean_of("rebound"),
            a.std_of("rebound"),
            a.mean_of("final_loss")
        );
    }
    println!("table: {}", report.table.display());
    Ok(())
}
