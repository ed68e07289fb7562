//! Orchestration: multi-seed runs, run comparison and grid sweeps.
//!
//! A run writes into `<out>/<name>/`:
//!
//! ```text
//! config.txt              canonical config (every key, defaults filled)
//! summary.csv             one row per seed, then mean and std rows
//! loss.svg                smoothed loss per seed (with plotting on)
//! seed-<s>/telemetry.csv  one row per step
//! seed-<s>/checkpoint.txt latest checkpoint (when checkpointing is on)
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, RawConfig};
use super::plot::LinePlot;
use super::session::Session;
use super::telemetry::{
    aggregate, read_summary, read_telemetry, summary_to_csv, telemetry_to_csv, Aggregate,
    SeedStatus, SeedSummary, TelemetryRow,
};
use crate::adapters::TensorContainer;
use crate::error::{Error, Result};
use crate::metrics::{smooth, LossCurve};
use crate::tasks::{build_task, TaskData};

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Worker threads for seeds and sweep points.
    pub jobs: usize,
    /// Replaces the config's seed list with this single seed.
    pub seed_override: Option<u64>,
    pub plot: bool,
    /// Continue each seed from its checkpoint when one exists.
    pub resume: bool,
    /// Replaces `output.dir`.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            seed_override: None,
            plot: true,
            resume: false,
            out_dir: None,
        }
    }
}

/// Rows and summary of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRecord {
    pub summary: SeedSummary,
    pub rows: Vec<TelemetryRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub dir: PathBuf,
    pub config_hash: String,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Aggregate,
    pub wall_ms: f64,
}

impl RunReport {
    pub fn all_diverged(&self) -> bool {
        self.seeds
            .iter()
            .all(|s| s.summary.status == SeedStatus::Diverged)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and a rename so a crash never leaves a
/// truncated checkpoint behind.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp, text)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))
}

fn run_seed(
    cfg: &ExperimentConfig,
    task: &TaskData,
    hash: &str,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<SeedRecord> {
    let seed_dir = dir.join(format!("seed-{seed}"));
    let ckpt_path = seed_dir.join("checkpoint.txt");
    let mut session = if resume && ckpt_path.exists() {
        let c = TensorContainer::load(&ckpt_path)?;
        let s = Session::resume(cfg, task, hash, &c)?;
        if s.seed() != seed {
            return Err(Error::Format(format!("{} holds seed {}", ckpt_path.display(), s.seed())));
        }
        log::info!("{}: seed {seed} resumed at step {}", cfg.name, s.step_index());
        s
    } else {
        Session::new(cfg, task, hash, seed)?
    };
    let every = cfg.train.checkpoint_every;
    while !session.is_done() {
        session.step()?;
        if every > 0 && session.step_index() % every == 0 && !session.is_done() {
            write_atomic(&ckpt_path, &session.checkpoint()?.to_text())?;
        }
    }
    if every > 0 {
        write_atomic(&ckpt_path, &session.checkpoint()?.to_text())?;
    }
    write(&seed_dir.join("telemetry.csv"), &telemetry_to_csv(session.rows(), hash))?;
    let summary = session.summary()?;
    log::info!(
        "{}: seed {seed} {} after {} steps, rebound {:.4}",
        cfg.name,
        summary.status.name(),
        summary.steps,
        summary.stability.rebound
    );
    Ok(SeedRecord {
        summary,
        rows: session.rows().to_vec(),
    })
}

fn smoothed_points(rows: &[TelemetryRow], window: usize) -> Vec<(f64, f64)> {
    let finite: Vec<&TelemetryRow> = rows.iter().filter(|r| r.loss.is_finite()).collect();
    let Ok(curve) = LossCurve::new(finite.iter().map(|r| r.loss).collect()) else {
        return Vec::new();
    };
    let Ok(s) = smooth(&curve, window.clamp(1, curve.len())) else {
        return Vec::new();
    };
    finite
        .iter()
        .zip(s.losses())
        .map(|(r, &l)| (r.step as f64, l))
        .collect()
}

fn run_in(cfg: &ExperimentConfig, raw: &RawConfig, task: &TaskData, seeds: &[u64], dir: &Path, opts: &RunOptions, pool: &rayon::ThreadPool) -> Result<RunReport> {
    let hash = raw.hash();
    let started = Instant::now();
    write(&dir.join("config.txt"), &raw.canonical_text())?;
    let seeds: Vec<SeedRecord> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(cfg, task, &hash, s, dir, opts.resume))
            .collect::<Result<Vec<_>>>()
    })?;
    let summaries: Vec<SeedSummary> = seeds.iter().map(|s| s.summary).collect();
    write(&dir.join("summary.csv"), &summary_to_csv(&summaries, &hash))?;
    if opts.plot {
        let mut plot = LinePlot::new(
            &format!("{} ({})", cfg.name, cfg.optim.kind.name()),
            "step",
            "smoothed training loss",
        );
        plot.log_y = true;
        for s in &seeds {
            plot.push(
                &format!("seed {}", s.summary.seed),
                smoothed_points(&s.rows, cfg.train.smoothing_window),
            );
        }
        write(&dir.join("loss.svg"), &plot.to_svg())?;
    }
    Ok(RunReport {
        name: cfg.name.clone(),
        dir: dir.to_path_buf(),
        config_hash: hash,
        aggregate: aggregate(&summaries),
        seeds,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn seeds_for(cfg: &ExperimentConfig, opts: &RunOptions) -> Vec<u64> {
    match opts.seed_override {
        Some(s) => vec![s],
        None => cfg.train.seeds.clone(),
    }
}

fn out_root(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

/// Trains every seed of `raw` and writes the run directory.
pub fn run(raw: &RawConfig, opts: &RunOptions) -> Result<RunReport> {
    let cfg = raw.build()?;
    let task = build_task(&cfg.task)?;
    let dir = out_root(&cfg, opts).join(&cfg.name);
    run_in(&cfg, raw, &task, &seeds_for(&cfg, opts), &dir, opts, &pool(opts.jobs)?)
}

/// One line of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub dir: PathBuf,
    pub seeds_ok: usize,
    pub rebound: f64,
    pub rebound_raw: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    pub steps_to_best: f64,
    pub sharpness: f64,
    pub eval_loss: f64,
    /// `rebound` minus the rebound of the first run given.
    pub rebound_delta: f64,
}

struct LoadedRun {
    label: String,
    window: usize,
    agg: Aggregate,
    seeds: Vec<Vec<TelemetryRow>>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let cfg_path = dir.join("config.txt");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let raw = RawConfig::parse(&text)?;
    let cfg = raw.build()?;
    let (_, summaries) = read_summary(&dir.join("summary.csv"))?;
    let seeds = summaries
        .iter()
        .filter(|s| s.status == SeedStatus::Ok)
        .map(|s| read_telemetry(&dir.join(format!("seed-{}", s.seed)).join("telemetry.csv")).map(|t| t.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun {
        label: cfg.name,
        window: cfg.train.smoothing_window,
        agg: aggregate(&summaries),
        seeds,
    })
}

/// Per-step mean loss over seeds, on the steps every seed recorded.
fn mean_curve(seeds: &[Vec<TelemetryRow>]) -> Vec<(usize, f64)> {
    let Some(first) = seeds.first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter_map(|r| {
            let vals: Vec<f64> = seeds
                .iter()
                .filter_map(|s| s.iter().find(|x| x.step == r.step).map(|x| x.loss))
                .collect();
            (vals.len() == seeds.len() && vals.iter().all(|v| v.is_finite()))
                .then(|| (r.step, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// Compares completed runs: aligned mean-curve plot and a table sorted by
/// rebound, written to `out/compare.csv` and `out/compare.svg`.
pub fn compare(dirs: &[PathBuf], out: &Path, plot: bool) -> Result<Vec<CompareRow>> {
    if dirs.len() < 2 {
        return Err(Error::usage("compare needs at least two run directories"));
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let curves: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| mean_curve(&r.seeds)).collect();
    let lo = curves.iter().map(|c| c.first().map_or(usize::MAX, |p| p.0)).max().unwrap();
    let hi = curves.iter().map(|c| c.last().map_or(0, |p| p.0)).min().unwrap();
    if curves.iter().any(Vec::is_empty) || lo > hi {
        return Err(Error::usage("runs have disjoint step ranges"));
    }

    let base = runs[0].agg.mean_of("rebound");
    let mut rows: Vec<CompareRow> = runs
        .iter()
        .zip(dirs)
        .map(|(r, d)| CompareRow {
            label: r.label.clone(),
            dir: d.clone(),
            seeds_ok: r.agg.seeds_ok,
            rebound: r.agg.mean_of("rebound"),
            rebound_raw: r.agg.mean_of("rebound_raw"),
            final_loss: r.agg.mean_of("final_loss"),
            best_loss: r.agg.mean_of("best_loss"),
            steps_to_best: r.agg.mean_of("steps_to_best"),
            sharpness: r.agg.mean_of("sharpness"),
            eval_loss: r.agg.mean_of("eval_loss"),
            rebound_delta: r.agg.mean_of("rebound") - base,
        })
        .collect();
    rows.sort_by(|a, b| a.rebound.total_cmp(&b.rebound));

    let mut csv = String::from(
        "label,seeds_ok,rebound,rebound_raw,final_loss,best_loss,steps_to_best,sharpness,eval_loss,rebound_delta,dir\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.seeds_ok,
            r.rebound,
            r.rebound_raw,
            r.final_loss,
            r.best_loss,
            r.steps_to_best,
            r.sharpness,
            r.eval_loss,
            r.rebound_delta,
            r.dir.display()
        ));
    }
    write(&out.join("compare.csv"), &csv)?;

    if plot {
        let mut p = LinePlot::new("mean smoothed training loss", "step", "loss");
        p.log_y = true;
        for (run, curve) in runs.iter().zip(&curves) {
            let aligned: Vec<(usize, f64)> =
                curve.iter().copied().filter(|(s, _)| (lo..=hi).contains(s)).collect();
            let Ok(lc) = LossCurve::new(aligned.iter().map(|p| p.1).collect()) else {
                continue;
            };
            let smoothed = smooth(&lc, run.window.clamp(1, lc.len()))?;
            p.push(
                &run.label,
                aligned
                    .iter()
                    .zip(smoothed.losses())
                    .map(|(&(s, _), &l)| (s as f64, l))
                    .collect(),
            );
        }
        write(&out.join("compare.svg"), &p.to_svg())?;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Rank,
    Lr,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rank => "rank",
            SweepAxis::Lr => "lr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rank" => Some(SweepAxis::Rank),
            "lr" => Some(SweepAxis::Lr),
            _ => None,
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepAxis::Rank => "model.rank",
            SweepAxis::Lr => "optim.lr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub run: RunReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub table: PathBuf,
    pub points: Vec<SweepPoint>,
}

/// Runs the config once per axis value. Every value is validated before
/// any training starts; a point whose seeds all diverge is kept in the
/// table with NaN metrics.
pub fn sweep(raw: &RawConfig, axis: SweepAxis, values: &[String], opts: &RunOptions) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config(axis.key(), "sweep needs at least one value"));
    }
    let base = raw.build()?;
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        match axis {
            SweepAxis::Rank => {
                v.parse::<usize>()
                    .ok()
                    .filter(|&r| r >= 1)
                    .ok_or_else(|| Error::config("model.rank", format!("sweep value `{v}` is not a positive integer")))?;
            }
            SweepAxis::Lr => {
                v.parse::<f64>()
                    .ok()
                    .filter(|&lr| lr > 0.0 && lr.is_finite())
                    .ok_or_else(|| Error::config("optim.lr", format!("sweep value `{v}` is not a positive number")))?;
            }
        }
        let mut point = raw.clone();
        point.set(axis.key(), v)?;
        point.set("name", format!("{}-{}{}", base.name, axis.name(), v))?;
        let cfg = point.build()?;
        configs.push((point, cfg));
    }

    let task = build_task(&base.task)?;
    let root = out_root(&base, opts);
    let seeds = seeds_for(&base, opts);
    let pool = pool(opts.jobs)?;
    let reports: Vec<RunReport> = pool.install(|| {
        configs
            .par_iter()
            .map(|(raw, cfg)| {
                let point_opts = RunOptions { jobs: 1, ..opts.clone() };
                run_in(cfg, raw, &task, &seeds, &root.join(&cfg.name), &point_opts, &pool)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut csv = format!(
        "{},run,seeds_ok,rebound_mean,rebound_std,final_loss_mean,final_loss_std,eval_loss_mean,sharpness_mean\n",
        axis.name()
    );
    for (v, r) in values.iter().zip(&reports) {
        let a = &r.aggregate;
        csv.push_str(&format!(
            "{v},{},{},{},{},{},{},{},{}\n",
            r.name,
            a.seeds_ok,
            a.mean_of("rebound"),
            a.std_of("rebound"),
            a.mean_of("final_loss"),
            a.std_of("final_loss"),
            a.mean_of("eval_loss"),
            a.mean_of("sharpness")
        ));
    }
    let table = root.join(format!("{}-sweep-{}.csv", base.name, axis.name()));
    write(&table, &csv)?;
    if opts.plot {
        let mut p = LinePlot::new(
            &format!("{}: rebound vs {}", base.name, axis.name()),
            axis.name(),
            "mean rebound",
        );
        p.log_x = true;
        p.push(
            "rebound",
            values
                .iter()
                .zip(&reports)
                .filter_map(|(v, r)| v.parse::<f64>().ok().map(|x| (x, r.aggregate.mean_of("rebound"))))
                .collect(),
        );
        write(&table.with_extension("svg"), &p.to_svg())?;
    }
    Ok(SweepReport {
        axis,
        table,
        points: values
            .iter()
            .cloned()
            .zip(reports)
            .map(|(value, run)| SweepPoint { value, run })
            .collect(),
    })
}
