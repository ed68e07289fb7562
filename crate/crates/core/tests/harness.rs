use std::fs;
use std::path::{Path, PathBuf};

use lora_mgpo::harness::{
    compare, read_summary, read_telemetry, run, sweep, ExperimentConfig, RawConfig, RunOptions,
    SeedStatus, SweepAxis, TELEMETRY_COLUMNS,
};
use lora_mgpo::Error;

fn small(kind: &str, extra: &str) -> RawConfig {
    let mut raw = RawConfig::parse(&format!(
        "name = t-{kind}\n\
         task.in_dim = 8\ntask.out_dim = 8\ntask.true_rank = 2\n\
         task.n_train = 64\ntask.n_eval = 64\n\
         model.rank = 4\nmodel.alpha = 4\n\
         optim.kind = {kind}\noptim.lr = 0.02\noptim.rho = 0.05\n\
         train.steps = 60\ntrain.batch_size = 16\ntrain.seeds = 0\n\
         train.smoothing_window = 5\ntrain.sharpness_samples = 4\n"
    ))
    .unwrap();
    for line in extra.lines() {
        let (k, v) = line.split_once('=').unwrap();
        raw.set(k.trim(), v.trim()).unwrap();
    }
    raw
}

fn opts(out: &Path) -> RunOptions {
    RunOptions { out_dir: Some(out.to_path_buf()), ..RunOptions::default() }
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn shipped_configs_all_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let (cfg, raw) = ExperimentConfig::from_text(&read(&path)).unwrap();
        assert_eq!(raw.build().unwrap(), cfg);
        n += 1;
    }
    assert!(n >= 7);
}

#[test]
fn identical_runs_write_identical_telemetry() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = small("mgpo", "");
    let a = run(&raw, &opts(&tmp.path().join("a"))).unwrap();
    let b = run(&raw, &opts(&tmp.path().join("b"))).unwrap();
    let ta = read(a.dir.join("seed-0/telemetry.csv"));
    assert_eq!(ta, read(b.dir.join("seed-0/telemetry.csv")));
    assert_eq!(data_rows(&ta).len(), 61);
    assert_eq!(data_rows(&ta)[0], TELEMETRY_COLUMNS);
    assert_eq!(read(a.dir.join("config.txt")), read(b.dir.join("config.txt")));
}

#[test]
fn zero_rho_mgpo_rows_match_adamw() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = run(&small("adamw", ""), &opts(tmp.path())).unwrap();
    let mut raw = small("mgpo", "");
    raw.set("optim.rho", 0).unwrap();
    let mgpo = run(&raw, &opts(tmp.path())).unwrap();
    let p = read(plain.dir.join("seed-0/telemetry.csv"));
    let m = read(mgpo.dir.join("seed-0/telemetry.csv"));
    // Headers carry different config hashes; the data must agree exactly.
    assert_ne!(p.lines().next(), m.lines().next());
    assert_eq!(data_rows(&p), data_rows(&m));
}

#[test]
fn sam_rows_count_two_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run(&small("sam", ""), &opts(tmp.path())).unwrap();
    let (_, rows) = read_telemetry(&report.dir.join("seed-0/telemetry.csv")).unwrap();
    assert!(rows.iter().all(|r| r.grad_evals == 2));
    assert_eq!(report.seeds[0].summary.grad_evals, 120);
}

#[test]
fn three_seeds_give_three_files_and_aggregate_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = small("mgpo", "train.seeds = 0,1,2\n");
    let mut o = opts(tmp.path());
    o.jobs = 2;
    let report = run(&raw, &o).unwrap();
    for s in 0..3 {
        assert!(report.dir.join(format!("seed-{s}/telemetry.csv")).is_file());
    }
    let summary = read(report.dir.join("summary.csv"));
    let rows = data_rows(&summary);
    assert_eq!(rows.len(), 1 + 3 + 2);
    assert!(rows[4].starts_with("mean,ok=3/3"));
    assert!(rows[5].starts_with("std,"));
    let (hash, seeds) = read_summary(&report.dir.join("summary.csv")).unwrap();
    assert_eq!(hash, report.config_hash);
    assert_eq!(seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(seeds.iter().all(|s| s.status == SeedStatus::Ok && s.eval_loss.is_finite()));
    assert!(report.dir.join("loss.svg").is_file());
}

#[test]
fn jobs_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = small("noise", "train.seeds = 3,4\n");
    let one = run(&raw, &opts(&tmp.path().join("one"))).unwrap();
    let mut o = opts(&tmp.path().join("two"));
    o.jobs = 2;
    let two = run(&raw, &o).unwrap();
    for s in [3, 4] {
        let f = format!("seed-{s}/telemetry.csv");
        assert_eq!(read(one.dir.join(&f)), read(two.dir.join(&f)));
    }
}

#[test]
fn seed_override_replaces_the_list() {
    let tmp = tempfile::tempdir().unwrap();
    let mut o = opts(tmp.path());
    o.seed_override = Some(9);
    let report = run(&small("adamw", "train.seeds = 0,1,2\n"), &o).unwrap();
    assert_eq!(report.seeds.len(), 1);
    assert!(report.dir.join("seed-9").is_dir());
    assert!(!report.dir.join("seed-0").exists());
}

#[test]
fn divergent_seeds_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let mut raw = small("adamw", "");
    raw.set("optim.lr", 1e6).unwrap();
    let report = run(&raw, &opts(tmp.path())).unwrap();
    assert!(report.all_diverged());
    let s = &report.seeds[0].summary;
    assert!(s.stability.rebound.is_nan());
    assert!(s.steps < 60);
    assert_eq!(report.aggregate.seeds_ok, 0);
    let summary = read(report.dir.join("summary.csv"));
    assert!(summary.contains(",diverged,"));
}

#[test]
fn comparing_a_run_with_itself_gives_zero_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&small("mgpo", ""), &opts(tmp.path())).unwrap();
    let out = tmp.path().join("cmp");
    let rows = compare(&[r.dir.clone(), r.dir.clone()], &out, true).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|row| row.rebound_delta == 0.0));
}

#[test]
fn compare_table_is_complete_and_sorted() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["adamw", "mgpo", "sam"]
        .iter()
        .map(|k| run(&small(k, ""), &opts(tmp.path())).unwrap().dir)
        .collect();
    let out = tmp.path().join("cmp");
    let rows = compare(&dirs, &out, true).unwrap();
    assert!(rows.windows(2).all(|w| w[0].rebound <= w[1].rebound));
    let csv = read(out.join("compare.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    let width = lines[0].split(',').count();
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), width);
        assert!(cells.iter().all(|c| !c.is_empty() && *c != "NaN"), "{l}");
    }
    check_svg(&read(out.join("compare.svg")), 3);
}

fn check_svg(text: &str, series: usize) {
    let doc = roxmltree::Document::parse(text).unwrap();
    let allowed = ["svg", "g", "rect", "line", "polyline", "text"];
    for node in doc.descendants().filter(|n| n.is_element()) {
        assert!(allowed.contains(&node.tag_name().name()), "unexpected <{}>", node.tag_name().name());
    }
    let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(lines, series);
}

#[test]
fn run_plot_is_well_formed_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&small("mgpo", "train.seeds = 0,1\n"), &opts(tmp.path())).unwrap();
    check_svg(&read(r.dir.join("loss.svg")), 2);
}

#[test]
fn no_plot_writes_no_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let mut o = opts(tmp.path());
    o.plot = false;
    let r = run(&small("mgpo", ""), &o).unwrap();
    assert!(!r.dir.join("loss.svg").exists());
}

#[test]
fn disjoint_step_ranges_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&small("adamw", ""), &opts(tmp.path())).unwrap();
    let b = run(&small("sam", ""), &opts(tmp.path())).unwrap();
    let path = b.dir.join("seed-0/telemetry.csv");
    let text = read(&path);
    let shifted: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i < 2 {
                return l.to_string();
            }
            let (step, rest) = l.split_once(',').unwrap();
            format!("{},{rest}", step.parse::<usize>().unwrap() + 1000)
        })
        .collect();
    fs::write(&path, shifted.join("\n") + "\n").unwrap();
    let err = compare(&[a.dir, b.dir], &tmp.path().join("cmp"), false).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");
}

#[test]
fn compare_needs_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&small("adamw", ""), &opts(tmp.path())).unwrap();
    assert!(compare(&[r.dir], tmp.path(), false).is_err());
}

#[test]
fn rank_sweep_writes_one_run_per_value_and_one_table() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = RawConfig::parse(
        "name = rs\ntask.in_dim = 32\ntask.out_dim = 32\ntask.n_train = 64\ntask.n_eval = 64\n\
         optim.kind = adamw\noptim.lr = 0.01\ntrain.steps = 30\ntrain.seeds = 0\ntrain.sharpness_samples = 2\n",
    )
    .unwrap();
    let values: Vec<String> = ["2", "4", "8", "16", "32"].iter().map(|s| s.to_string()).collect();
    let report = sweep(&raw, SweepAxis::Rank, &values, &opts(tmp.path())).unwrap();
    assert_eq!(report.points.len(), 5);
    for v in &values {
        assert!(tmp.path().join(format!("rs-rank{v}/summary.csv")).is_file());
    }
    let table = read(&report.table);
    assert_eq!(table.lines().count(), 6);
    assert!(table.starts_with("rank,run,"));
    assert!(report.table.with_extension("svg").is_file());
}

#[test]
fn sweeps_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = small("mgpo", "");
    let values = vec!["0.01".to_string(), "0.03".to_string()];
    let a = sweep(&raw, SweepAxis::Lr, &values, &opts(&tmp.path().join("a"))).unwrap();
    let mut o = opts(&tmp.path().join("b"));
    o.jobs = 2;
    let b = sweep(&raw, SweepAxis::Lr, &values, &o).unwrap();
    assert_eq!(read(&a.table), read(&b.table));
}

#[test]
fn bad_sweep_values_are_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = small("mgpo", "");
    for (axis, bad) in [(SweepAxis::Lr, "0"), (SweepAxis::Lr, "-0.1"), (SweepAxis::Rank, "0"), (SweepAxis::Rank, "1.5")] {
        let values = vec!["0.01".to_string(), bad.to_string()];
        let values = if axis == SweepAxis::Rank { vec!["2".to_string(), bad.to_string()] } else { values };
        let err = sweep(&raw, axis, &values, &opts(tmp.path())).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn checkpointed_run_resumes_to_the_same_telemetry() {
    let tmp = tempfile::tempdir().unwrap();
    let full = run(&small("mgpo", "train.checkpoint_every = 20\n"), &opts(&tmp.path().join("full"))).unwrap();

    // Interrupt a copy by hand: train 40 of 60 steps, then resume.
    let mut short = small("mgpo", "train.checkpoint_every = 20\n");
    short.set("train.steps", 40).unwrap();
    let partial_root = tmp.path().join("partial");
    let partial = run(&short, &opts(&partial_root)).unwrap();
    let ckpt = partial.dir.join("seed-0/checkpoint.txt");
    assert!(ckpt.is_file());
    // A checkpoint from a different config is refused.
    let mut o = opts(&partial_root);
    o.resume = true;
    let err = run(&small("mgpo", "train.checkpoint_every = 20\n"), &o).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");

    // Same config, stopped at step 40 via a checkpoint taken from the full run's session.
    let raw = small("mgpo", "train.checkpoint_every = 20\n");
    let cfg = raw.build().unwrap();
    let task = lora_mgpo::tasks::build_task(&cfg.task).unwrap();
    let mut s = lora_mgpo::harness::Session::new(&cfg, &task, &raw.hash(), 0).unwrap();
    s.run_until(40).unwrap();
    let resumed_root = tmp.path().join("resumed");
    let seed_dir = resumed_root.join(&cfg.name).join("seed-0");
    fs::create_dir_all(&seed_dir).unwrap();
    s.checkpoint().unwrap().save(&seed_dir.join("checkpoint.txt")).unwrap();
    let mut o = opts(&resumed_root);
    o.resume = true;
    let resumed = run(&raw, &o).unwrap();
    assert_eq!(
        read(full.dir.join("seed-0/telemetry.csv")),
        read(resumed.dir.join("seed-0/telemetry.csv"))
    );
}
