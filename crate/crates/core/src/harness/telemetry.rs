//! Per-step telemetry and per-run summary tables.
//!
//! Both files start with a `#` comment line naming the schema version and
//! the config hash, followed by a fixed header row. Floats are written in
//! shortest round-trip form, so reading a file back is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::StabilitySummary;

pub const TELEMETRY_VERSION: u32 = 1;
pub const TELEMETRY_COLUMNS: &str = "step,loss,grad_norm,g_bar,perturb_norm,grad_evals,lr";
pub const SUMMARY_COLUMNS: &str = "seed,status,steps,rebound,rebound_raw,final_loss,best_loss,\
steps_to_best,sharpness,eval_loss,grad_evals,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TelemetryRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub g_bar: f64,
    pub perturb_norm: f64,
    pub grad_evals: u64,
    pub lr: f64,
}

impl TelemetryRow {
    pub fn bitwise_eq(&self, other: &TelemetryRow) -> bool {
        self.step == other.step
            && self.grad_evals == other.grad_evals
            && [self.loss, self.grad_norm, self.g_bar, self.perturb_norm, self.lr]
                .iter()
                .zip([other.loss, other.grad_norm, other.g_bar, other.perturb_norm, other.lr])
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn header(kind: &str, hash: &str) -> String {
    format!("# lora-mgpo {kind} v{TELEMETRY_VERSION} config_hash={hash}\n")
}

fn check_header<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    kind: &str,
    columns: &str,
) -> Result<String> {
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("empty {kind} file")))?;
    let prefix = format!("# lora-mgpo {kind} v{TELEMETRY_VERSION} config_hash=");
    let hash = first
        .strip_prefix(&prefix)
        .ok_or_else(|| Error::Format(format!("unrecognized {kind} header `{first}`")))?;
    if lines.next() != Some(columns) {
        return Err(Error::Format(format!("{kind} column row does not match `{columns}`")));
    }
    Ok(hash.to_string())
}

fn field<T: std::str::FromStr>(s: Option<&str>, name: &str, line: usize) -> Result<T> {
    let s = s.ok_or_else(|| Error::Format(format!("line {line}: missing `{name}`")))?;
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad `{name}` value `{s}`")))
}

pub fn telemetry_to_csv(rows: &[TelemetryRow], hash: &str) -> String {
    let mut out = header("telemetry", hash);
    out.push_str(TELEMETRY_COLUMNS);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.loss, r.grad_norm, r.g_bar, r.perturb_norm, r.grad_evals, r.lr
        )
        .unwrap();
    }
    out
}

/// Parses a telemetry file, returning the config hash and the rows.
pub fn telemetry_from_csv(text: &str) -> Result<(String, Vec<TelemetryRow>)> {
    let mut lines = text.lines();
    let hash = check_header(&mut lines, "telemetry", TELEMETRY_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        let mut f = line.split(',');
        let row = TelemetryRow {
            step: field(f.next(), "step", n)?,
            loss: field(f.next(), "loss", n)?,
            grad_norm: field(f.next(), "grad_norm", n)?,
            g_bar: field(f.next(), "g_bar", n)?,
            perturb_norm: field(f.next(), "perturb_norm", n)?,
            grad_evals: field(f.next(), "grad_evals", n)?,
            lr: field(f.next(), "lr", n)?,
        };
        if f.next().is_some() {
            return Err(Error::Format(format!("line {n}: too many fields")));
        }
        rows.push(row);
    }
    Ok((hash, rows))
}

pub fn read_telemetry(path: &Path) -> Result<(String, Vec<TelemetryRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    telemetry_from_csv(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStatus {
    Ok,
    Diverged,
}

impl SeedStatus {
    pub fn name(self) -> &'static str {
        match self {
            SeedStatus::Ok => "ok",
            SeedStatus::Diverged => "diverged",
        }
    }
}

/// One summary row. Diverged seeds carry NaN in the metric columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: SeedStatus,
    pub steps: usize,
    pub stability: StabilitySummary,
    pub eval_loss: f64,
    pub grad_evals: u64,
    pub wall_ms: f64,
}

/// Mean and sample standard deviation of every metric over the `ok` seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub seeds_ok: usize,
    pub mean: [f64; 9],
    pub std: [f64; 9],
}

impl Aggregate {
    pub const NAMES: [&'static str; 9] = [
        "rebound",
        "rebound_raw",
        "final_loss",
        "best_loss",
        "steps_to_best",
        "sharpness",
        "eval_loss",
        "grad_evals",
        "wall_ms",
    ];

    pub fn mean_of(&self, name: &str) -> f64 {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map_or(f64::NAN, |i| self.mean[i])
    }

    pub fn std_of(&self, name: &str) -> f64 {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map_or(f64::NAN, |i| self.std[i])
    }
}

fn metric_values(s: &SeedSummary) -> [f64; 9] {
    [
        s.stability.rebound,
        s.stability.rebound_raw,
        s.stability.final_loss,
        s.stability.best_loss,
        s.stability.steps_to_best as f64,
        s.stability.sharpness,
        s.eval_loss,
        s.grad_evals as f64,
        s.wall_ms,
    ]
}

pub fn aggregate(rows: &[SeedSummary]) -> Aggregate {
    let ok: Vec<[f64; 9]> = rows
        .iter()
        .filter(|r| r.status == SeedStatus::Ok)
        .map(metric_values)
        .collect();
    let n = ok.len();
    let mut mean = [f64::NAN; 9];
    let mut std = [f64::NAN; 9];
    if n > 0 {
        for j in 0..9 {
            let m = ok.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            mean[j] = m;
            std[j] = if n > 1 {
                (ok.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
        }
    }
    Aggregate {
        seeds_ok: n,
        mean,
        std,
    }
}

pub fn summary_to_csv(rows: &[SeedSummary], hash: &str) -> String {
    let mut out = header("summary", hash);
    out.push_str(SUMMARY_COLUMNS);
    out.push('\n');
    for r in rows {
        let s = &r.stability;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.status.name(),
            r.steps,
            s.rebound,
            s.rebound_raw,
            s.final_loss,
            s.best_loss,
            s.steps_to_best,
            s.sharpness,
            r.eval_loss,
            r.grad_evals,
            r.wall_ms
        )
        .unwrap();
    }
    let agg = aggregate(rows);
    for (label, values) in [("mean", agg.mean), ("std", agg.std)] {
        write!(out, "{label},ok={}/{},-", agg.seeds_ok, rows.len()).unwrap();
        for v in values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a summary file into its per-seed rows; the aggregate rows are
/// recomputed rather than trusted.
pub fn summary_from_csv(text: &str) -> Result<(String, Vec<SeedSummary>)> {
    let mut lines = text.lines();
    let hash = check_header(&mut lines, "summary", SUMMARY_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        if line.starts_with("mean,") || line.starts_with("std,") {
            continue;
        }
        let mut f = line.split(',');
        let seed = field(f.next(), "seed", n)?;
        let status = match f.next() {
            Some("ok") => SeedStatus::Ok,
            Some("diverged") => SeedStatus::Diverged,
            other => {
                return Err(Error::Format(format!("line {n}: bad status {other:?}")));
            }
        };
        let steps = field(f.next(), "steps", n)?;
        let stability = StabilitySummary {
            rebound: field(f.next(), "rebound", n)?,
            rebound_raw: field(f.next(), "rebound_raw", n)?,
            final_loss: field(f.next(), "final_loss", n)?,
            best_loss: field(f.next(), "best_loss", n)?,
            steps_to_best: field(f.next(), "steps_to_best", n)?,
            sharpness: field(f.next(), "sharpness", n)?,
        };
        rows.push(SeedSummary {
            seed,
            status,
            steps,
            stability,
            eval_loss: field(f.next(), "eval_loss", n)?,
            grad_evals: field(f.next(), "grad_evals", n)?,
            wall_ms: field(f.next(), "wall_ms", n)?,
        });
    }
    Ok((hash, rows))
}

pub fn read_summary(path: &Path) -> Result<(String, Vec<SeedSummary>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    summary_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, loss: f64) -> TelemetryRow {
        TelemetryRow {
            step,
            loss,
            grad_norm: 0.1 + step as f64,
            g_bar: 1.0 / 3.0,
            perturb_norm: 0.0,
            grad_evals: 1,
            lr: 1e-3,
        }
    }

    #[test]
    fn telemetry_round_trip_is_exact() {
        let rows = vec![row(0, 0.7), row(1, f64::NAN), row(2, 1e-300)];
        let text = telemetry_to_csv(&rows, "abc");
        assert!(text.starts_with("# lora-mgpo telemetry v1 config_hash=abc\nstep,loss,"));
        let (hash, back) = telemetry_from_csv(&text).unwrap();
        assert_eq!(hash, "abc");
        assert!(rows.iter().zip(&back).all(|(a, b)| a.bitwise_eq(b)));
    }

    #[test]
    fn telemetry_rejects_wrong_columns() {
        let text = "# lora-mgpo telemetry v1 config_hash=x\nstep,loss\n";
        assert!(matches!(telemetry_from_csv(text), Err(Error::Format(_))));
        assert!(telemetry_from_csv("").is_err());
    }

    #[test]
    fn summary_aggregates_ok_seeds_only() {
        let mk = |seed, status, rebound| SeedSummary {
            seed,
            status,
            steps: 10,
            stability: StabilitySummary {
                rebound,
                rebound_raw: rebound,
                final_loss: 1.0,
                best_loss: 0.5,
                steps_to_best: 3,
                sharpness: 0.0,
            },
            eval_loss: 1.0,
            grad_evals: 10,
            wall_ms: 1.0,
        };
        let rows = vec![
            mk(0, SeedStatus::Ok, 1.0),
            mk(1, SeedStatus::Ok, 3.0),
            mk(2, SeedStatus::Diverged, f64::NAN),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.seeds_ok, 2);
        assert_eq!(agg.mean_of("rebound"), 2.0);
        assert_eq!(agg.std_of("rebound"), 2f64.sqrt());
        let text = summary_to_csv(&rows, "h");
        assert!(text.contains("\nmean,ok=2/3,-,2,"));
        let (_, back) = summary_from_csv(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].status, SeedStatus::Diverged);
        assert!(back[2].stability.rebound.is_nan());
    }
}
