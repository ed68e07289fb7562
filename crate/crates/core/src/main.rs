use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lora_mgpo::harness::{self, RawConfig, RunOptions, SweepAxis};
use lora_mgpo::Error;

/// Train LoRA adapters with AdamW, MGPO, SAM or noise perturbation on
/// synthetic tasks, and compare the resulting loss curves.
#[derive(Parser)]
#[command(name = "lora-mgpo", version)]
struct Cli {
    /// Worker threads for seeds and sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Run only this seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Write SVG plots (default).
    #[arg(long, global = true, overrides_with = "no_plot")]
    plot: bool,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    no_plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config.
    Run {
        config: PathBuf,
        /// Output root (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue seeds from their checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Tabulate and plot finished runs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Rerun a config over a grid of ranks or learning rates.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Rank,
    Lr,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Usage(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::Shape { .. } | Error::Numeric(_) => 1,
    }
}

fn load(path: &PathBuf) -> Result<RawConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let raw = RawConfig::parse(&text)?;
    raw.build()?;
    Ok(raw)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut opts = RunOptions {
        jobs: cli.jobs,
        seed_override: cli.seed_override,
        plot: !cli.no_plot || cli.plot,
        ..RunOptions::default()
    };
    let result = match cli.command {
        Command::Run { config, out, resume } => load(&config).and_then(|raw| {
            opts.out_dir = out;
            opts.resume = resume;
            let report = harness::run(&raw, &opts)?;
            println!("{}", report.dir.join("summary.csv").display());
            Ok(report.all_diverged())
        }),
        Command::Compare { dirs, out } => harness::compare(&dirs, &out, opts.plot).map(|rows| {
            for r in rows {
                println!("{:<32} rebound {:.4} final {:.5}", r.label, r.rebound, r.final_loss);
            }
            false
        }),
        Command::Sweep { config, axis, values, out } => load(&config).and_then(|raw| {
            opts.out_dir = out;
            let axis = match axis {
                Axis::Rank => SweepAxis::Rank,
                Axis::Lr => SweepAxis::Lr,
            };
            let report = harness::sweep(&raw, axis, &values, &opts)?;
            println!("{}", report.table.display());
            Ok(false)
        }),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: every seed diverged");
            ExitCode::from(EXIT_ALL_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
