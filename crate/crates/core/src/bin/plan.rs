use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ltplan::config::ExperimentConfig;
use ltplan::experiment::{
    cmd_collect, cmd_eval, cmd_report, cmd_sweep, cmd_train, eval_dir, ExperimentError,
    DATASET_FILE, ENSEMBLE_DIR, HELDOUT_FILE,
};

/// Uncertainty-aware lattice planner experiments.
#[derive(Parser)]
#[command(name = "plan", version)]
struct Cli {
    /// Configuration file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the training and held-out datasets.
    Collect {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train an ensemble.
    Train {
        /// Dataset file; defaults to the collect output in --out.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Ensemble size; defaults to the largest configured size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate the first n members in closed loop.
    Eval {
        #[arg(long)]
        n: usize,
        /// Ensemble directory; defaults to --out/ensemble.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Held-out dataset for the prediction metrics.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Tabulate evaluation runs.
    Report {
        /// Directory holding eval_n* runs; defaults to --out.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Ensemble sizes, comma separated; defaults to the configured sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Run collect, train, eval for every size, report and the
    /// right-then-left study.
    Sweep,
}

fn existing(path: PathBuf) -> Option<PathBuf> {
    path.is_file().then_some(path)
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.experiment.reseed(seed);
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| config.experiment.output_dir.clone());
    match cli.command {
        Command::Collect { episodes } => {
            if let Some(n) = episodes {
                config.experiment.collect_episodes = n;
            }
            let c = cmd_collect(&config, &out)?;
            println!(
                "{} training records, {} held-out records",
                c.records, c.heldout_records
            );
            for (label, count) in &c.counts {
                println!("  {label}: {count}");
            }
        }
        Command::Train { dataset, n } => {
            let dataset = dataset.unwrap_or_else(|| out.join(DATASET_FILE));
            let n = n.unwrap_or_else(|| config.max_ensemble_size());
            let dir = out.join(ENSEMBLE_DIR);
            let e = cmd_train(&config, &dataset, n, &dir)?;
            for m in e.members() {
                println!("seed {} final loss {:.6}", m.seed, m.final_loss);
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval {
            n,
            ensemble,
            heldout,
            episodes,
        } => {
            let ensemble = ensemble.unwrap_or_else(|| out.join(ENSEMBLE_DIR));
            let heldout = heldout.or_else(|| existing(out.join(HELDOUT_FILE)));
            let episodes = episodes.unwrap_or(config.experiment.eval_episodes);
            let dir = eval_dir(&out, n);
            let r = cmd_eval(
                &config,
                &ensemble,
                n,
                heldout.as_deref(),
                episodes,
                config.experiment.eval_seed,
                &dir,
            )?;
            print_report(&r);
            println!("wrote {}", dir.display());
        }
        Command::Report { runs, sizes } => {
            let runs = runs.unwrap_or_else(|| out.clone());
            let sizes = if sizes.is_empty() {
                config.experiment.ensemble_sizes.clone()
            } else {
                sizes
            };
            cmd_report(&runs, &sizes, &out)?;
            print_file(&out.join(ltplan::experiment::SUMMARY_FILE));
        }
        Command::Sweep => {
            let s = cmd_sweep(&config, &out)?;
            for r in &s.reports {
                print_report(r);
            }
            println!(
                "right-then-left: n={} clear where n={} is not in {:.0}% of {} runs",
                s.right_then_left.large,
                s.right_then_left.small,
                100.0 * s.right_then_left.success_rate(),
                s.right_then_left.reps.len()
            );
            print_file(&out.join(ltplan::experiment::SUMMARY_FILE));
        }
    }
    Ok(())
}

fn print_report(r: &ltplan::metrics::MetricsReport) {
    print!(
        "n={}: P_safe {:.2}% P_ev {:.3} m/s (normal {:.3})",
        r.ensemble_size,
        100.0 * r.overall.p_safe,
        r.overall.p_ev,
        r.normal.p_ev
    );
    if let Some(p) = &r.prediction {
        print!(
            " D_ADE {:.2}% D_FDE {:.2}%",
            100.0 * p.d_ade,
            100.0 * p.d_fde
        );
    }
    println!();
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
