use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svb_core::harness::commands::{read_config, run_lineardyn, run_spectra, run_train};
use svb_core::lineardyn::{DynamicsMode, Experiment, EULER_STEP};
use svb_core::verify::{run_suite, Suite};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "svb",
    version,
    about = "Spectrally bounded training and deep-linear analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from a config file; writes metrics.csv and checkpoint.svbc.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record elapsed milliseconds in the metrics (breaks byte-identical reruns).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Gradient-flow experiments on deep linear networks.
    Lineardyn {
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        width: usize,
        /// Comma-separated target singular values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        sigma: Vec<f64>,
        /// Band for per-step bounding; negative disables it.
        #[arg(long, allow_hyphen_values = true)]
        epsilon: f64,
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = EULER_STEP)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-layer singular value histograms of a checkpoint.
    Spectra {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a randomized property suite and print one line per check.
    Verify {
        /// svd, svb, lemma1, gradcheck, bbn, fold or dynamics.
        #[arg(long)]
        suite: String,
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> svb_core::Result<bool> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            wall_clock,
        } => {
            let mut cfg = read_config(&config)?;
            cfg.train.wall_clock |= wall_clock;
            let outcome = run_train(&cfg, seed, &out)?;
            if let Some(last) = outcome.report.epochs.last() {
                println!(
                    "epoch {} iter {}: train_loss {:.4} test_acc {:.4} sv [{:.4}, {:.4}]",
                    last.epoch, last.iter, last.train_loss, last.test_acc, last.sv_min, last.sv_max
                );
            }
            println!("metrics: {}", outcome.metrics.display());
            println!("checkpoint: {}", outcome.checkpoint.display());
            Ok(true)
        }
        Command::Lineardyn {
            depth,
            width,
            sigma,
            epsilon,
            mode,
            out,
            steps,
            step_size,
            seed,
        } => {
            let mode: DynamicsMode = mode.parse()?;
            let mut exp = Experiment::new(depth, width, sigma, epsilon, mode);
            exp.steps = steps;
            exp.step_size = step_size;
            exp.seed = seed;
            let rows = run_lineardyn(&exp, &out)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(true)
        }
        Command::Spectra { checkpoint, bins, out } => {
            let rows = run_spectra(&checkpoint, bins, &out)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(true)
        }
        Command::Verify { suite, quick, seed } => {
            let suite: Suite = suite.parse()?;
            let checks = run_suite(suite, quick, seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{suite}: {} passed, {failed} failed", checks.len() - failed);
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_RUNTIME),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
