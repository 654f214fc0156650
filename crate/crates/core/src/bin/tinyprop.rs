use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tinyprop::cli;
use tinyprop::config::{Overrides, RunConfig};
use tinyprop::par::{configure_threads, Execution};
use tinyprop::Error;

#[derive(Parser)]
#[command(name = "tinyprop", version, about = "Sparse and adaptive backpropagation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its trace, summary and weights.
    Train(Common),
    /// Run every configured engine over the configured seeds.
    Compare(Common),
    /// Run the TinyProp hyperparameter cross product.
    Sweep(Common),
    /// Report test accuracy of a saved weights file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truncate the training set to this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads for grid cells and evaluation; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> tinyprop::Result<(RunConfig, Execution)> {
        let overrides = Overrides { seed: self.seed, out: self.out.clone(), limit: self.limit };
        let cfg = RunConfig::from_path(&self.config, &overrides)?;
        let exec = match self.threads {
            Some(0) => return Err(Error::Config("--threads: must be at least 1".into())),
            Some(1) => Execution::Sequential,
            Some(n) => {
                configure_threads(n);
                Execution::Parallel
            }
            None => Execution::Parallel,
        };
        Ok((cfg, exec))
    }
}

fn run(cli: Cli) -> tinyprop::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, _) = common.load()?;
            let out = cli::cmd_train(&cfg)?;
            let r = &out.report;
            println!("engine            {}", r.engine);
            println!("final accuracy    {:.4}", r.final_accuracy);
            println!("backprop ratio    {:.4}", r.mean_backprop_ratio);
            println!("acceleration      {:.2}x (backward MACs)", r.acceleration_analytic);
            println!("epoch seconds     {:.3}", r.mean_epoch_seconds());
            println!("report            {}", out.out_dir.join(cli::SUMMARY_FILE).display());
        }
        Command::Compare(common) => {
            let (cfg, exec) = common.load()?;
            let report = cli::cmd_compare(&cfg, exec)?;
            print!("{}", cli::format_compare(&report));
            println!("report: {}", cfg.out_dir.join(cli::COMPARE_FILE).display());
        }
        Command::Sweep(common) => {
            let (cfg, exec) = common.load()?;
            let report = cli::cmd_sweep(&cfg, exec)?;
            print!("{}", cli::format_sweep(&report));
            println!("report: {}", cfg.out_dir.join(cli::SWEEP_FILE).display());
        }
        Command::Eval { common, weights } => {
            let (cfg, _) = common.load()?;
            println!("test accuracy {:.4}", cli::cmd_eval(&cfg, &weights)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config() { 2 } else { 1 })
        }
    }
}
