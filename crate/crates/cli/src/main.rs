use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use implicit_debias::classifiers::Architecture;
use implicit_debias::runner::{self, ExperimentConfig, Method, Overrides};

#[derive(Parser)]
#[command(name = "implicit-debias", version, about = "Implicit-bias experiments for CNN and GRU text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the balanced split and write it with a manifest.
    PrepareData(Common),
    /// Train one method and save its checkpoint.
    Train(Common),
    /// Train task and group explainers and dump their saliency.
    Explain(Common),
    /// Measure JS overlap between task and group saliency.
    Overlap(Common),
    /// Sweep balance rates and write the overlap/DPD CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated balance rates.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Fairness and performance report for a trained checkpoint.
    Evaluate(Common),
    /// Train and evaluate several methods on one shared split.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods (default: all four).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    balance_rate: Option<f64>,
    #[arg(long)]
    arch: Option<Architecture>,
    /// base, data_aug, ins_weigh or debiased_tc.
    #[arg(long)]
    method: Option<Method>,
    /// Run seeds 1..=N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, rates: Option<Vec<f64>>, methods: Option<Vec<Method>>) -> implicit_debias::Result<ExperimentConfig> {
        let seeds = match (self.seeds, &self.seed_list) {
            (Some(n), _) => Some((1..=n).collect()),
            (None, Some(list)) => Some(list.clone()),
            (None, None) => None,
        };
        let overrides = Overrides {
            balance_rate: self.balance_rate,
            architecture: self.arch,
            method: self.method,
            methods,
            seeds,
            rates,
            out: self.out.clone(),
        };
        ExperimentConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> implicit_debias::Result<()> {
    let written = match cli.command {
        Command::PrepareData(c) => runner::prepare_data(&c.resolve(None, None)?)?,
        Command::Train(c) => runner::train(&c.resolve(None, None)?)?,
        Command::Explain(c) => runner::explain(&c.resolve(None, None)?)?,
        Command::Overlap(c) => runner::overlap(&c.resolve(None, None)?)?,
        Command::Sweep { common, rates } => runner::sweep(&common.resolve(rates, None)?)?,
        Command::Evaluate(c) => runner::evaluate_run(&c.resolve(None, None)?)?,
        Command::Compare { common, methods } => {
            let cfg = common.resolve(None, methods)?;
            let written = runner::compare(&cfg)?;
            if let Ok(table) = std::fs::read_to_string(cfg.out.join("compare.txt")) {
                print!("{}", table.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
            }
            written
        }
        Command::ShowConfig(c) => {
            print!("{}", c.resolve(None, None)?.to_toml()?);
            Vec::new()
        }
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
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
