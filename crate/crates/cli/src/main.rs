use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedbs::data::{write_csv_to, write_trials};
use fedbs::eval::AccuracyTable;
use fedbs::federated::Strategy;
use fedbs_cli::experiment::{load_subjects, stats_csv, write_atomic};
use fedbs_cli::sweep::sweep_csv;
use fedbs_cli::{parse_config, run_experiment, run_sweep, write_outputs, CliError, ExperimentConfig, Result, SweepParam};

#[derive(Parser)]
#[command(name = "fedbs", version, about = "Federated EEG classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leave-one-subject-out runs over the seed × strategy grid.
    Run {
        #[command(flatten)]
        opts: RunOpts,
        /// Run FedAvg, FedAvg+BN, FedAvg+SAM and FedBS and write ablation.csv.
        #[arg(long)]
        ablation: bool,
    },
    /// Writes the configured synthetic subjects as .eegt files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write all subjects to trials.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Recomputes the statistics report from an accuracy table.
    Stats {
        /// accuracy.csv produced by `run`.
        #[arg(long)]
        accuracy: PathBuf,
        #[arg(long, default_value = "fedbs")]
        reference: String,
        #[arg(long, default_value = "eegnet_lite")]
        model: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean accuracy per strategy while varying one setting.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        /// participation, local-epochs or test-batch.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct RunOpts {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategy: Option<Vec<Strategy>>,
    /// Use seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the configured synthetic data even if a data path is set.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    participation: Option<f64>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    test_batch: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
}

impl RunOpts {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.strategy {
            cfg.strategies = s.clone();
        }
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.synthetic {
            cfg.data.path = None;
        }
        let f = &mut cfg.federated;
        f.rho = self.rho.unwrap_or(f.rho);
        f.participation = self.participation.unwrap_or(f.participation);
        f.local_epochs = self.local_epochs.unwrap_or(f.local_epochs);
        f.test_batch_size = self.test_batch.unwrap_or(f.test_batch_size);
        f.rounds = self.rounds.unwrap_or(f.rounds);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(table: &AccuracyTable) {
    for approach in table.approaches() {
        if let Some(m) = table.mean(approach) {
            println!("{approach:>12}  {:.2}%", 100.0 * m);
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { opts, ablation } => {
            let mut cfg = opts.config()?;
            if ablation {
                cfg.strategies = Strategy::ABLATION.to_vec();
            }
            let out = run_experiment(&cfg)?;
            for path in write_outputs(&cfg, &out, &cfg.output_dir)? {
                eprintln!("wrote {}", path.display());
            }
            summarize(&out.table);
        }
        Command::GenData { config, out, csv } => {
            let mut cfg = match config {
                Some(p) => parse_config(&p)?,
                None => ExperimentConfig::default(),
            };
            cfg.data.path = None;
            let subjects = load_subjects(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Io { path: out.clone(), source: e })?;
            for s in &subjects {
                let path = out.join(format!("subject_{:03}.eegt", s.subject_id()));
                write_trials(&path, s)?;
                eprintln!("wrote {}", path.display());
            }
            if csv {
                let mut bytes = Vec::new();
                write_csv_to(&subjects, &mut bytes)?;
                write_atomic(&out.join("trials.csv"), &bytes)?;
            }
        }
        Command::Stats { accuracy, reference, model, out } => {
            let file = std::fs::File::open(&accuracy).map_err(|e| CliError::Io { path: accuracy.clone(), source: e })?;
            let table = AccuracyTable::read_csv(file)?;
            if table.approaches().all(|a| a != reference) {
                return Err(CliError::Config(format!("{}: no accuracies for `{reference}`", accuracy.display())));
            }
            let bytes = stats_csv(&table, &reference, &model)?;
            match out {
                Some(path) => write_atomic(&path, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Sweep { opts, param, values } => {
            let cfg = opts.config()?;
            let rows = run_sweep(&cfg, param, &values)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Io { path: cfg.output_dir.clone(), source: e })?;
            let path = cfg.output_dir.join("sweep.csv");
            write_atomic(Path::new(&path), &sweep_csv(param, &rows)?)?;
            for r in rows {
                println!("{param}={} {:>12}  {:.2}%", r.value, r.strategy.name(), 100.0 * r.mean_accuracy);
            }
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
