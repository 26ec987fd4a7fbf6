use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dabwe::cli::{self, ExperimentConfig};
use dabwe::trainer::{Update, UpdateRecord};

#[derive(Parser)]
#[command(name = "dabwe", version, about = "Joint domain adaptation and bandwidth extension experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the three-domain corpus as WAVs plus a manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured scheme.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory name; defaults to a hash of config and seed.
        #[arg(long)]
        run_id: Option<String>,
        /// Stop the first unfinished task at this step (resume by rerunning).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Map 8 kHz telephone WAVs to 16 kHz with a trained system.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run_id: Option<String>,
        /// Directory for the output WAVs.
        #[arg(long)]
        dest: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate a trained system on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Tabulate several report JSONs.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    Ok(cli::resolve_config(cfg, common.seed, common.output_dir.clone())?)
}

fn log_update(r: &UpdateRecord) {
    if r.update == Update::D && (r.step % 50 == 0) {
        let losses: Vec<String> = r.losses.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        log::info!("{} step {} lr {:.2e} {}", r.task, r.step, r.lr, losses.join(" "));
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::SynthData { common } => {
            let cfg = config(&common)?;
            let manifest = cli::cmd_synth_data(&cfg)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            common,
            run_id,
            stop_after,
        } => {
            let cfg = config(&common)?;
            let out = cli::cmd_train(&cfg, run_id.as_deref(), stop_after, &mut log_update)?;
            println!("{}", out.run_dir.display());
        }
        Command::Infer {
            common,
            run_id,
            dest,
            inputs,
        } => {
            let cfg = config(&common)?;
            for p in cli::cmd_infer(&cfg, run_id.as_deref(), &inputs, &dest)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { common, run_id } => {
            let cfg = config(&common)?;
            let report = cli::cmd_eval(&cfg, run_id.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Report { reports } => print!("{}", cli::cmd_report(&reports)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(parsed.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<dabwe::Error>()
                .is_some_and(dabwe::Error::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
