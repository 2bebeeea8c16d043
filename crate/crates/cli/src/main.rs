use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eds_core::pipeline::{
    rebuild_report, run_experiment, run_pipeline, run_sweep, to_text, ExperimentConfig, Pipeline, Stage, StageLog,
};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Explainer divergence scoring experiments.
#[derive(Parser)]
#[command(name = "eds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset partitions.
    GenData(Common),
    /// Train and verify the spurious and clean model populations.
    TrainZoo(Common),
    /// Flip rate of spurious-arm models across artifact intensities.
    SweepIntensity(Common),
    /// Dump encoded explanations for every run.
    Explain(Common),
    /// Train discriminators on the dumps and score them.
    Eds(Common),
    /// KSSD, CCM and FAM for every explainer.
    Baseline(Common),
    /// Every stage, then the report.
    Run(Common),
    /// Rebuild the report from existing results.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Preset name or path to a TOML config.
    #[arg(long, short)]
    config: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<config name>).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides the run count.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> eds_core::Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(r) = self.runs {
            config.runs = r;
        }
        config.validate()?;
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
        Ok((config, out))
    }
}

fn print_log(log: &StageLog) {
    let names = |s: &[Stage]| s.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
    if !log.ran.is_empty() {
        println!("ran: {}", names(&log.ran));
    }
    if !log.skipped.is_empty() {
        println!("up to date: {}", names(&log.skipped));
    }
}

fn execute(command: Command) -> eds_core::Result<()> {
    let (common, stage) = match &command {
        Command::GenData(c) => (c, Stage::Dataset),
        Command::TrainZoo(c) => (c, Stage::Zoo),
        Command::SweepIntensity(c) => (c, Stage::Sweep),
        Command::Explain(c) => (c, Stage::Explanations),
        Command::Eds(c) => (c, Stage::Eds),
        Command::Baseline(c) => (c, Stage::Baselines),
        Command::Run(c) | Command::Report(c) => (c, Stage::Report),
    };
    if let Some(n) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| eds_core::Error::Config(format!("thread pool: {e}")))?;
    }
    let (config, out) = common.load()?;
    match command {
        Command::Run(_) => {
            let (report, log) = run_experiment(&config, &out)?;
            print_log(&log);
            print!("{}", to_text(&report));
        }
        Command::Report(_) => print!("{}", to_text(&rebuild_report(&config, &out)?)),
        Command::SweepIntensity(_) => {
            let table = run_sweep(&config, &out)?;
            println!("intensity  mean flip rate  flip rates");
            for r in &table.rows {
                let rates: Vec<String> = r.flip_rates.iter().map(|f| format!("{f:.3}")).collect();
                println!("{:<9.3}  {:<14.3}  {}", r.intensity, r.mean_flip_rate, rates.join(" "));
            }
            println!("nondecreasing steps: {:.2}", table.nondecreasing_fraction);
        }
        Command::TrainZoo(_) => {
            let mut p = Pipeline::open(&config, &out)?;
            let (train, validation) = p.split()?;
            print_log(&p.log);
            println!(
                "models: {} + {} for discriminator training, {} + {} held out (clean + spurious)",
                train.clean.len(),
                train.spurious.len(),
                validation.clean.len(),
                validation.spurious.len()
            );
        }
        _ => print_log(&run_pipeline(&config, &out, stage)?),
    }
    println!("output: {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
