use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvmaint_core::pipeline::{self, Manifest, RunConfig};
use pvmaint_core::{Error, Result};

/// Inverter fault prediction from PV-plant SCADA data.
#[derive(Parser)]
#[command(name = "pvmaint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic plant (SCADA, logbook, taxonomy, datasheet).
    Synth {
        /// Synthetic plant config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config file's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Label and clean the SCADA data.
    Preprocess(RunArgs),
    /// Train the SOM supervision model and derive control limits.
    SdmTrain(RunArgs),
    /// Compute the daily KPI, warnings and SDM metrics.
    SdmRun(RunArgs),
    /// Train one fault-prediction network per fault class.
    FpmTrain(RunArgs),
    /// Monte-Carlo evaluation of the fault-prediction networks per horizon.
    FpmEval(RunArgs),
    /// Lost production and energy yield with and without warnings.
    Energy(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated look-back horizons in hours, e.g. `0,2,24`.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Monte-Carlo repetitions for `fpm-eval`.
    #[arg(long)]
    mc_runs: Option<usize>,
    /// KPI/warning CSV for `energy`; defaults to the one in the output directory.
    #[arg(long)]
    warnings: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(h) = &self.horizons {
            cfg.fpm.horizons.hours = h.clone();
        }
        if let Some(m) = self.mc_runs {
            cfg.fpm.mc_runs = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn run(cli: Cli) -> Result<Manifest> {
    let stage = |args: &RunArgs, f: fn(&RunConfig) -> Result<Manifest>| {
        let cfg = args.load()?;
        with_pool(cfg.jobs, || f(&cfg))
    };
    match cli.command {
        Command::Synth { config, out_dir } => {
            let dir = out_dir.unwrap_or_else(|| config.parent().map(PathBuf::from).unwrap_or_default());
            pipeline::run_synth(&config, &dir)
        }
        Command::Preprocess(a) => stage(&a, pipeline::run_preprocess),
        Command::SdmTrain(a) => stage(&a, pipeline::run_sdm_train),
        Command::SdmRun(a) => stage(&a, pipeline::run_sdm_run),
        Command::FpmTrain(a) => stage(&a, pipeline::run_fpm_train),
        Command::FpmEval(a) => stage(&a, pipeline::run_fpm_eval),
        Command::Energy(a) => {
            let cfg = a.load()?;
            with_pool(cfg.jobs, || pipeline::run_energy(&cfg, a.warnings.as_deref()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(m) => {
            for a in &m.artifacts {
                println!("{}  {}", a.sha256, a.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
