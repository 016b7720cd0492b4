use clap::{Parser, Subcommand};
use pcqd_pipeline::error::{EXIT_CONFIG, EXIT_OK};
use pcqd_pipeline::{
    cmd_bands, cmd_fit, cmd_modes, cmd_reproduce_paper, cmd_simulate, resolve_output_dir,
    ExperimentConfig, PipelineError, ResultBundle, OUT_DIR_ENV,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Photonic-crystal cavity and lifetime-analysis pipeline.
#[derive(Debug, Parser)]
#[command(name = "pcqd", version)]
struct Cli {
    /// Experiment configuration (JSON). Built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the PCQD_OUT_DIR variable and the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for every stochastic step; overrides simulation.seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// TE band structure and gap for every hole ratio in the sweep.
    Bands,
    /// Defect modes of the single-missing-hole cavity.
    Modes,
    /// Synthetic TCSPC histogram and optional lifetime scan.
    Simulate,
    /// Fit histogram or lifetime-scan CSV files.
    Fit {
        /// Input files; `fit.inputs` from the config when omitted.
        files: Vec<PathBuf>,
    },
    /// Run the reference scenario end to end and check it.
    ReproducePaper,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut config = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Command::ReproducePaper) => ExperimentConfig::paper(),
        (None, _) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.simulation.seed = Some(seed);
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<ResultBundle, PipelineError> {
    let config = load_config(cli)?;
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out = resolve_output_dir(cli.out.as_deref(), env.as_deref(), &config);
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| PipelineError::Usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Bands => cmd_bands(&config, &out),
        Command::Modes => cmd_modes(&config, &out),
        Command::Simulate => cmd_simulate(&config, &out),
        Command::Fit { files } => cmd_fit(&config, files, &out),
        Command::ReproducePaper => cmd_reproduce_paper(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(bundle) => {
            for line in &bundle.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
