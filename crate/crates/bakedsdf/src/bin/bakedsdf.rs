use std::path::PathBuf;
use std::process::ExitCode;

use bakedsdf::{Pipeline, PipelineConfig, PipelineError, Stage};
use bakedsdf_core::appearance::LossKind;
use clap::{Parser, Subcommand, ValueEnum};

/// Bakes an analytic scene into a real-time mesh asset: synthesize a
/// dataset, train a volumetric SDF model, extract a mesh, fit per-vertex
/// appearance, export glTF, render and score held-out views.
#[derive(Debug, Parser)]
#[command(name = "bakedsdf", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "bakedsdf.toml")]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set train.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Single-threaded numerics for bit-reproducible artifacts.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Lobes per central vertex; periphery vertices get at most one.
    #[arg(long, global = true)]
    lobes: Option<usize>,
    /// Upper end of the lobe width encoding range.
    #[arg(long, global = true)]
    lambda_max: Option<f64>,
    /// Appearance loss.
    #[arg(long, global = true)]
    loss: Option<Loss>,
    /// Stage-1 training iterations.
    #[arg(long, global = true)]
    train_iterations: Option<usize>,
    /// Appearance fitting iterations.
    #[arg(long, global = true)]
    fit_iterations: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Loss {
    Robust,
    L2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the ground-truth dataset from the scene file.
    Synth,
    /// Train the stage-1 volumetric model.
    Train,
    /// Extract the mesh.
    Bake,
    /// Fit per-vertex appearance.
    Fit,
    /// Write the gzip-compressed glTF asset.
    Export,
    /// Render held-out views of the asset (and the stage-1 model).
    Render,
    /// Score renders against held-out ground truth.
    Metrics,
    /// Run every stage enabled in the configuration.
    Run,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut sets = self.overrides.clone();
        if let Some(n) = self.lobes {
            sets.push(format!("appearance.central_lobes={n}"));
            sets.push(format!("appearance.periphery_lobes={}", n.min(1)));
        }
        if let Some(l) = self.lambda_max {
            sets.push(format!("appearance.lambda_max={l:?}"));
        }
        if let Some(loss) = self.loss {
            let kind = match loss {
                Loss::Robust => LossKind::Robust,
                Loss::L2 => LossKind::L2,
            };
            sets.push(format!("appearance.loss={}", serde_json::to_string(&kind).expect("serializes")));
        }
        if let Some(n) = self.train_iterations {
            sets.push(format!("train.iterations={n}"));
        }
        if let Some(n) = self.fit_iterations {
            sets.push(format!("appearance.iterations={n}"));
        }
        sets
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    if cli.deterministic {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| PipelineError::Usage(format!("cannot configure threads: {e}")))?;
    }
    let config = PipelineConfig::load(&cli.config, &cli.overrides())?;
    let pipeline = Pipeline::new(config);
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Train => Stage::Train,
        Command::Bake => Stage::Bake,
        Command::Fit => Stage::Fit,
        Command::Export => Stage::Export,
        Command::Render => Stage::Render,
        Command::Metrics => Stage::Metrics,
        Command::Run => return pipeline.run_enabled(),
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_target(false).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, exit_code = e.exit_code(), "failed");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
