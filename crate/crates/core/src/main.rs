use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stemlink::pipeline::{self, PipelineConfig, PipelineError};

#[derive(Parser, Debug)]
#[command(
    name = "stemlink",
    version,
    about = "Offline paired-stem accompaniment pipeline"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// JSON configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict the grid to one segment duration.
    #[arg(long, global = true)]
    segment_ms: Option<u32>,
    /// Restrict the grid to one alphabet size.
    #[arg(long, global = true)]
    alphabet: Option<usize>,
    #[arg(long, global = true)]
    top_p: Option<f64>,
    #[arg(long, global = true)]
    constrained: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize or scan the dataset and write the split manifest.
    Prepare,
    /// Fit the k-means codebook for each grid point.
    TrainVq,
    /// Tokenize every window pair of every split.
    Encode,
    /// Train the sequence model on the encoded pairs.
    TrainDecision,
    /// Write predictions for the test split in every mode.
    Generate,
    /// Render an accompaniment for one guide stem.
    Render {
        /// Guide stem; defaults to the first test window's guide.
        #[arg(long)]
        guide: Option<PathBuf>,
        /// Stem whose segments form the corpus; defaults to the matching response.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Score predictions and write per-configuration CSVs.
    Evaluate,
    /// Collect every configuration into dataset-level CSVs.
    Report,
    /// Run every stage in order.
    RunAll,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(ms) = self.segment_ms {
            cfg.segment_ms = vec![ms];
        }
        if let Some(k) = self.alphabet {
            cfg.alphabet = vec![k];
        }
        if let Some(p) = self.top_p {
            cfg.top_p = p;
        }
        if self.constrained {
            cfg.constrained = true;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Prepare => {
            let manifest = pipeline::prepare(&cfg)?;
            log::info!(
                "prepared {}: {} train, {} val, {} test tracks",
                manifest.name,
                manifest.splits.train.len(),
                manifest.splits.val.len(),
                manifest.splits.test.len()
            );
        }
        Command::TrainVq => {
            for gp in cfg.grid() {
                let cb = pipeline::train_vq(&cfg, gp)?;
                log::info!(
                    "{}: codebook inertia {:.4}",
                    gp.name(),
                    cb.training_inertia()
                );
            }
        }
        Command::Encode => {
            for gp in cfg.grid() {
                for (split, n) in pipeline::encode(&cfg, gp)? {
                    log::info!("{}: {split} has {n} windows", gp.name());
                }
            }
        }
        Command::TrainDecision => {
            for gp in cfg.grid() {
                let report = pipeline::train_decision(&cfg, gp)?;
                log::info!(
                    "{}: best epoch {} of {}",
                    gp.name(),
                    report.best_epoch,
                    report.curve.len()
                );
            }
        }
        Command::Generate => {
            for gp in cfg.grid() {
                let preds = pipeline::generate(&cfg, gp)?;
                log::info!("{}: {} items", gp.name(), preds.len());
            }
        }
        Command::Render { guide, corpus } => {
            for gp in cfg.grid() {
                let wav = pipeline::render_audio(&cfg, gp, guide.as_deref(), corpus.as_deref())?;
                println!("{}", wav.display());
            }
        }
        Command::Evaluate => {
            for gp in cfg.grid() {
                let report = pipeline::evaluate(&cfg, gp)?;
                for s in &report.significance {
                    log::info!("{}: {} U={} p={:.3e}", gp.name(), s.mode.as_str(), s.u, s.p);
                }
            }
        }
        Command::Report => {
            pipeline::report(&cfg)?;
        }
        Command::RunAll => {
            pipeline::run_all(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
