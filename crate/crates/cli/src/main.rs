use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use attnseg::pipeline::{self, PipelineConfig};
use attnseg::{Aggregator, FusionStage};
use clap::Parser;

/// Ground every noun phrase of each sample and report Average Recall.
#[derive(Debug, Parser)]
#[command(name = "attnseg", version)]
struct Args {
    /// Sample manifest, or a directory of sample directories. Repeatable.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,

    /// Run directory for masks, overlays and reports.
    #[arg(long)]
    out: PathBuf,

    /// Anchor threshold on the normalized cross-attention map.
    #[arg(long, default_value_t = pipeline::DEFAULT_BETA)]
    beta: f64,

    /// Binarization threshold.
    #[arg(long, default_value_t = pipeline::DEFAULT_ALPHA)]
    alpha: f64,

    /// Candidate matching threshold.
    #[arg(long, default_value_t = pipeline::DEFAULT_TAU)]
    tau: f64,

    #[arg(long, default_value_t = attnseg::smr::DEFAULT_EPSILON)]
    epsilon: f64,

    /// Skip candidate-mask refinement.
    #[arg(long)]
    no_smr: bool,

    /// Binarize fused cross-attention directly (baseline).
    #[arg(long)]
    no_lsp: bool,

    /// subject_focused | average | multiplication
    #[arg(long, default_value = "subject_focused")]
    aggregator: Aggregator,

    /// cross | enhanced
    #[arg(long, default_value = "cross")]
    fusion_stage: FusionStage,

    /// Force the head word's fusion weight to 1.
    #[arg(long)]
    head_pinned: bool,

    #[arg(long, default_value_t = pipeline::DEFAULT_CROSS_RESOLUTION)]
    cross_resolution: usize,

    #[arg(long, default_value_t = pipeline::DEFAULT_SELF_RESOLUTION)]
    self_resolution: usize,

    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Also write overlay images.
    #[arg(long)]
    overlays: bool,

    /// IoU threshold grid step.
    #[arg(long, default_value_t = attnseg::eval::DEFAULT_GRID_STEP)]
    grid_step: f64,
}

impl Args {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            beta: self.beta,
            alpha: self.alpha,
            tau: self.tau,
            epsilon: self.epsilon,
            cross_resolution: self.cross_resolution,
            self_resolution: self.self_resolution,
            aggregator: self.aggregator,
            fusion_stage: self.fusion_stage,
            head_pinned: self.head_pinned,
            lsp_enabled: !self.no_lsp,
            smr_enabled: !self.no_smr,
            grid_step: self.grid_step,
            overlays: self.overlays,
            workers: self.workers,
        }
    }
}

fn run(args: &Args) -> Result<i32> {
    let manifests = pipeline::collect_manifests(&args.manifest)?;
    let summary = pipeline::run_pipeline(&manifests, &args.config(), &args.out)
        .with_context(|| format!("run into {}", args.out.display()))?;
    if let Some(report) = &summary.report {
        print!("{report}");
    }
    for f in &summary.failures {
        eprintln!("failed: {}: {}", f.manifest.display(), f.error);
    }
    eprintln!(
        "{} of {} samples evaluated",
        summary.samples_ok, summary.samples_total
    );
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATTNSEG_LOG", "warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
