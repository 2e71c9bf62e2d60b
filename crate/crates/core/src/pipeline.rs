//! End-to-end grounding run: per phrase, fuse word maps, locate anchors,
//! enhance with self-attention, binarize at image resolution, optionally
//! refine against the candidate pool, and score against ground truth.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, EvalRecord, EvalReport, DEFAULT_GRID_STEP};
use crate::lsp::{self, ScoreMap};
use crate::manifest::{load_manifest, PhraseSpec, Sample, SampleManifest};
use crate::mask::BinaryMask;
use crate::overlay;
use crate::sffa::{Aggregator, FusionStage};
use crate::smr::{self, DEFAULT_EPSILON};
use crate::tensor_store;

pub const DEFAULT_BETA: f64 = 0.4;
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_CROSS_RESOLUTION: usize = 16;
pub const DEFAULT_SELF_RESOLUTION: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Anchor threshold on the normalized cross-attention map.
    pub beta: f64,
    /// Binarization threshold on the enhanced map.
    pub alpha: f64,
    /// Candidate matching threshold.
    pub tau: f64,
    pub epsilon: f64,
    pub cross_resolution: usize,
    pub self_resolution: usize,
    pub aggregator: Aggregator,
    pub fusion_stage: FusionStage,
    /// Force the head word's weight to 1 after the softmax.
    pub head_pinned: bool,
    /// When off, the normalized fused cross-attention map is binarized
    /// directly (cross-attention-only baseline).
    pub lsp_enabled: bool,
    pub smr_enabled: bool,
    pub grid_step: f64,
    pub overlays: bool,
    /// Thread count; does not affect any output.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            cross_resolution: DEFAULT_CROSS_RESOLUTION,
            self_resolution: DEFAULT_SELF_RESOLUTION,
            aggregator: Aggregator::SubjectFocused,
            fusion_stage: FusionStage::Cross,
            head_pinned: false,
            lsp_enabled: true,
            smr_enabled: true,
            grid_step: DEFAULT_GRID_STEP,
            overlays: false,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha), ("tau", self.tau)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        for (name, r) in [
            ("cross_resolution", self.cross_resolution),
            ("self_resolution", self.self_resolution),
        ] {
            if !r.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a power of two, got {r}"
                )));
            }
        }
        if self.self_resolution < self.cross_resolution {
            return Err(Error::InvalidArgument(format!(
                "self_resolution {} is below cross_resolution {}",
                self.self_resolution, self.cross_resolution
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        eval::threshold_grid(self.grid_step)?;
        Ok(())
    }
}

/// Intermediate and final masks for one phrase.
#[derive(Debug, Clone)]
pub struct PhrasePrediction {
    pub phrase_id: String,
    /// Binarized enhanced map at image resolution.
    pub coarse: BinaryMask,
    /// Output of refinement, or `coarse` when refinement is off.
    pub mask: BinaryMask,
    pub anchors: usize,
    pub anchor_fallback: bool,
    pub matched_candidates: usize,
}

fn enhance(cross: &ScoreMap, sample: &Sample, cfg: &PipelineConfig) -> Result<(ScoreMap, usize, bool)> {
    let normalized = lsp::min_max_normalize(cross);
    let anchors = lsp::select_anchors(&normalized, cfg.beta, sample.self_attention.resolution())?;
    let enhanced = lsp::aggregate_self_attention(&anchors, &sample.self_attention)?;
    Ok((enhanced, anchors.len(), anchors.used_fallback()))
}

/// Runs the grounding chain for one phrase of a loaded sample.
pub fn predict_phrase(sample: &Sample, phrase: &PhraseSpec, cfg: &PipelineConfig) -> Result<PhrasePrediction> {
    let image_res = (sample.manifest.image_height(), sample.manifest.image_width());
    let word_maps = sample.word_maps(phrase);
    let (score, anchors, anchor_fallback) = if !cfg.lsp_enabled {
        let fused = cfg.aggregator.fuse(&word_maps, phrase, cfg.head_pinned)?;
        (lsp::min_max_normalize(&fused), 0, false)
    } else {
        match cfg.fusion_stage {
            FusionStage::Cross => {
                let fused = cfg.aggregator.fuse(&word_maps, phrase, cfg.head_pinned)?;
                enhance(&fused, sample, cfg)?
            }
            FusionStage::Enhanced => {
                let mut enhanced = Vec::with_capacity(word_maps.len());
                let (mut total, mut any_fallback) = (0, false);
                for m in &word_maps {
                    let (e, n, fb) = enhance(m, sample, cfg)?;
                    enhanced.push(e);
                    total += n;
                    any_fallback |= fb;
                }
                let fused = cfg.aggregator.fuse(&enhanced, phrase, cfg.head_pinned)?;
                (fused, total, any_fallback)
            }
        }
    };
    let up = lsp::upsample_bilinear(&score, image_res)?;
    let coarse = lsp::binarize(&up, cfg.alpha)?;
    let (mask, matched_candidates) = if cfg.smr_enabled {
        let matched = smr::matched_candidates(&coarse, &sample.pool, cfg.tau, cfg.epsilon)?;
        let refined = smr::refine_mask(&coarse, &sample.pool, cfg.tau, cfg.epsilon)?;
        (refined, matched.len())
    } else {
        (coarse.clone(), 0)
    };
    Ok(PhrasePrediction {
        phrase_id: phrase.phrase_id.clone(),
        coarse,
        mask,
        anchors,
        anchor_fallback,
        matched_candidates,
    })
}

fn check_sample_resolutions(sample: &Sample, cfg: &PipelineConfig) -> Result<()> {
    let cross = (cfg.cross_resolution, cfg.cross_resolution);
    if sample.cross_resolution() != cross {
        return Err(Error::ResolutionMismatch {
            expected: cross,
            actual: sample.cross_resolution(),
        });
    }
    let selfr = (cfg.self_resolution, cfg.self_resolution);
    if sample.self_attention.resolution() != selfr {
        return Err(Error::ResolutionMismatch {
            expected: selfr,
            actual: sample.self_attention.resolution(),
        });
    }
    let (h, w) = (sample.manifest.image_height(), sample.manifest.image_width());
    if h < cfg.self_resolution || w < cfg.self_resolution {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the self-attention grid"
        )));
    }
    Ok(())
}

/// Predicts every phrase of a sample, in manifest order.
pub fn predict_sample(sample: &Sample, cfg: &PipelineConfig) -> Result<Vec<PhrasePrediction>> {
    check_sample_resolutions(sample, cfg)?;
    sample
        .manifest
        .phrases
        .par_iter()
        .map(|p| predict_phrase(sample, p, cfg))
        .collect()
}

/// Per-phrase result row of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseResult {
    pub sample_id: String,
    pub phrase_id: String,
    pub iou: f64,
    pub is_plural: bool,
    pub is_thing: bool,
    pub anchors: usize,
    pub anchor_fallback: bool,
    pub matched_candidates: usize,
}

impl PhraseResult {
    pub fn eval_record(&self) -> EvalRecord {
        EvalRecord {
            phrase_id: format!("{}/{}", self.sample_id, self.phrase_id),
            iou: self.iou,
            is_plural: self.is_plural,
            is_thing: self.is_thing,
        }
    }
}

/// Predicts and scores a loaded sample.
pub fn evaluate_sample(sample: &Sample, cfg: &PipelineConfig) -> Result<(Vec<PhrasePrediction>, Vec<PhraseResult>)> {
    let preds = predict_sample(sample, cfg)?;
    let mut results = Vec::with_capacity(preds.len());
    for ((pred, phrase), gt) in preds
        .iter()
        .zip(&sample.manifest.phrases)
        .zip(&sample.gt_masks)
    {
        results.push(PhraseResult {
            sample_id: sample.manifest.sample_id.clone(),
            phrase_id: phrase.phrase_id.clone(),
            iou: eval::iou(&pred.mask, gt)?,
            is_plural: phrase.is_plural,
            is_thing: phrase.is_thing,
            anchors: pred.anchors,
            anchor_fallback: pred.anchor_fallback,
            matched_candidates: pred.matched_candidates,
        });
    }
    Ok((preds, results))
}

/// Report over already-loaded samples, without touching the filesystem.
pub fn evaluate_samples(samples: &[Sample], cfg: &PipelineConfig) -> Result<(EvalReport, Vec<PhraseResult>)> {
    cfg.validate()?;
    let mut results = Vec::new();
    for s in samples {
        results.extend(evaluate_sample(s, cfg)?.1);
    }
    let records: Vec<EvalRecord> = results.iter().map(PhraseResult::eval_record).collect();
    Ok((eval::build_report(&records, cfg.grid_step)?, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub manifest: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples_total: usize,
    pub samples_ok: usize,
    pub failures: Vec<SampleFailure>,
    /// Absent when no phrase could be evaluated.
    pub report: Option<EvalReport>,
    #[serde(skip)]
    pub results: Vec<PhraseResult>,
}

impl RunSummary {
    /// 0 when every sample succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Expands manifest arguments: a file is taken as is, a directory yields its
/// own `manifest.json` and those of its immediate subdirectories, sorted.
pub fn collect_manifests(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        let mut found = Vec::new();
        if p.join("manifest.json").is_file() {
            found.push(p.join("manifest.json"));
        }
        let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(p, e))?;
            let candidate = entry.path().join("manifest.json");
            if candidate.is_file() {
                found.push(candidate);
            }
        }
        if found.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no manifest.json under {}",
                p.display()
            )));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

/// Filesystem-safe form of an id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn process_sample(manifest: SampleManifest, cfg: &PipelineConfig, out: &Path) -> Result<Vec<PhraseResult>> {
    let sample = Sample::load(manifest)?;
    let (preds, results) = evaluate_sample(&sample, cfg)?;
    let stem = file_stem(&sample.manifest.sample_id);
    let mask_dir = out.join("masks").join(&stem);
    create_dir(&mask_dir)?;
    for p in &preds {
        tensor_store::write_mask(&p.mask, mask_dir.join(format!("{}.png", file_stem(&p.phrase_id))))?;
    }
    if cfg.overlays {
        let path = &sample.manifest.image_path;
        let image = image::open(path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                source: e,
            })?
            .to_rgb8();
        let overlay_dir = out.join("overlays").join(&stem);
        create_dir(&overlay_dir)?;
        for (p, phrase) in preds.iter().zip(&sample.manifest.phrases) {
            let label = phrase.text.as_deref().unwrap_or(&phrase.phrase_id);
            let img = overlay::render_overlay(&image, &p.mask, &phrase.phrase_id, label)?;
            let file = overlay_dir.join(format!("{}.png", file_stem(&p.phrase_id)));
            img.save_with_format(&file, image::ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: file.clone(),
                    source: e,
                })?;
        }
    }
    Ok(results)
}

/// Runs every manifest and writes the run directory:
///
/// - `config.json`: the effective configuration
/// - `masks/<sample>/<phrase>.png`: final masks
/// - `overlays/<sample>/<phrase>.png`: when overlays are enabled
/// - `records.json`: per-phrase IoU and diagnostics, ordered by sample id
/// - `report.json`, `report.txt`: Average Recall per split
/// - `summary.json`: sample counts and failures
///
/// A failing sample is logged, recorded and skipped. Output bytes depend only
/// on the manifests and the configuration, never on the worker count.
pub fn run_pipeline(manifests: &[PathBuf], cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    create_dir(out)?;
    write_json(cfg, &out.join("config.json"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let mut failures = Vec::new();
    let mut all_results = Vec::new();
    pool.install(|| {
        let loaded: Vec<(PathBuf, Result<SampleManifest>)> = manifests
            .par_iter()
            .map(|p| (p.clone(), load_manifest(p)))
            .collect();

        // first occurrence of a sample id wins
        let mut seen = HashSet::new();
        let mut jobs = Vec::new();
        for (path, m) in loaded {
            match m {
                Ok(m) if !seen.insert(m.sample_id.clone()) => failures.push(SampleFailure {
                    manifest: path,
                    error: format!("duplicate sample_id {:?}", m.sample_id),
                }),
                Ok(m) => jobs.push((path, m)),
                Err(e) => failures.push(SampleFailure {
                    manifest: path,
                    error: e.to_string(),
                }),
            }
        }

        let outcomes: Vec<(PathBuf, String, Result<Vec<PhraseResult>>)> = jobs
            .into_par_iter()
            .map(|(path, m)| {
                let id = m.sample_id.clone();
                debug!("processing sample {id}");
                let r = process_sample(m, cfg, out);
                (path, id, r)
            })
            .collect();

        let mut ok = Vec::new();
        for (path, id, r) in outcomes {
            match r {
                Ok(results) => ok.push((id, results)),
                Err(e) => failures.push(SampleFailure {
                    manifest: path,
                    error: e.to_string(),
                }),
            }
        }
        ok.sort_by(|a, b| a.0.cmp(&b.0));
        all_results = ok.into_iter().flat_map(|(_, r)| r).collect();
    });
    failures.sort_by(|a, b| a.manifest.cmp(&b.manifest).then(a.error.cmp(&b.error)));
    for f in &failures {
        warn!("sample {} failed: {}", f.manifest.display(), f.error);
    }

    let records: Vec<EvalRecord> = all_results.iter().map(PhraseResult::eval_record).collect();
    let report = if records.is_empty() {
        None
    } else {
        Some(eval::build_report(&records, cfg.grid_step)?)
    };
    write_json(&all_results, &out.join("records.json"))?;
    if let Some(report) = &report {
        write_json(report, &out.join("report.json"))?;
        let path = out.join("report.txt");
        fs::write(&path, report.to_table()).map_err(|e| Error::io(&path, e))?;
    }
    let summary = RunSummary {
        samples_total: manifests.len(),
        samples_ok: manifests.len() - failures.len(),
        failures,
        report,
        results: all_results,
    };
    write_json(&summary, &out.join("summary.json"))?;
    info!(
        "{} of {} samples evaluated",
        summary.samples_ok, summary.samples_total
    );
    Ok(summary)
}
