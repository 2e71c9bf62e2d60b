//! Per-sample manifests tying one image to its attention tensors, candidate
//! masks and ground truth.
//!
//! A manifest is a JSON object; relative paths resolve against the directory
//! holding the manifest:
//!
//! ```json
//! {
//!   "sample_id": "val-000123",
//!   "image_path": "image.png",
//!   "image_size": [512, 512],
//!   "phrases": [{
//!     "phrase_id": "p0",
//!     "text": "a brown dog",
//!     "word_token_ids": [4, 5, 6],
//!     "head_index": 2,
//!     "word_embeddings": [[...], [...], [...]],
//!     "is_plural": false,
//!     "is_thing": true
//!   }],
//!   "cross_attention_paths": {"4": "cross/004.atsb", "5": "cross/005.atsb", "6": "cross/006.atsb"},
//!   "self_attention_path": "self.atsb",
//!   "candidate_pool_path": "pool/pool.json",
//!   "gt_mask_paths": ["gt/p0.png"],
//!   "metadata": {}
//! }
//! ```
//!
//! `image_size` is `[H, W]` and defaults to `[512, 512]`. `gt_mask_paths` is
//! aligned with `phrases`. The candidate pool file is `{"masks": [...]}` with
//! mask paths relative to the pool file; an empty list is a legal pool.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsp::{ScoreMap, SelfAttentionMatrix};
use crate::mask::BinaryMask;
use crate::smr::CandidateMaskPool;
use crate::tensor_store;

/// Working resolution of the diffusion model's inputs.
pub const DEFAULT_IMAGE_SIZE: [usize; 2] = [512, 512];

fn default_image_size() -> [usize; 2] {
    DEFAULT_IMAGE_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhraseSpec {
    pub phrase_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Token indices of the phrase's words, head noun last.
    pub word_token_ids: Vec<u32>,
    pub head_index: usize,
    pub word_embeddings: Vec<Vec<f64>>,
    pub is_plural: bool,
    pub is_thing: bool,
}

impl PhraseSpec {
    fn validate(&self, field: &str) -> Result<()> {
        if self.phrase_id.is_empty() {
            return Err(Error::manifest(format!("{field}.phrase_id"), "empty"));
        }
        let n = self.word_token_ids.len();
        if n == 0 {
            return Err(Error::manifest(format!("{field}.word_token_ids"), "empty"));
        }
        if self.head_index != n - 1 {
            return Err(Error::manifest(
                format!("{field}.head_index"),
                format!("must be the last word ({}), got {}", n - 1, self.head_index),
            ));
        }
        if self.word_embeddings.len() != n {
            return Err(Error::manifest(
                format!("{field}.word_embeddings"),
                format!("{} embeddings for {n} words", self.word_embeddings.len()),
            ));
        }
        let dim = self.word_embeddings[0].len();
        if dim == 0 {
            return Err(Error::manifest(
                format!("{field}.word_embeddings"),
                "zero-dimensional embedding",
            ));
        }
        for (i, v) in self.word_embeddings.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::manifest(
                    format!("{field}.word_embeddings[{i}]"),
                    format!("dimension {} differs from {dim}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::manifest(
                    format!("{field}.word_embeddings[{i}]"),
                    "non-finite component",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub sample_id: String,
    pub image_path: PathBuf,
    #[serde(default = "default_image_size")]
    pub image_size: [usize; 2],
    pub phrases: Vec<PhraseSpec>,
    pub cross_attention_paths: BTreeMap<u32, PathBuf>,
    pub self_attention_path: PathBuf,
    pub candidate_pool_path: PathBuf,
    pub gt_mask_paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, serde_json::Value>,
    /// Candidate mask files listed by the pool file, filled in at load.
    #[serde(skip)]
    pub candidate_mask_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolIndex {
    pub masks: Vec<PathBuf>,
}

impl SampleManifest {
    pub fn image_height(&self) -> usize {
        self.image_size[0]
    }

    pub fn image_width(&self) -> usize {
        self.image_size[1]
    }

    /// Number of candidate masks in the pool (known after loading).
    pub fn pool_size(&self) -> usize {
        self.candidate_mask_paths.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn write_pool_index(masks: &[PathBuf], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut json = serde_json::to_string_pretty(&PoolIndex {
        masks: masks.to_vec(),
    })?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, field: &str, p: &Path) -> Result<PathBuf> {
    let full = base.join(p);
    if !full.is_file() {
        return Err(Error::manifest(
            field,
            format!("unresolvable path {}", full.display()),
        ));
    }
    Ok(full)
}

/// Parses a manifest and validates it eagerly. Every path in the returned
/// manifest is resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SampleManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: SampleManifest = serde_json::from_str(&text).map_err(|e| Error::ManifestJson {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();

    if m.sample_id.is_empty() {
        return Err(Error::manifest("sample_id", "empty"));
    }
    if m.image_size.contains(&0) {
        return Err(Error::manifest("image_size", "dimensions must be positive"));
    }
    if m.phrases.is_empty() {
        return Err(Error::manifest("phrases", "no phrases"));
    }
    if m.gt_mask_paths.len() != m.phrases.len() {
        return Err(Error::manifest(
            "gt_mask_paths",
            format!(
                "{} entries for {} phrases",
                m.gt_mask_paths.len(),
                m.phrases.len()
            ),
        ));
    }
    let mut seen = HashSet::new();
    for (k, phrase) in m.phrases.iter().enumerate() {
        let field = format!("phrases[{k}]");
        phrase.validate(&field)?;
        if !seen.insert(phrase.phrase_id.as_str()) {
            return Err(Error::manifest(
                format!("{field}.phrase_id"),
                format!("duplicate id {:?}", phrase.phrase_id),
            ));
        }
        for t in &phrase.word_token_ids {
            if !m.cross_attention_paths.contains_key(t) {
                return Err(Error::manifest(
                    format!("{field}.word_token_ids"),
                    format!("token {t} has no entry in cross_attention_paths"),
                ));
            }
        }
    }

    m.image_path = resolve(&base, "image_path", &m.image_path)?;
    let (w, h) = image::image_dimensions(&m.image_path).map_err(|e| Error::Image {
        path: m.image_path.clone(),
        source: e,
    })?;
    if [h as usize, w as usize] != m.image_size {
        return Err(Error::manifest(
            "image_size",
            format!("{:?} but image is [{h}, {w}]", m.image_size),
        ));
    }
    for (token, p) in m.cross_attention_paths.iter_mut() {
        *p = resolve(&base, &format!("cross_attention_paths.{token}"), p)?;
    }
    m.self_attention_path = resolve(&base, "self_attention_path", &m.self_attention_path)?;
    m.candidate_pool_path = resolve(&base, "candidate_pool_path", &m.candidate_pool_path)?;
    for (k, p) in m.gt_mask_paths.iter_mut().enumerate() {
        *p = resolve(&base, &format!("gt_mask_paths[{k}]"), p)?;
    }

    let pool_text =
        fs::read_to_string(&m.candidate_pool_path).map_err(|e| Error::io(&m.candidate_pool_path, e))?;
    let pool: PoolIndex = serde_json::from_str(&pool_text).map_err(|e| Error::ManifestJson {
        path: m.candidate_pool_path.clone(),
        source: e,
    })?;
    let pool_base = m
        .candidate_pool_path
        .parent()
        .unwrap_or(Path::new(""))
        .to_path_buf();
    m.candidate_mask_paths = pool
        .masks
        .iter()
        .enumerate()
        .map(|(k, p)| resolve(&pool_base, &format!("candidate_pool.masks[{k}]"), p))
        .collect::<Result<_>>()?;
    Ok(m)
}

/// All tensors and masks of one sample, decoded and cross-checked.
#[derive(Debug, Clone)]
pub struct Sample {
    pub manifest: SampleManifest,
    pub cross_maps: BTreeMap<u32, ScoreMap>,
    pub self_attention: SelfAttentionMatrix,
    pub pool: CandidateMaskPool,
    pub gt_masks: Vec<BinaryMask>,
}

impl Sample {
    pub fn load(manifest: SampleManifest) -> Result<Self> {
        let image_res = (manifest.image_height(), manifest.image_width());
        let mut cross_maps = BTreeMap::new();
        let mut cross_res = None;
        for (&token, path) in &manifest.cross_attention_paths {
            let map = tensor_store::read_score_map(path)?;
            match cross_res {
                None => cross_res = Some(map.resolution()),
                Some(r) if r != map.resolution() => {
                    return Err(Error::manifest(
                        format!("cross_attention_paths.{token}"),
                        format!("resolution {:?} differs from {:?}", map.resolution(), r),
                    ))
                }
                Some(_) => {}
            }
            cross_maps.insert(token, map);
        }
        let self_attention = tensor_store::read_self_attention(&manifest.self_attention_path)?;

        let check = |field: String, mask: &BinaryMask| -> Result<()> {
            if mask.resolution() != image_res {
                return Err(Error::manifest(
                    field,
                    format!(
                        "mask is {:?}, image is {:?}",
                        mask.resolution(),
                        image_res
                    ),
                ));
            }
            Ok(())
        };
        let mut candidates = Vec::with_capacity(manifest.candidate_mask_paths.len());
        for (k, p) in manifest.candidate_mask_paths.iter().enumerate() {
            let m = tensor_store::read_mask(p)?;
            check(format!("candidate_pool.masks[{k}]"), &m)?;
            candidates.push(m);
        }
        let mut gt_masks = Vec::with_capacity(manifest.gt_mask_paths.len());
        for (k, p) in manifest.gt_mask_paths.iter().enumerate() {
            let m = tensor_store::read_mask(p)?;
            check(format!("gt_mask_paths[{k}]"), &m)?;
            gt_masks.push(m);
        }
        Ok(Self {
            manifest,
            cross_maps,
            self_attention,
            pool: CandidateMaskPool::new(candidates)?,
            gt_masks,
        })
    }

    pub fn cross_resolution(&self) -> (usize, usize) {
        self.cross_maps
            .values()
            .next()
            .map(ScoreMap::resolution)
            .unwrap_or((0, 0))
    }

    /// Cross-attention maps of a phrase's words, in word order.
    pub fn word_maps(&self, phrase: &PhraseSpec) -> Vec<ScoreMap> {
        phrase
            .word_token_ids
            .iter()
            .map(|t| self.cross_maps[t].clone())
            .collect()
    }
}
