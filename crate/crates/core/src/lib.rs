//! Zero-shot phrase grounding from diffusion attention maps.
//!
//! The crate turns serialized cross- and self-attention tensors into one
//! binary mask per noun phrase, optionally snaps those masks to a pool of
//! class-agnostic candidate masks, and scores the result with Average Recall
//! over IoU thresholds.
//!
//! - [`tensor_store`], [`manifest`]: on-disk formats and sample loading
//! - [`lsp`]: anchors, self-attention enhancement, upsampling, binarization
//! - [`sffa`]: per-word weighting and fusion
//! - [`smr`]: candidate-mask refinement
//! - [`eval`]: IoU, recall curves, Average Recall reports
//! - [`pipeline`]: the end-to-end run
//! - [`overlay`]: qualitative overlays

pub mod error;
pub mod eval;
pub mod lsp;
pub mod manifest;
pub mod mask;
pub mod overlay;
pub mod pipeline;
pub mod sffa;
pub mod smr;
pub mod synthetic;
pub mod tensor_store;

pub use error::{Error, Result};
pub use eval::{EvalRecord, EvalReport, Split};
pub use lsp::{AnchorSet, ScoreMap, SelfAttentionMatrix};
pub use manifest::{load_manifest, PhraseSpec, Sample, SampleManifest};
pub use mask::BinaryMask;
pub use pipeline::{run_pipeline, PipelineConfig, RunSummary};
pub use sffa::{Aggregator, FusionStage, WordWeights};
pub use smr::{CandidateMaskPool, MatchScorePair};
