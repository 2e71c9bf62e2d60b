//! Subject-focused aggregation of per-word attention maps.
//!
//! Every word of a noun phrase carries its own cross-attention map. Words are
//! weighted by the softmax of their embedding dot product with the head noun
//! (the final word) and the maps are fused by a weighted sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsp::ScoreMap;
use crate::manifest::PhraseSpec;

/// Per-word fusion weights aligned with a phrase's word tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct WordWeights {
    weights: Vec<f64>,
}

impl WordWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("word weights"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!("bad word weight {w}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Pins the head (last) word to weight 1 and keeps the other softmax
    /// weights, so the result no longer sums to 1.
    pub fn with_head_pinned(mut self) -> Self {
        if let Some(last) = self.weights.last_mut() {
            *last = 1.0;
        }
        self
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over the dot products of each word embedding with the head word's.
pub fn head_similarity_weights(phrase: &PhraseSpec) -> Result<WordWeights> {
    let head = phrase
        .word_embeddings
        .last()
        .ok_or(Error::Empty("word embeddings"))?;
    let mut scores = Vec::with_capacity(phrase.word_embeddings.len());
    for v in &phrase.word_embeddings {
        if v.len() != head.len() {
            return Err(Error::LengthMismatch {
                expected: head.len(),
                actual: v.len(),
            });
        }
        let s: f64 = v.iter().zip(head).map(|(a, b)| a * b).sum();
        if !s.is_finite() {
            return Err(Error::InvalidArgument(
                "word embeddings must be finite".into(),
            ));
        }
        scores.push(s);
    }
    WordWeights::new(softmax(&scores))
}

fn check_maps(maps: &[ScoreMap], expected_len: usize) -> Result<&ScoreMap> {
    let first = maps.first().ok_or(Error::Empty("map list"))?;
    if maps.len() != expected_len {
        return Err(Error::LengthMismatch {
            expected: expected_len,
            actual: maps.len(),
        });
    }
    for m in maps {
        m.ensure_resolution(first.resolution())?;
    }
    Ok(first)
}

/// Elementwise `Σ w_i · map_i`.
pub fn fuse_word_maps(maps: &[ScoreMap], weights: &WordWeights) -> Result<ScoreMap> {
    let first = check_maps(maps, weights.len())?;
    let mut acc = vec![0.0f64; first.values().len()];
    for (map, &w) in maps.iter().zip(weights.as_slice()) {
        for (a, &v) in acc.iter_mut().zip(map.values()) {
            *a += w * v as f64;
        }
    }
    ScoreMap::new(
        first.height(),
        first.width(),
        acc.into_iter().map(|a| a as f32).collect(),
    )
}

/// Elementwise product of all maps.
pub fn multiply_maps(maps: &[ScoreMap]) -> Result<ScoreMap> {
    let first = check_maps(maps, maps.len())?;
    let mut acc = vec![1.0f64; first.values().len()];
    for map in maps {
        for (a, &v) in acc.iter_mut().zip(map.values()) {
            *a *= v as f64;
        }
    }
    ScoreMap::new(
        first.height(),
        first.width(),
        acc.into_iter().map(|a| a as f32).collect(),
    )
}

/// How per-word maps of one phrase are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    SubjectFocused,
    Average,
    Multiplication,
}

/// Whether fusion acts on raw cross-attention or on per-word enhanced maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStage {
    #[default]
    Cross,
    Enhanced,
}

impl Aggregator {
    pub fn fuse(self, maps: &[ScoreMap], phrase: &PhraseSpec, head_pinned: bool) -> Result<ScoreMap> {
        match self {
            Aggregator::SubjectFocused => {
                let mut weights = head_similarity_weights(phrase)?;
                if head_pinned {
                    weights = weights.with_head_pinned();
                }
                fuse_word_maps(maps, &weights)
            }
            Aggregator::Average => fuse_word_maps(maps, &WordWeights::uniform(maps.len())?),
            Aggregator::Multiplication => multiply_maps(maps),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::SubjectFocused => "subject_focused",
            Aggregator::Average => "average",
            Aggregator::Multiplication => "multiplication",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject_focused" => Ok(Aggregator::SubjectFocused),
            "average" => Ok(Aggregator::Average),
            "multiplication" => Ok(Aggregator::Multiplication),
            other => Err(Error::InvalidArgument(format!("unknown aggregator `{other}`"))),
        }
    }
}

impl fmt::Display for FusionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionStage::Cross => "cross",
            FusionStage::Enhanced => "enhanced",
        })
    }
}

impl FromStr for FusionStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(FusionStage::Cross),
            "enhanced" => Ok(FusionStage::Enhanced),
            other => Err(Error::InvalidArgument(format!("unknown fusion stage `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phrase(embeddings: Vec<Vec<f64>>) -> PhraseSpec {
        let n = embeddings.len();
        PhraseSpec {
            phrase_id: "p".into(),
            text: None,
            word_token_ids: (0..n as u32).collect(),
            head_index: n.saturating_sub(1),
            word_embeddings: embeddings,
            is_plural: false,
            is_thing: true,
        }
    }

    #[test]
    fn single_word_gets_full_weight() {
        let w = head_similarity_weights(&phrase(vec![vec![0.3, -2.0]])).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn two_word_closed_form() {
        let w = head_similarity_weights(&phrase(vec![vec![1.0, 0.0], vec![1.0, 1.0]])).unwrap();
        // s = [1, 2]; softmax = [1/(1+e), e/(1+e)]
        let e = std::f64::consts::E;
        assert!((w.as_slice()[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w.as_slice()[0] - 0.26894).abs() < 1e-4);
        assert!((w.as_slice()[1] - 0.73106).abs() < 1e-4);
    }

    #[test]
    fn identical_embeddings_are_uniform() {
        let w = head_similarity_weights(&phrase(vec![vec![0.5, 0.5]; 4])).unwrap();
        for &x in w.as_slice() {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_errors() {
        assert!(head_similarity_weights(&phrase(vec![])).is_err());
        assert!(head_similarity_weights(&phrase(vec![vec![1.0], vec![1.0, 2.0]])).is_err());
        assert!(head_similarity_weights(&phrase(vec![vec![f64::NAN]])).is_err());
    }

    #[test]
    fn head_pinning() {
        let w = head_similarity_weights(&phrase(vec![vec![1.0, 0.0], vec![1.0, 1.0]]))
            .unwrap()
            .with_head_pinned();
        assert_eq!(w.as_slice()[1], 1.0);
        assert!((w.as_slice()[0] - 0.26894).abs() < 1e-4);
    }

    #[test]
    fn fuse_examples() {
        let a = ScoreMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = ScoreMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let w = WordWeights::new(vec![0.25, 0.75]).unwrap();
        let out = fuse_word_maps(&[a.clone(), b], &w).unwrap();
        assert_eq!(out.values(), &[0.25, 0.75]);

        let one = WordWeights::new(vec![1.0]).unwrap();
        assert_eq!(fuse_word_maps(std::slice::from_ref(&a), &one).unwrap(), a);
    }

    #[test]
    fn fuse_errors() {
        let a = ScoreMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = ScoreMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        let w = WordWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(fuse_word_maps(&[a.clone(), b], &w).is_err());
        assert!(fuse_word_maps(&[a], &w).is_err());
        assert!(fuse_word_maps(&[], &w).is_err());
    }

    #[test]
    fn alternative_aggregators() {
        let a = ScoreMap::new(1, 2, vec![0.5, 1.0]).unwrap();
        let b = ScoreMap::new(1, 2, vec![0.5, 0.25]).unwrap();
        let p = phrase(vec![vec![1.0], vec![1.0]]);
        let avg = Aggregator::Average.fuse(&[a.clone(), b.clone()], &p, false).unwrap();
        assert_eq!(avg.values(), &[0.5, 0.625]);
        let prod = Aggregator::Multiplication.fuse(&[a, b], &p, false).unwrap();
        assert_eq!(prod.values(), &[0.25, 0.25]);
    }

    #[test]
    fn switch_names_round_trip() {
        for a in [Aggregator::SubjectFocused, Aggregator::Average, Aggregator::Multiplication] {
            assert_eq!(a.to_string().parse::<Aggregator>().unwrap(), a);
        }
        for s in [FusionStage::Cross, FusionStage::Enhanced] {
            assert_eq!(s.to_string().parse::<FusionStage>().unwrap(), s);
        }
        assert!("max".parse::<Aggregator>().is_err());
    }
}
