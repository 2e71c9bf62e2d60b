//! Refinement of a predicted mask against a pool of class-agnostic candidate
//! masks.
//!
//! `s1` is the share of the prediction covered by a candidate and catches
//! under-segmentation (the candidate extends the prediction). `s2` is the
//! share of the candidate covered by the prediction and catches
//! over-segmentation (the candidate is a clean part of a sloppy prediction).

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScorePair {
    pub s1: f64,
    pub s2: f64,
}

impl MatchScorePair {
    pub fn matches(&self, tau: f64) -> bool {
        self.s1 > tau || self.s2 > tau
    }
}

/// Candidate masks shared by every phrase of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateMaskPool {
    masks: Vec<BinaryMask>,
}

impl CandidateMaskPool {
    pub fn new(masks: Vec<BinaryMask>) -> Result<Self> {
        if let Some(first) = masks.first() {
            for m in &masks[1..] {
                first.ensure_same_resolution(m)?;
            }
        }
        Ok(Self { masks })
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

pub fn matching_scores(pred: &BinaryMask, candidate: &BinaryMask, epsilon: f64) -> Result<MatchScorePair> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let inter = pred.intersection_count(candidate)? as f64;
    let cand = candidate.count();
    let s1 = inter / (pred.count() as f64 + epsilon);
    let s2 = if cand == 0 { 0.0 } else { inter / cand as f64 };
    Ok(MatchScorePair { s1, s2 })
}

/// Indices of pool masks whose scores clear `tau`.
pub fn matched_candidates(
    pred: &BinaryMask,
    pool: &CandidateMaskPool,
    tau: f64,
    epsilon: f64,
) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let mut matched = Vec::new();
    for (k, cand) in pool.masks().iter().enumerate() {
        if matching_scores(pred, cand, epsilon)?.matches(tau) {
            matched.push(k);
        }
    }
    Ok(matched)
}

/// Union of every matched candidate, or the prediction itself when nothing
/// matches.
pub fn refine_mask(pred: &BinaryMask, pool: &CandidateMaskPool, tau: f64, epsilon: f64) -> Result<BinaryMask> {
    let matched = matched_candidates(pred, pool, tau, epsilon)?;
    if matched.is_empty() {
        return Ok(pred.clone());
    }
    let mut out = BinaryMask::empty(pred.height(), pred.width());
    for k in matched {
        out.union_with(&pool.masks()[k])?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, on: &[usize]) -> BinaryMask {
        BinaryMask::from_fn(1, w, |_, j| on.contains(&j))
    }

    #[test]
    fn identical_masks() {
        let m = mask(8, &[0, 1, 2, 3]);
        let s = matching_scores(&m, &m, 1e-6).unwrap();
        assert!((s.s1 - 4.0 / (4.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(s.s2, 1.0);
    }

    #[test]
    fn empty_prediction() {
        let s = matching_scores(&mask(8, &[]), &mask(8, &[1, 2]), 1e-6).unwrap();
        assert_eq!((s.s1, s.s2), (0.0, 0.0));
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let s = matching_scores(&mask(8, &[1]), &mask(8, &[]), 1e-6).unwrap();
        assert_eq!(s.s2, 0.0);
    }

    #[test]
    fn prediction_inside_candidate() {
        let s = matching_scores(&mask(8, &[1, 2]), &mask(8, &[0, 1, 2, 3]), 1e-6).unwrap();
        assert!((s.s1 - 1.0).abs() < 1e-6);
        assert_eq!(s.s2, 0.5);
    }

    #[test]
    fn scores_validate_inputs() {
        assert!(matching_scores(&mask(8, &[]), &mask(7, &[]), 1e-6).is_err());
        assert!(matching_scores(&mask(8, &[]), &mask(8, &[]), 0.0).is_err());
    }

    #[test]
    fn refine_takes_matched_superset() {
        let pred = mask(8, &[1, 2]);
        let cand = mask(8, &[0, 1, 2, 3]);
        let pool = CandidateMaskPool::new(vec![cand.clone(), mask(8, &[6, 7])]).unwrap();
        assert_eq!(refine_mask(&pred, &pool, 0.6, 1e-6).unwrap(), cand);
    }

    #[test]
    fn refine_unions_over_segmented_parts() {
        // prediction spills over two clean parts; each part is fully covered
        let pred = mask(8, &[0, 1, 2, 3, 4, 5]);
        let pool = CandidateMaskPool::new(vec![mask(8, &[0, 1]), mask(8, &[3, 4]), mask(8, &[6, 7])]).unwrap();
        assert_eq!(refine_mask(&pred, &pool, 0.6, 1e-6).unwrap(), mask(8, &[0, 1, 3, 4]));
    }

    #[test]
    fn refine_falls_back() {
        let pred = mask(8, &[1, 2]);
        let empty = CandidateMaskPool::default();
        assert_eq!(refine_mask(&pred, &empty, 0.6, 1e-6).unwrap(), pred);
        let weak = CandidateMaskPool::new(vec![mask(8, &[2, 3, 4, 5, 6])]).unwrap();
        // s1 = 1/2, s2 = 1/5
        assert_eq!(refine_mask(&pred, &weak, 0.6, 1e-6).unwrap(), pred);
    }

    #[test]
    fn refine_validates() {
        let pred = mask(8, &[1]);
        let pool = CandidateMaskPool::new(vec![mask(7, &[1])]).unwrap();
        assert!(refine_mask(&pred, &pool, 0.6, 1e-6).is_err());
        assert!(refine_mask(&pred, &CandidateMaskPool::default(), 1.0, 1e-6).is_err());
        assert!(CandidateMaskPool::new(vec![mask(7, &[1]), mask(8, &[1])]).is_err());
    }
}
