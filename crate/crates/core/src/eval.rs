//! Average Recall over per-phrase mask IoU.
//!
//! Recall at threshold `t` is the fraction of phrases whose IoU is at least
//! `t`. The reported number is the trapezoidal area under the recall curve
//! on a uniform threshold grid spanning `[0, 1]`, as a percentage.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_GRID_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub phrase_id: String,
    pub iou: f64,
    pub is_plural: bool,
    pub is_thing: bool,
}

/// `|a ∩ b| / |a ∪ b|`, zero when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection_count(b)? as f64 / union as f64)
}

/// Thresholds `0, step, 2·step, …, 1`. `step` must divide 1.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 1], got {step}"
        )));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "grid step {step} does not divide [0, 1] evenly"
        )));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

pub fn recall_curve(records: &[EvalRecord], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "thresholds must be strictly ascending".into(),
        ));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    let n = records.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = records.iter().filter(|r| r.iou >= t).count();
            (t, hits as f64 / n)
        })
        .collect())
}

/// Trapezoidal area under a recall curve spanning `[0, 1]`, times 100.
pub fn average_recall(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument(
            "a recall curve needs at least two points".into(),
        ));
    }
    let (first, last) = (curve[0].0, curve[curve.len() - 1].0);
    if first.abs() > 1e-12 || (last - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "recall curve spans [{first}, {last}], expected [0, 1]"
        )));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let (t0, r0) = w[0];
        let (t1, r1) = w[1];
        if !(t0 < t1) {
            return Err(Error::InvalidArgument(
                "recall curve thresholds must be strictly ascending".into(),
            ));
        }
        area += 0.5 * (r0 + r1) * (t1 - t0);
    }
    Ok(area * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Overall,
    Singular,
    Plural,
    Thing,
    Stuff,
}

impl Split {
    /// Column order of the report table.
    pub const ALL: [Split; 5] = [
        Split::Overall,
        Split::Singular,
        Split::Plural,
        Split::Thing,
        Split::Stuff,
    ];

    pub fn contains(self, record: &EvalRecord) -> bool {
        match self {
            Split::Overall => true,
            Split::Singular => !record.is_plural,
            Split::Plural => record.is_plural,
            Split::Thing => record.is_thing,
            Split::Stuff => !record.is_thing,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Split::Overall => "Overall",
            Split::Singular => "Singular",
            Split::Plural => "Plural",
            Split::Thing => "Thing",
            Split::Stuff => "Stuff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: Split,
    pub phrases: usize,
    /// Absent when the split has no phrases.
    pub average_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub grid_step: f64,
    /// Set when the grid differs from the 0.01 default, since AR values are
    /// then not comparable with published numbers.
    pub nonstandard_grid: bool,
    pub splits: Vec<SplitResult>,
}

impl EvalReport {
    pub fn split(&self, split: Split) -> &SplitResult {
        self.splits
            .iter()
            .find(|s| s.split == split)
            .expect("report carries every split")
    }

    pub fn average_recall(&self, split: Split) -> Option<f64> {
        self.split(split).average_recall
    }

    /// Aligned plain-text table, one column per split.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "Average Recall (%), IoU grid step {}", self.grid_step);
        if self.nonstandard_grid {
            out.push_str(" [non-standard grid]");
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "");
        for s in &self.splits {
            let _ = write!(out, " {:>9}", s.split.label());
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "AR");
        for s in &self.splits {
            match s.average_recall {
                Some(ar) => {
                    let _ = write!(out, " {:>9.2}", ar);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "Phrases");
        for s in &self.splits {
            let _ = write!(out, " {:>9}", s.phrases);
        }
        out.push('\n');
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

pub fn build_report(records: &[EvalRecord], grid_step: f64) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.iou)) {
        return Err(Error::InvalidArgument(format!(
            "IoU {} of phrase {} outside [0, 1]",
            r.iou, r.phrase_id
        )));
    }
    let grid = threshold_grid(grid_step)?;
    let mut splits = Vec::with_capacity(Split::ALL.len());
    for split in Split::ALL {
        let members: Vec<EvalRecord> = records.iter().filter(|r| split.contains(r)).cloned().collect();
        let average_recall = if members.is_empty() {
            None
        } else {
            Some(average_recall(&recall_curve(&members, &grid)?)?)
        };
        splits.push(SplitResult {
            split,
            phrases: members.len(),
            average_recall,
        });
    }
    Ok(EvalReport {
        grid_step,
        nonstandard_grid: (grid_step - DEFAULT_GRID_STEP).abs() > 1e-12,
        splits,
    })
}
