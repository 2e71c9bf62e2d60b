//! Locate-to-segment processing.
//!
//! A phrase's cross-attention map locates a handful of confident anchor
//! pixels. The self-attention rows of those anchors are summed into an
//! enhanced map that follows object extent instead of attention peaks, which
//! is then min-max normalized, upsampled to image resolution and thresholded.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Dense row-major grid of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "score map resolution must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.width + j]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub(crate) fn ensure_resolution(&self, expected: (usize, usize)) -> Result<()> {
        if self.resolution() != expected {
            return Err(Error::ResolutionMismatch {
                expected,
                actual: self.resolution(),
            });
        }
        Ok(())
    }
}

/// Pixel-to-pixel attention at one resolution. Row `p` holds the attention
/// map of pixel `p` (row-major flat index) over all pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionMatrix {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

/// Allowed deviation of a self-attention row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

impl SelfAttentionMatrix {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "self-attention resolution must be positive".into(),
            ));
        }
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        for (r, row) in values.chunks_exact(n).enumerate() {
            let mut sum = 0.0f64;
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        index: r * n + c,
                        value: v,
                    });
                }
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative self-attention weight {v} at row {r}, column {c}"
                    )));
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "self-attention row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels, i.e. rows.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, pixel: usize) -> &[f32] {
        let n = self.pixels();
        &self.values[pixel * n..(pixel + 1) * n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Anchor pixels at the self-attention resolution, sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    resolution: (usize, usize),
    pixels: Vec<(usize, usize)>,
    fallback: bool,
}

impl AnchorSet {
    pub fn new(resolution: (usize, usize), mut pixels: Vec<(usize, usize)>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Empty("anchor set"));
        }
        for &(i, j) in &pixels {
            if i >= resolution.0 || j >= resolution.1 {
                return Err(Error::InvalidArgument(format!(
                    "anchor ({i}, {j}) outside {}x{}",
                    resolution.0, resolution.1
                )));
            }
        }
        pixels.sort_unstable();
        pixels.dedup();
        Ok(Self {
            resolution,
            pixels,
            fallback: false,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// True when nothing cleared the threshold and the argmax was used.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }
}

fn check_threshold(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {value}"
        )));
    }
    Ok(())
}

/// Elementwise arithmetic mean of equally sized maps.
pub fn average_maps(maps: &[ScoreMap]) -> Result<ScoreMap> {
    let first = maps.first().ok_or(Error::Empty("map list"))?;
    let mut acc = vec![0.0f64; first.values.len()];
    for map in maps {
        map.ensure_resolution(first.resolution())?;
        for (a, &v) in acc.iter_mut().zip(&map.values) {
            *a += v as f64;
        }
    }
    let n = maps.len() as f64;
    let values = acc.into_iter().map(|a| (a / n) as f32).collect();
    ScoreMap::new(first.height, first.width, values)
}

/// Nearest-neighbour upsampling by integer factors.
pub fn upsample_nearest(map: &ScoreMap, target: (usize, usize)) -> Result<ScoreMap> {
    let (h, w) = map.resolution();
    let (th, tw) = target;
    if th == 0 || tw == 0 || th % h != 0 || tw % w != 0 {
        return Err(Error::InvalidArgument(format!(
            "target {th}x{tw} is not an integer multiple of {h}x{w}"
        )));
    }
    let (fy, fx) = (th / h, tw / w);
    let mut values = Vec::with_capacity(th * tw);
    for i in 0..th {
        let row = &map.values[(i / fy) * w..(i / fy + 1) * w];
        values.extend((0..tw).map(|j| row[j / fx]));
    }
    Ok(ScoreMap {
        height: th,
        width: tw,
        values,
    })
}

/// Pixels scoring strictly above `beta`, before any fallback. May be empty.
/// The comparison happens in `f32`, the precision scores are stored in.
pub fn pixels_above(map: &ScoreMap, beta: f64) -> Vec<(usize, usize)> {
    let w = map.width;
    let beta = beta as f32;
    map.values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > beta)
        .map(|(p, _)| (p / w, p % w))
        .collect()
}

/// Selects anchor pixels on the cross-attention map after bringing it to the
/// self-attention resolution. An empty selection falls back to the argmax
/// (first in row-major order on ties).
pub fn select_anchors(cross: &ScoreMap, beta: f64, target: (usize, usize)) -> Result<AnchorSet> {
    check_threshold("beta", beta)?;
    let up = upsample_nearest(cross, target)?;
    let pixels = pixels_above(&up, beta);
    if !pixels.is_empty() {
        return Ok(AnchorSet {
            resolution: target,
            pixels,
            fallback: false,
        });
    }
    let mut best = 0;
    for (p, &v) in up.values.iter().enumerate() {
        if v > up.values[best] {
            best = p;
        }
    }
    Ok(AnchorSet {
        resolution: target,
        pixels: vec![(best / target.1, best % target.1)],
        fallback: true,
    })
}

fn normalize_f64(height: usize, width: usize, raw: &[f64]) -> ScoreMap {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let values = if range > 0.0 {
        raw.iter().map(|&v| ((v - lo) / range) as f32).collect()
    } else {
        vec![0.0; raw.len()]
    };
    ScoreMap {
        height,
        width,
        values,
    }
}

/// Min-max normalization to `[0, 1]`. A constant map becomes all zeros.
pub fn min_max_normalize(map: &ScoreMap) -> ScoreMap {
    let raw: Vec<f64> = map.values.iter().map(|&v| v as f64).collect();
    normalize_f64(map.height, map.width, &raw)
}

/// Sums the self-attention rows of every anchor and min-max normalizes the
/// result.
pub fn aggregate_self_attention(
    anchors: &AnchorSet,
    self_attn: &SelfAttentionMatrix,
) -> Result<ScoreMap> {
    let (h, w) = self_attn.resolution();
    if anchors.resolution != (h, w) {
        return Err(Error::ResolutionMismatch {
            expected: (h, w),
            actual: anchors.resolution,
        });
    }
    let mut acc = vec![0.0f64; h * w];
    for &(i, j) in &anchors.pixels {
        if i >= h || j >= w {
            return Err(Error::InvalidArgument(format!(
                "anchor ({i}, {j}) outside {h}x{w}"
            )));
        }
        for (a, &v) in acc.iter_mut().zip(self_attn.row(i * w + j)) {
            *a += v as f64;
        }
    }
    Ok(normalize_f64(h, w, &acc))
}

/// Bilinear resize with pixel-centre sampling (corners not aligned), the
/// same convention as `align_corners=False` in common tensor libraries.
pub fn upsample_bilinear(map: &ScoreMap, target: (usize, usize)) -> Result<ScoreMap> {
    let (h, w) = map.resolution();
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::InvalidArgument(format!(
            "target {th}x{tw} is smaller than source {h}x{w}"
        )));
    }
    let ys = axis_taps(h, th);
    let xs = axis_taps(w, tw);
    let mut values = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &ys {
        let r0 = &map.values[y0 * w..(y0 + 1) * w];
        let r1 = &map.values[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = (1.0 - fx) * r0[x0] as f64 + fx * r0[x1] as f64;
            let bottom = (1.0 - fx) * r1[x0] as f64 + fx * r1[x1] as f64;
            values.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    Ok(ScoreMap {
        height: th,
        width: tw,
        values,
    })
}

/// Source indices and blend factor for each destination index along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Pixel is foreground iff its score is strictly above `alpha`.
pub fn binarize(map: &ScoreMap, alpha: f64) -> Result<BinaryMask> {
    check_threshold("alpha", alpha)?;
    let alpha = alpha as f32;
    let bits = map.values.iter().map(|&v| v > alpha).collect();
    BinaryMask::from_bits(map.height, map.width, bits)
}
