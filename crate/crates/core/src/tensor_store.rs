//! ATSB tensor files and mask PNGs.
//!
//! Tensor file layout, all integers little-endian:
//!
//! | bytes          | content                                              |
//! |----------------|------------------------------------------------------|
//! | 4              | magic `ATSB`                                         |
//! | 2              | version (`u16`, currently 1)                         |
//! | 4              | header length `n` (`u32`)                            |
//! | n              | UTF-8 JSON `{"dtype":"f32","shape":[..],"layout":"row-major"}` |
//! | 4·prod(shape)  | IEEE-754 `f32` payload, row-major                    |
//!
//! Masks are 8-bit grayscale PNGs holding only 0 and 255.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsp::{ScoreMap, SelfAttentionMatrix};
use crate::mask::BinaryMask;

pub const MAGIC: &[u8; 4] = b"ATSB";
pub const VERSION: u16 = 1;
const PREAMBLE_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    layout: String,
}

/// Serializes a tensor to the ATSB byte layout.
pub fn encode_tensor(shape: &[usize], values: &[f32]) -> Result<Vec<u8>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "shape entries must be strictly positive, got {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    if values.len() != numel {
        return Err(Error::ValueCount {
            shape: shape.to_vec(),
            values: values.len(),
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let header = serde_json::to_vec(&Header {
        dtype: "f32".into(),
        shape: shape.to_vec(),
        layout: "row-major".into(),
    })?;
    let mut buf = Vec::with_capacity(PREAMBLE_LEN + header.len() + 4 * numel);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Parses ATSB bytes. `path` is only used for error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad_header = |reason: String| Error::BadHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 {
        return Err(bad_header(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(bad_header("truncated preamble".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header_end = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad_header(format!("header length {header_len} exceeds file size")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| bad_header(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(bad_header(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.layout != "row-major" {
        return Err(bad_header(format!("unsupported layout {:?}", header.layout)));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(bad_header(format!(
            "shape entries must be strictly positive, got {:?}",
            header.shape
        )));
    }
    let expected = header
        .shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad_header("shape overflows".into()))?;
    let payload = &bytes[header_end..];
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            shape: header.shape,
            expected,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.shape, values))
}

pub fn write_tensor(shape: &[usize], values: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(shape, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Reads a rank-2 `[h, w]` tensor as a score map with values in `[0, 1]`.
pub fn read_score_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let (shape, values) = read_tensor(path)?;
    let [h, w] = shape[..] else {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("score map must have rank 2, got shape {shape:?}"),
        });
    };
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("score {v} outside [0, 1]"),
        });
    }
    ScoreMap::new(h, w, values)
}

pub fn write_score_map(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&[map.height(), map.width()], map.values(), path)
}

/// Reads a rank-4 `[h, w, h, w]` tensor as a self-attention matrix.
pub fn read_self_attention(path: impl AsRef<Path>) -> Result<SelfAttentionMatrix> {
    let path = path.as_ref();
    let (shape, values) = read_tensor(path)?;
    match shape[..] {
        [h, w, h2, w2] if h == h2 && w == w2 => {
            SelfAttentionMatrix::new(h, w, values).map_err(|e| Error::BadHeader {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        }
        _ => Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("self-attention must have shape [h, w, h, w], got {shape:?}"),
        }),
    }
}

pub fn write_self_attention(matrix: &SelfAttentionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = matrix.resolution();
    write_tensor(&[h, w, h, w], matrix.values(), path)
}

/// Decodes a `{0, 255}` grayscale PNG. Any other pixel value is an error.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::BadMask {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let mut bits = Vec::with_capacity((w * h) as usize);
    for (idx, p) in gray.pixels().enumerate() {
        match p.0[0] {
            0 => bits.push(false),
            255 => bits.push(true),
            v => {
                return Err(Error::BadMask {
                    path: path.to_path_buf(),
                    reason: format!("pixel {idx} has value {v}, expected 0 or 255"),
                })
            }
        }
    }
    BinaryMask::from_bits(h as usize, w as usize, bits)
}

pub fn mask_to_image(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask_to_image(mask)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}
