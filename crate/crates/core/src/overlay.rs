//! Qualitative overlays: a phrase's mask tinted over the source image with
//! the phrase text in the top-left corner.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Opacity of the mask tint.
pub const TINT_ALPHA: f32 = 0.5;
const GLYPH: u32 = 8;
const PAD: u32 = 2;

/// Stable color for a phrase id: hue from a SHA-256 digest, fixed saturation
/// and value so labels stay readable.
pub fn phrase_color(phrase_id: &str) -> Rgb<u8> {
    let digest = Sha256::digest(phrase_id.as_bytes());
    let hue = u16::from_be_bytes([digest[0], digest[1]]) as f32 / 65536.0 * 360.0;
    hsv_to_rgb(hue, 0.85, 0.95)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> Rgb<u8> {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to_u8 = |f: f32| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([to_u8(r), to_u8(g), to_u8(b)])
}

pub fn blend(base: Rgb<u8>, tint: Rgb<u8>, alpha: f32) -> Rgb<u8> {
    let mix = |a: u8, b: u8| ((1.0 - alpha) * a as f32 + alpha * b as f32).round() as u8;
    Rgb([
        mix(base[0], tint[0]),
        mix(base[1], tint[1]),
        mix(base[2], tint[2]),
    ])
}

/// Pixel box `(x, y, w, h)` covered by the label, clipped to the image.
pub fn label_box(image_width: u32, image_height: u32, label: &str) -> (u32, u32, u32, u32) {
    let chars = label.chars().count() as u32;
    let w = (chars * GLYPH + 2 * PAD).min(image_width);
    let h = (GLYPH + 2 * PAD).min(image_height);
    (0, 0, w, h)
}

fn draw_label(img: &mut RgbImage, label: &str, color: Rgb<u8>) {
    let (iw, ih) = img.dimensions();
    let (_, _, bw, bh) = label_box(iw, ih, label);
    for y in 0..bh {
        for x in 0..bw {
            img.put_pixel(x, y, Rgb([0, 0, 0]));
        }
    }
    for (k, ch) in label.chars().enumerate() {
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        let x0 = PAD + k as u32 * GLYPH;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits >> col & 1 == 1 {
                    let (x, y) = (x0 + col, PAD + row as u32);
                    if x < bw && y < bh {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
    }
}

/// Composites `mask` over `image` in the phrase's color and stamps `label`.
pub fn render_overlay(image: &RgbImage, mask: &BinaryMask, phrase_id: &str, label: &str) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if (h as usize, w as usize) != mask.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: (h as usize, w as usize),
            actual: mask.resolution(),
        });
    }
    let color = phrase_color(phrase_id);
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(y as usize, x as usize) {
            *px = blend(*px, color, TINT_ALPHA);
        }
    }
    draw_label(&mut out, label, color);
    Ok(out)
}
