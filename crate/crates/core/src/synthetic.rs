//! Deterministic synthetic scenes in the on-disk sample format.
//!
//! Each scene is a 64×64 image over a 16×16 self-attention grid and 8×8
//! cross-attention maps. Every phrase carries planted errors that one stage
//! of the pipeline is meant to fix:
//!
//! - the cross-attention of every phrase has a spurious blob around the
//!   binarization threshold and well under the anchor threshold (noise region);
//! - "man" and "sky" are only partly lit by cross-attention, while
//!   self-attention and the candidate pool know their full extent
//!   (under-segmentation);
//! - self-attention of "trees" leaks into a neighbouring strip of wall that
//!   only a clean candidate mask removes (over-segmentation).
//!
//! The second scene is the mirror image of the first.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::lsp::{ScoreMap, SelfAttentionMatrix};
use crate::manifest::{write_pool_index, PhraseSpec, SampleManifest};
use crate::mask::BinaryMask;
use crate::tensor_store;

pub const IMAGE_SIZE: usize = 64;
pub const SELF_RES: usize = 16;
pub const CROSS_RES: usize = 8;
const SCALE: usize = IMAGE_SIZE / SELF_RES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Region {
    Sky,
    ManHead,
    ManBody,
    DogLeft,
    DogRight,
    Trees,
    Grass,
    Wall,
}

impl Region {
    fn color(self) -> [u8; 3] {
        match self {
            Region::Sky => [120, 170, 235],
            Region::ManHead => [225, 185, 150],
            Region::ManBody => [60, 70, 150],
            Region::DogLeft => [150, 100, 50],
            Region::DogRight => [170, 120, 60],
            Region::Trees => [40, 120, 50],
            Region::Grass => [90, 180, 70],
            Region::Wall => [180, 175, 165],
        }
    }
}

/// Region label of a self-grid cell in the unmirrored scene.
fn region_at(i: usize, j: usize) -> Region {
    match (i, j) {
        (0..=3, _) => Region::Sky,
        (14..=15, _) => Region::Grass,
        (4..=7, 2..=5) => Region::ManHead,
        (8..=13, 2..=5) => Region::ManBody,
        (10..=13, 7..=9) => Region::DogLeft,
        (10..=13, 11..=13) => Region::DogRight,
        (4..=9, 10..=15) => Region::Trees,
        _ => Region::Wall,
    }
}

/// Wall cells whose attention is partly captured by trees.
fn in_tree_leak(i: usize, j: usize) -> bool {
    (4..=9).contains(&i) && (8..=9).contains(&j)
}

struct Scene {
    mirrored: bool,
}

impl Scene {
    fn col(&self, j: usize, width: usize) -> usize {
        if self.mirrored {
            width - 1 - j
        } else {
            j
        }
    }

    fn region(&self, i: usize, j: usize) -> Region {
        region_at(i, self.col(j, SELF_RES))
    }

    fn leak(&self, i: usize, j: usize) -> bool {
        in_tree_leak(i, self.col(j, SELF_RES))
    }

    fn self_attention(&self) -> Result<SelfAttentionMatrix> {
        let n = SELF_RES * SELF_RES;
        let cells: Vec<(usize, usize)> = (0..n).map(|p| (p / SELF_RES, p % SELF_RES)).collect();
        let delta = 0.05f64;
        let mut values = Vec::with_capacity(n * n);
        for &(i, j) in &cells {
            let own = self.region(i, j);
            let members = |pred: &dyn Fn(usize, usize) -> bool| {
                cells.iter().filter(|&&(a, b)| pred(a, b)).count() as f64
            };
            let same = |a: usize, b: usize| self.region(a, b) == own;
            let tree_or_leak = |a: usize, b: usize| self.region(a, b) == Region::Trees || self.leak(a, b);
            let n_same = members(&same);
            let n_tree_or_leak = members(&tree_or_leak);
            for &(a, b) in &cells {
                let mut v = delta / n as f64;
                if own == Region::Trees {
                    if same(a, b) {
                        v += 0.5 * (1.0 - delta) / n_same;
                    }
                    if tree_or_leak(a, b) {
                        v += 0.5 * (1.0 - delta) / n_tree_or_leak;
                    }
                } else if same(a, b) {
                    v += (1.0 - delta) / n_same;
                }
                values.push(v as f32);
            }
        }
        SelfAttentionMatrix::new(SELF_RES, SELF_RES, values)
    }

    /// Cross-attention map on the 8×8 grid. `level` gives the score of each
    /// cell from its (unmirrored) coarse coordinates; a small texture keeps
    /// the map from being piecewise constant.
    fn cross_map(&self, level: impl Fn(usize, usize) -> f32) -> Result<ScoreMap> {
        ScoreMap::from_fn(CROSS_RES, CROSS_RES, |r, c| {
            let uc = self.col(c, CROSS_RES);
            let texture = ((r * 7 + uc * 13) % 11) as f32 / 11.0 * 0.02;
            (level(r, uc) + texture).clamp(0.0, 1.0)
        })
    }

    fn region_mask(&self, regions: &[Region]) -> BinaryMask {
        BinaryMask::from_fn(IMAGE_SIZE, IMAGE_SIZE, |y, x| {
            regions.contains(&self.region(y / SCALE, x / SCALE))
        })
    }

    /// Candidate masks are slightly imperfect: their bottom image row is
    /// dropped, as an automatic mask generator would miss a sliver.
    fn candidate_mask(&self, regions: &[Region]) -> BinaryMask {
        let full = self.region_mask(regions);
        BinaryMask::from_fn(IMAGE_SIZE, IMAGE_SIZE, |y, x| {
            full.get(y, x) && (y + 1 == IMAGE_SIZE || full.get(y + 1, x))
        })
    }

    fn image(&self) -> RgbImage {
        RgbImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let base = self.region(y / SCALE, x / SCALE).color();
            let shade = ((x * 3 + y * 5) % 9) as u8;
            Rgb([
                base[0].saturating_add(shade),
                base[1].saturating_add(shade),
                base[2].saturating_add(shade),
            ])
        })
    }
}

// Coarse-grid predicates for cross-attention levels (unmirrored coordinates).
fn coarse_in(r: usize, c: usize, rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> bool {
    rows.contains(&r) && cols.contains(&c)
}

struct PhraseDef {
    id: &'static str,
    text: &'static str,
    tokens: &'static [u32],
    embeddings: Vec<Vec<f64>>,
    is_plural: bool,
    is_thing: bool,
    gt: &'static [Region],
}

fn embedding(seed: usize, towards: Option<(&[f64], f64)>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..8)
        .map(|k| (((seed * 31 + k * 17) % 13) as f64 / 13.0 - 0.5) * 0.6)
        .collect();
    if let Some((head, mix)) = towards {
        for (a, b) in v.iter_mut().zip(head) {
            *a = (1.0 - mix) * *a + mix * b;
        }
    }
    v
}

fn phrase_defs() -> Vec<PhraseDef> {
    let man = embedding(3, None).into_iter().map(|x| x + 0.4).collect::<Vec<_>>();
    let dogs = embedding(5, None).into_iter().map(|x| x - 0.3).collect::<Vec<_>>();
    let sky = embedding(7, None).into_iter().map(|x| x + 0.35).collect::<Vec<_>>();
    let trees = embedding(11, None).into_iter().map(|x| 0.3 - x).collect::<Vec<_>>();
    vec![
        PhraseDef {
            id: "man",
            text: "a tall man",
            tokens: &[1, 2, 3],
            embeddings: vec![embedding(1, None), embedding(2, Some((&man, 0.5))), man],
            is_plural: false,
            is_thing: true,
            gt: &[Region::ManHead, Region::ManBody],
        },
        PhraseDef {
            id: "dogs",
            text: "two dogs",
            tokens: &[5, 6],
            embeddings: vec![embedding(4, Some((&dogs, 0.3))), dogs],
            is_plural: true,
            is_thing: true,
            gt: &[Region::DogLeft, Region::DogRight],
        },
        PhraseDef {
            id: "sky",
            text: "the sky",
            tokens: &[8, 9],
            embeddings: vec![embedding(6, None), sky],
            is_plural: false,
            is_thing: false,
            gt: &[Region::Sky],
        },
        PhraseDef {
            id: "trees",
            text: "the trees",
            tokens: &[11, 12],
            embeddings: vec![embedding(6, None), trees],
            is_plural: true,
            is_thing: false,
            gt: &[Region::Trees],
        },
    ]
}

/// Cross-attention level of each word token on the unmirrored coarse grid.
fn token_level(token: u32, r: usize, c: usize) -> f32 {
    let background = 0.04;
    match token {
        // "a": nearly flat
        1 => 0.12,
        // "tall": the man, diffuse
        2 => {
            if coarse_in(r, c, 2..=6, 1..=2) {
                0.45
            } else {
                background
            }
        }
        // "man": head lit, body faint, noise blob on the sky
        3 => {
            if coarse_in(r, c, 2..=3, 1..=2) {
                1.0
            } else if coarse_in(r, c, 4..=6, 1..=2) {
                0.15
            } else if coarse_in(r, c, 0..=1, 5..=6) {
                0.38
            } else {
                background
            }
        }
        // "two"
        5 => {
            if coarse_in(r, c, 5..=6, 3..=6) {
                0.3
            } else {
                0.1
            }
        }
        // "dogs": both dogs, noise blob on the wall
        6 => {
            if coarse_in(r, c, 5..=6, 4..=4) || coarse_in(r, c, 5..=6, 6..=6) {
                1.0
            } else if coarse_in(r, c, 2..=3, 3..=3) {
                0.38
            } else {
                background
            }
        }
        // "the"
        8 | 11 => 0.1,
        // "sky": left half lit, right half faint, noise on the grass
        9 => {
            if coarse_in(r, c, 0..=1, 0..=3) {
                1.0
            } else if coarse_in(r, c, 0..=1, 4..=7) {
                0.2
            } else if coarse_in(r, c, 7..=7, 1..=2) {
                0.38
            } else {
                background
            }
        }
        // "trees": canopy lit, noise on the grass
        12 => {
            if coarse_in(r, c, 2..=4, 5..=7) {
                1.0
            } else if coarse_in(r, c, 7..=7, 5..=6) {
                0.38
            } else {
                background
            }
        }
        _ => background,
    }
}

const POOL: &[(&str, &[Region])] = &[
    ("sky", &[Region::Sky]),
    ("man_head", &[Region::ManHead]),
    ("man", &[Region::ManHead, Region::ManBody]),
    ("dog_left", &[Region::DogLeft]),
    ("dog_right", &[Region::DogRight]),
    ("trees", &[Region::Trees]),
    ("grass", &[Region::Grass]),
    ("wall", &[Region::Wall]),
];

fn write_scene(dir: &Path, sample_id: &str, scene: &Scene) -> Result<PathBuf> {
    for sub in ["cross", "gt", "pool"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let image_path = dir.join("image.png");
    scene
        .image()
        .save_with_format(&image_path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: image_path.clone(),
            source: e,
        })?;
    tensor_store::write_self_attention(&scene.self_attention()?, dir.join("self.atsb"))?;

    let defs = phrase_defs();
    let mut cross_paths = BTreeMap::new();
    let mut phrases = Vec::new();
    let mut gt_paths = Vec::new();
    for def in &defs {
        for &t in def.tokens {
            let rel = PathBuf::from(format!("cross/{t:03}.atsb"));
            let map = scene.cross_map(|r, c| token_level(t, r, c))?;
            tensor_store::write_score_map(&map, dir.join(&rel))?;
            cross_paths.insert(t, rel);
        }
        let rel = PathBuf::from(format!("gt/{}.png", def.id));
        tensor_store::write_mask(&scene.region_mask(def.gt), dir.join(&rel))?;
        gt_paths.push(rel);
        phrases.push(PhraseSpec {
            phrase_id: def.id.to_string(),
            text: Some(def.text.to_string()),
            word_token_ids: def.tokens.to_vec(),
            head_index: def.tokens.len() - 1,
            word_embeddings: def.embeddings.clone(),
            is_plural: def.is_plural,
            is_thing: def.is_thing,
        });
    }

    let mut pool_masks = Vec::new();
    for (name, regions) in POOL {
        let rel = PathBuf::from(format!("{name}.png"));
        tensor_store::write_mask(&scene.candidate_mask(regions), dir.join("pool").join(&rel))?;
        pool_masks.push(rel);
    }
    // degenerate candidate, as automatic generators occasionally emit
    let rel = PathBuf::from("empty.png");
    tensor_store::write_mask(&BinaryMask::empty(IMAGE_SIZE, IMAGE_SIZE), dir.join("pool").join(&rel))?;
    pool_masks.push(rel);
    write_pool_index(&pool_masks, dir.join("pool/pool.json"))?;

    let mut metadata = serde_json::Map::new();
    metadata.insert("pool_size".into(), pool_masks.len().into());
    metadata.insert("generator".into(), "attnseg synthetic scene".into());
    let manifest = SampleManifest {
        sample_id: sample_id.to_string(),
        image_path: "image.png".into(),
        image_size: [IMAGE_SIZE, IMAGE_SIZE],
        phrases,
        cross_attention_paths: cross_paths,
        self_attention_path: "self.atsb".into(),
        candidate_pool_path: "pool/pool.json".into(),
        gt_mask_paths: gt_paths,
        metadata,
        candidate_mask_paths: Vec::new(),
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// Writes the two golden scenes under `root` and returns their manifests.
pub fn write_golden_fixture(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for (k, mirrored) in [false, true].into_iter().enumerate() {
        let id = format!("golden-{k:03}");
        out.push(write_scene(&root.join(&id), &id, &Scene { mirrored })?);
    }
    Ok(out)
}
