#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use attnseg::{
    BinaryMask, CandidateMaskPool, PhraseSpec, Sample, SampleManifest, ScoreMap,
    SelfAttentionMatrix,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

pub fn golden_manifests() -> Vec<PathBuf> {
    vec![
        golden_dir().join("golden-000/manifest.json"),
        golden_dir().join("golden-001/manifest.json"),
    ]
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ScoreMap {
    ScoreMap::from_fn(h, w, |_, _| rng.gen::<f32>()).unwrap()
}

/// Self-attention whose rows are softmaxes of random logits.
pub fn softmax_self_attention(rng: &mut ChaCha8Rng, res: usize, sharpness: f64) -> SelfAttentionMatrix {
    let n = res * res;
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n {
        let logits: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * sharpness).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        values.extend(exps.iter().map(|e| (e / total) as f32));
    }
    SelfAttentionMatrix::new(res, res, values).unwrap()
}

pub fn random_phrase(rng: &mut ChaCha8Rng, id: &str, words: usize, first_token: u32) -> PhraseSpec {
    let dim = 4;
    PhraseSpec {
        phrase_id: id.to_string(),
        text: None,
        word_token_ids: (0..words as u32).map(|k| first_token + k).collect(),
        head_index: words - 1,
        word_embeddings: (0..words)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        is_plural: rng.gen(),
        is_thing: rng.gen(),
    }
}

/// Assembles a sample without touching the filesystem.
pub fn memory_sample(
    phrases: Vec<PhraseSpec>,
    cross_maps: BTreeMap<u32, ScoreMap>,
    self_attention: SelfAttentionMatrix,
    pool: Vec<BinaryMask>,
    gt_masks: Vec<BinaryMask>,
    image_size: usize,
) -> Sample {
    let manifest = SampleManifest {
        sample_id: "mem".into(),
        image_path: PathBuf::from("image.png"),
        image_size: [image_size, image_size],
        cross_attention_paths: cross_maps
            .keys()
            .map(|&t| (t, PathBuf::from(format!("cross/{t}.atsb"))))
            .collect(),
        self_attention_path: PathBuf::from("self.atsb"),
        candidate_pool_path: PathBuf::from("pool.json"),
        gt_mask_paths: phrases
            .iter()
            .map(|p| PathBuf::from(format!("gt/{}.png", p.phrase_id)))
            .collect(),
        phrases,
        metadata: Default::default(),
        candidate_mask_paths: Vec::new(),
    };
    Sample {
        manifest,
        cross_maps,
        self_attention,
        pool: CandidateMaskPool::new(pool).unwrap(),
        gt_masks,
    }
}

/// Blobby random mask: union of a few rectangles, sometimes empty.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(h, w);
    let rects = rng.gen_range(0..4);
    for _ in 0..rects {
        let (i0, j0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (i1, j1) = (rng.gen_range(i0..h) + 1, rng.gen_range(j0..w) + 1);
        for i in i0..i1 {
            for j in j0..j1 {
                m.set(i, j, true);
            }
        }
    }
    m
}

/// Copy of `base` with each pixel flipped with probability `p`.
pub fn perturb(rng: &mut ChaCha8Rng, base: &BinaryMask, p: f64) -> BinaryMask {
    BinaryMask::from_fn(base.height(), base.width(), |i, j| {
        base.get(i, j) ^ rng.gen_bool(p)
    })
}
