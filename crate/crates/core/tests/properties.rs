mod common;

use attnseg::eval::{self, EvalRecord, Split};
use attnseg::lsp::{self, AnchorSet, ScoreMap, SelfAttentionMatrix};
use attnseg::sffa::{self, WordWeights};
use attnseg::smr::{self, CandidateMaskPool, DEFAULT_EPSILON};
use attnseg::tensor_store;
use attnseg::{BinaryMask, PhraseSpec};
use proptest::prelude::*;
use proptest::sample::SizeRange;

fn score_map(h: usize, w: usize) -> impl Strategy<Value = ScoreMap> {
    prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |v| ScoreMap::new(h, w, v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |b| BinaryMask::from_bits(h, w, b).unwrap())
}

fn pool(h: usize, w: usize, size: impl Into<SizeRange>) -> impl Strategy<Value = Vec<BinaryMask>> {
    prop::collection::vec(mask(h, w), size)
}

fn self_attention(res: usize) -> impl Strategy<Value = SelfAttentionMatrix> {
    let n = res * res;
    prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |raw| {
        let mut values = Vec::with_capacity(n * n);
        for row in raw.chunks(n) {
            let total: f64 = row.iter().sum();
            values.extend(row.iter().map(|v| (v / total) as f32));
        }
        SelfAttentionMatrix::new(res, res, values).unwrap()
    })
}

fn phrase(words: usize, embeddings: Vec<Vec<f64>>) -> PhraseSpec {
    PhraseSpec {
        phrase_id: "p".into(),
        text: None,
        word_token_ids: (0..words as u32).collect(),
        head_index: words - 1,
        word_embeddings: embeddings,
        is_plural: false,
        is_thing: true,
    }
}

fn embeddings() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), n))
}

fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
    prop::collection::vec((0.0f64..=1.0, any::<bool>(), any::<bool>()), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(k, (iou, is_plural, is_thing))| EvalRecord {
                phrase_id: format!("r{k}"),
                iou,
                is_plural,
                is_thing,
            })
            .collect()
    })
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE / 2.0),
        Just(f32::MAX),
    ]
}

proptest! {
    #[test]
    fn tensor_round_trip_is_bitwise(
        (shape, values) in prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            (Just(shape), prop::collection::vec(finite_f32(), n))
        })
    ) {
        let bytes = tensor_store::encode_tensor(&shape, &values).unwrap();
        let (s, v) = tensor_store::decode_tensor(&bytes, "mem".as_ref()).unwrap();
        prop_assert_eq!(s, shape.clone());
        let bits = |x: &[f32]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&v), bits(&values));
        prop_assert_eq!(tensor_store::encode_tensor(&shape, &v).unwrap(), bytes);
    }

    #[test]
    fn min_max_normalize_is_idempotent(m in score_map(5, 7)) {
        let (lo, hi) = m.min_max();
        prop_assume!(hi > lo);
        let once = lsp::min_max_normalize(&m);
        let twice = lsp::min_max_normalize(&once);
        prop_assert_eq!(once.values(), twice.values());
        prop_assert_eq!(once.min_max(), (0.0, 1.0));
    }

    #[test]
    fn anchors_antitone_in_beta(m in score_map(4, 4), b1 in 0.01f64..0.99, b2 in 0.01f64..0.99) {
        let (lo, hi) = (b1.min(b2), b1.max(b2));
        let up = lsp::upsample_nearest(&m, (8, 8)).unwrap();
        let loose = lsp::pixels_above(&up, lo);
        let strict = lsp::pixels_above(&up, hi);
        prop_assert!(strict.iter().all(|p| loose.contains(p)));
        let a_lo = lsp::select_anchors(&m, lo, (8, 8)).unwrap();
        let a_hi = lsp::select_anchors(&m, hi, (8, 8)).unwrap();
        prop_assert!(a_hi.pixels().iter().all(|p| a_lo.pixels().contains(p)));
    }

    #[test]
    fn binarize_antitone_in_alpha(m in score_map(6, 6), a1 in 0.01f64..0.99, a2 in 0.01f64..0.99) {
        let loose = lsp::binarize(&m, a1.min(a2)).unwrap();
        let strict = lsp::binarize(&m, a1.max(a2)).unwrap();
        prop_assert!(strict.is_subset_of(&loose));
    }

    #[test]
    fn aggregation_is_permutation_equivariant(
        attn in self_attention(3),
        anchor_bits in prop::collection::vec(any::<bool>(), 9),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let anchors: Vec<(usize, usize)> = (0..9).filter(|&p| anchor_bits[p]).map(|p| (p / 3, p % 3)).collect();
        prop_assume!(!anchors.is_empty());
        let out = lsp::aggregate_self_attention(&AnchorSet::new((3, 3), anchors.clone()).unwrap(), &attn).unwrap();

        // pixel p is relabelled perm[p]
        let mut permuted = vec![0.0f32; 81];
        for p in 0..9 {
            for q in 0..9 {
                permuted[perm[p] * 9 + perm[q]] = attn.row(p)[q];
            }
        }
        let attn_p = SelfAttentionMatrix::new(3, 3, permuted).unwrap();
        let anchors_p: Vec<(usize, usize)> = anchors.iter().map(|&(i, j)| {
            let p = perm[i * 3 + j];
            (p / 3, p % 3)
        }).collect();
        let out_p = lsp::aggregate_self_attention(&AnchorSet::new((3, 3), anchors_p).unwrap(), &attn_p).unwrap();
        for p in 0..9 {
            let a = out.values()[p];
            let b = out_p.values()[perm[p]];
            prop_assert!((a - b).abs() <= 1e-5, "pixel {p}: {a} vs {b}");
        }
    }

    #[test]
    fn weights_form_a_distribution(e in embeddings()) {
        let w = sffa::head_similarity_weights(&phrase(e.len(), e)).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(w.as_slice().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn weights_invariant_to_score_shift(e in embeddings(), extra in -3.0f64..3.0) {
        // an extra shared component adds extra² to every score
        let shifted: Vec<Vec<f64>> = e.iter().map(|v| {
            let mut v = v.clone();
            v.push(extra);
            v
        }).collect();
        let w = sffa::head_similarity_weights(&phrase(e.len(), e)).unwrap();
        let ws = sffa::head_similarity_weights(&phrase(shifted.len(), shifted)).unwrap();
        for (a, b) in w.as_slice().iter().zip(ws.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_stays_within_map_bounds(
        maps in prop::collection::vec(score_map(4, 4), 1..5),
        raw in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let raw = &raw[..maps.len()];
        let total: f64 = raw.iter().sum();
        let weights = WordWeights::new(raw.iter().map(|w| w / total).collect()).unwrap();
        let fused = sffa::fuse_word_maps(&maps, &weights).unwrap();
        for p in 0..16 {
            let lo = maps.iter().map(|m| m.values()[p]).fold(f32::INFINITY, f32::min);
            let hi = maps.iter().map(|m| m.values()[p]).fold(f32::NEG_INFINITY, f32::max);
            let v = fused.values()[p];
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }

    #[test]
    fn fusing_identical_maps_is_identity(m in score_map(4, 4), e in embeddings()) {
        let n = e.len();
        let maps = vec![m.clone(); n];
        let w = sffa::head_similarity_weights(&phrase(n, e)).unwrap();
        let fused = sffa::fuse_word_maps(&maps, &w).unwrap();
        for (a, b) in fused.values().iter().zip(m.values()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn refinement_ignores_pool_order(
        pred in mask(5, 5),
        (masks, shuffled) in pool(5, 5, 0..7).prop_flat_map(|m| (Just(m.clone()), Just(m).prop_shuffle())),
        tau in 0.05f64..0.95,
    ) {
        let a = smr::refine_mask(&pred, &CandidateMaskPool::new(masks).unwrap(), tau, DEFAULT_EPSILON).unwrap();
        let b = smr::refine_mask(&pred, &CandidateMaskPool::new(shuffled).unwrap(), tau, DEFAULT_EPSILON).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn prediction_in_pool_is_kept(pred in mask(5, 5), mut masks in pool(5, 5, 0..6), at in any::<prop::sample::Index>(), tau in 0.05f64..0.95) {
        prop_assume!(!pred.is_empty());
        let k = at.index(masks.len() + 1);
        masks.insert(k, pred.clone());
        let refined = smr::refine_mask(&pred, &CandidateMaskPool::new(masks).unwrap(), tau, DEFAULT_EPSILON).unwrap();
        prop_assert!(pred.is_subset_of(&refined));
    }

    #[test]
    fn refinement_antitone_in_tau(pred in mask(5, 5), masks in pool(5, 5, 1..6), t1 in 0.05f64..0.95, t2 in 0.05f64..0.95) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let pool = CandidateMaskPool::new(masks).unwrap();
        let m_lo = smr::matched_candidates(&pred, &pool, lo, DEFAULT_EPSILON).unwrap();
        let m_hi = smr::matched_candidates(&pred, &pool, hi, DEFAULT_EPSILON).unwrap();
        prop_assert!(m_hi.iter().all(|k| m_lo.contains(k)));
        if !m_hi.is_empty() {
            let r_lo = smr::refine_mask(&pred, &pool, lo, DEFAULT_EPSILON).unwrap();
            let r_hi = smr::refine_mask(&pred, &pool, hi, DEFAULT_EPSILON).unwrap();
            prop_assert!(r_hi.is_subset_of(&r_lo));
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in mask(4, 6), b in mask(4, 6)) {
        let ab = eval::iou(&a, &b).unwrap();
        prop_assert_eq!(ab, eval::iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn recall_curve_nonincreasing(rs in records()) {
        let grid = eval::threshold_grid(0.01).unwrap();
        let curve = eval::recall_curve(&rs, &grid).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn single_record_ar_tracks_iou(v in 0.0f64..=1.0) {
        let r = EvalRecord { phrase_id: "r".into(), iou: v, is_plural: false, is_thing: false };
        let report = eval::build_report(&[r], 0.01).unwrap();
        let ar = report.average_recall(Split::Overall).unwrap();
        prop_assert!((ar - 100.0 * v).abs() <= 1.0);
    }

    #[test]
    fn raising_an_iou_never_lowers_ar(rs in records(), at in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
        let k = at.index(rs.len());
        let mut raised = rs.clone();
        raised[k].iou = (raised[k].iou + bump).min(1.0);
        let before = eval::build_report(&rs, 0.01).unwrap();
        let after = eval::build_report(&raised, 0.01).unwrap();
        for split in Split::ALL {
            if split.contains(&rs[k]) {
                prop_assert!(after.average_recall(split).unwrap() >= before.average_recall(split).unwrap());
            }
        }
    }

    #[test]
    fn report_is_permutation_invariant(rs in records(), seed in any::<u64>()) {
        let mut shuffled = rs.clone();
        shuffled.reverse();
        shuffled.rotate_left(seed as usize % rs.len());
        let a = eval::build_report(&rs, 0.01).unwrap();
        let b = eval::build_report(&shuffled, 0.01).unwrap();
        for split in Split::ALL {
            let (x, y) = (a.average_recall(split), b.average_recall(split));
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                _ => prop_assert_eq!(x, y),
            }
        }
    }
}

#[test]
fn mask_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
    for k in 0..20 {
        let m = common::random_mask(&mut rng, 9, 13);
        let path = dir.path().join(format!("{k}.png"));
        tensor_store::write_mask(&m, &path).unwrap();
        assert_eq!(tensor_store::read_mask(&path).unwrap(), m);
    }
}
