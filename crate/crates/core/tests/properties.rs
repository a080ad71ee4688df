//! Property tests for invariants that hold across the whole input space.

use std::collections::HashSet;

use p2c::assessor::{facet_probabilities, mrr, EmbeddingIndex, IvfIndex};
use p2c::corpus::reinterpret::segment_documentation;
use p2c::corpus::{train_bpe, Facet, Label};
use p2c::encoder::{EncoderShape, FacetMode, Model};
use p2c::losses::{
    batch_hard_triplets, bmt_loss, enumerate_valid_triplets, partition_difficulty, quadruplet_loss, sq_dist, Difficulty,
    DistanceForm, MarginConfig, MiningStrategy, QuadrupletIndex, Reduction,
};
use p2c::trainer::split;
use proptest::prelude::*;

const DIM: usize = 4;

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Label>)> {
    (3usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, DIM), n),
            prop::collection::vec((0u64..3).prop_map(Label), n),
        )
    })
}

fn shift(embeddings: &[Vec<f64>], t: &[f64]) -> Vec<Vec<f64>> {
    embeddings.iter().map(|e| e.iter().zip(t).map(|(x, dx)| x + dx).collect()).collect()
}

fn group_of(item: &String) -> &str {
    item.split('/').next().unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn sq_dist_is_translation_invariant_and_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, DIM),
        b in prop::collection::vec(-5.0f64..5.0, DIM),
        t in prop::collection::vec(-5.0f64..5.0, DIM),
    ) {
        let d = sq_dist(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(close(d, sq_dist(&b, &a).unwrap()));
        let shifted = shift(&[a, b], &t);
        prop_assert!(close(d, sq_dist(&shifted[0], &shifted[1]).unwrap()));
    }

    #[test]
    fn bmt_loss_is_nonnegative_and_translation_invariant(
        (e, labels) in batch(),
        t in prop::collection::vec(-3.0f64..3.0, DIM),
        margin in 0.01f64..1.0,
    ) {
        let moved = shift(&e, &t);
        for strategy in MiningStrategy::ALL {
            for reduction in [Reduction::Mean, Reduction::Sum] {
                let (v, _) = bmt_loss(&e, &labels, margin, strategy, reduction).unwrap();
                let (w, _) = bmt_loss(&moved, &labels, margin, strategy, reduction).unwrap();
                prop_assert!(v >= 0.0, "{strategy:?} gave {v}");
                prop_assert!(close(v, w) || (v - w).abs() < 1e-7, "{strategy:?}: {v} vs {w}");
            }
        }
    }

    #[test]
    fn batch_all_is_zero_exactly_when_every_triplet_is_satisfied((e, labels) in batch(), margin in 0.01f64..1.0) {
        let (v, none) = bmt_loss(&e, &labels, margin, MiningStrategy::BatchAll, Reduction::Sum).unwrap();
        let triplets = enumerate_valid_triplets(&labels);
        prop_assert_eq!(none, triplets.is_empty());
        let violated = triplets.iter().any(|t| {
            let d_ap = sq_dist(&e[t.anchor], &e[t.positive]).unwrap();
            let d_an = sq_dist(&e[t.anchor], &e[t.negative]).unwrap();
            d_ap - d_an + margin > 0.0
        });
        prop_assert_eq!(v > 0.0, violated);
    }

    #[test]
    fn batch_hard_picks_the_extreme_pair_per_anchor((e, labels) in batch()) {
        let mined = batch_hard_triplets(&e, &labels, DistanceForm::SqEuclidean).unwrap();
        let d = |i: usize, j: usize| sq_dist(&e[i], &e[j]).unwrap();
        let anchors: Vec<usize> = mined.iter().map(|t| t.anchor).collect();
        let mut expected = Vec::new();
        for a in 0..labels.len() {
            let has_pos = (0..labels.len()).any(|j| j != a && labels[j] == labels[a]);
            let has_neg = labels.iter().any(|l| *l != labels[a]);
            if has_pos && has_neg {
                expected.push(a);
            }
        }
        prop_assert_eq!(anchors, expected);
        for t in mined {
            prop_assert_eq!(labels[t.anchor], labels[t.positive]);
            prop_assert_ne!(labels[t.anchor], labels[t.negative]);
            for j in 0..labels.len() {
                if j == t.anchor {
                    continue;
                }
                if labels[j] == labels[t.anchor] {
                    prop_assert!(d(t.anchor, j) <= d(t.anchor, t.positive));
                } else {
                    prop_assert!(d(t.anchor, j) >= d(t.anchor, t.negative));
                }
            }
        }
    }

    #[test]
    fn difficulty_is_monotone_in_negative_distance(
        d_ap in 0.0f64..4.0,
        d_an in 0.0f64..4.0,
        step in 0.0f64..4.0,
        margin in 0.0f64..1.0,
        t in -3.0f64..3.0,
    ) {
        let rank = |x: Difficulty| match x {
            Difficulty::Hard => 0,
            Difficulty::Medium => 1,
            Difficulty::Easy => 2,
        };
        let base = partition_difficulty(d_ap, d_an, margin);
        prop_assert!(rank(partition_difficulty(d_ap, d_an + step, margin)) >= rank(base));
        // Shifting both distances by the same amount keeps the category.
        prop_assert_eq!(partition_difficulty(d_ap + t.abs(), d_an + t.abs(), margin), base);
        let expected = if d_ap + margin < d_an {
            Difficulty::Easy
        } else if d_an < d_ap {
            Difficulty::Hard
        } else {
            Difficulty::Medium
        };
        prop_assert_eq!(base, expected);
    }

    #[test]
    fn quadruplet_loss_is_nonnegative_and_translation_invariant(
        e in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, DIM), 4),
        t in prop::collection::vec(-3.0f64..3.0, DIM),
        alpha1 in 0.05f64..0.5,
        extra in 0.05f64..0.5,
    ) {
        let margins = MarginConfig { alpha1, alpha2: alpha1 + extra, alpha: 0.2 };
        let entries: Vec<QuadrupletIndex> = Facet::ALL
            .into_iter()
            .map(|facet| QuadrupletIndex { facet, anchor: 0, matching: 1, opposite: 2, irrelevant: 3 })
            .collect();
        let b = quadruplet_loss(&e, &entries, &margins).unwrap();
        let m = quadruplet_loss(&shift(&e, &t), &entries, &margins).unwrap();
        prop_assert!(b.plus >= 0.0 && b.minus >= 0.0);
        prop_assert!(close(b.total, 0.5 * (b.plus + b.minus)));
        prop_assert!(close(b.total, m.total) || (b.total - m.total).abs() < 1e-7);
    }

    #[test]
    fn quadruplet_without_irrelevant_pressure_is_a_triplet_hinge(
        anchor in prop::collection::vec(-1.0f64..1.0, DIM),
        matching in prop::collection::vec(-1.0f64..1.0, DIM),
        opposite in prop::collection::vec(-1.0f64..1.0, DIM),
        alpha1 in 0.05f64..0.5,
    ) {
        // Far enough that the second hinge can never activate.
        let irrelevant: Vec<f64> = anchor.iter().map(|x| x + 100.0).collect();
        let e = vec![anchor, matching, opposite, irrelevant];
        let margins = MarginConfig { alpha1, alpha2: alpha1 + 0.1, alpha: 0.2 };
        let entry = QuadrupletIndex { facet: Facet::Compliant, anchor: 0, matching: 1, opposite: 2, irrelevant: 3 };
        let b = quadruplet_loss(&e, &[entry], &margins).unwrap();
        let labels = [Label(0), Label(0), Label(1)];
        let (triplet, _) = bmt_loss(&e[..3], &labels, alpha1, MiningStrategy::BatchAll, Reduction::Sum).unwrap();
        // Batch-all over this batch sees the anchor triplet and its mirror.
        let hinge = (sq_dist(&e[0], &e[1]).unwrap() - sq_dist(&e[0], &e[2]).unwrap() + alpha1).max(0.0);
        let mirror = (sq_dist(&e[1], &e[0]).unwrap() - sq_dist(&e[1], &e[2]).unwrap() + alpha1).max(0.0);
        prop_assert!(close(b.plus, hinge));
        prop_assert!(close(triplet, hinge + mirror));
    }

    #[test]
    fn mrr_is_bounded_and_monotone(ranks in prop::collection::vec(1usize..50, 1..20), which in 0usize..20) {
        let m = mrr(&ranks).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        let mut worse = ranks.clone();
        let i = which % worse.len();
        worse[i] += 1;
        prop_assert!(mrr(&worse).unwrap() < m);
        prop_assert_eq!(m == 1.0, ranks.iter().all(|&r| r == 1));
    }

    #[test]
    fn facet_probabilities_follow_the_nearer_facet(d_plus in 0.0f64..4.0, d_minus in 0.0f64..4.0, c in 0.01f64..100.0) {
        let (pc, pn) = facet_probabilities(d_plus, d_minus);
        prop_assert!((pc + pn - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&pc));
        if d_plus < d_minus {
            prop_assert!(pc > 0.5);
        } else if d_plus > d_minus {
            prop_assert!(pc < 0.5);
        }
        // Scaling both distances never flips which facet is favored.
        let (sc, _) = facet_probabilities(c * d_plus, c * d_minus);
        prop_assert_eq!((sc > 0.5, sc < 0.5), (pc > 0.5, pc < 0.5));
    }

    #[test]
    fn group_split_keeps_groups_whole(groups in prop::collection::vec(0u8..12, 2..60), ratio in 0.1f64..0.9, seed: u64) {
        let items: Vec<String> = groups.iter().enumerate().map(|(i, g)| format!("g{g}/{i}")).collect();
        let distinct: HashSet<&str> = items.iter().map(group_of).collect();
        let result = split(&items, group_of, ratio, seed);
        if distinct.len() < 2 {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let (train, val) = result.unwrap();
        prop_assert_eq!(train.len() + val.len(), items.len());
        prop_assert!(!train.is_empty() && !val.is_empty());
        let tg: HashSet<&str> = train.iter().map(group_of).collect();
        let vg: HashSet<&str> = val.iter().map(group_of).collect();
        prop_assert!(tg.is_disjoint(&vg));
        prop_assert_eq!(split(&items, group_of, ratio, seed).unwrap(), (train, val));
    }
}

const WORDS: [&str; 10] = ["open", "close", "file", "handle", "(", ")", ";", "=", "safe_call", "x1"];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec((0..WORDS.len(), prop::bool::ANY), 1..30).prop_map(|parts| {
        parts.into_iter().map(|(i, space)| if space { format!("{} ", WORDS[i]) } else { WORDS[i].to_string() }).collect()
    })
}

fn shared_vocab() -> p2c::corpus::Vocabulary {
    let seed_text = WORDS.join(" ");
    train_bpe(&[seed_text.as_str(), "open(file); close(handle); x1 = safe_call(x1);"], 120).unwrap()
}

fn model(mode: FacetMode, vocab_size: usize, seed: u64) -> Model<f64> {
    Model::init(EncoderShape::new(vocab_size, 8, 12), mode, "props", seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpe_round_trips_covered_text(t in text()) {
        let vocab = shared_vocab();
        prop_assert_eq!(vocab.detokenize(&vocab.tokenize_full(&t)), t);
    }

    #[test]
    fn passages_never_span_paragraphs(paragraphs in prop::collection::vec(text(), 1..6), len in 8usize..16) {
        let vocab = shared_vocab();
        let items = segment_documentation(&paragraphs, len, &vocab).unwrap();
        for item in &items {
            let p = item.label.0 as usize;
            let prefix = format!("doc:{p}:");
            prop_assert!(item.source_id.starts_with(&prefix));
            prop_assert!(paragraphs[p].contains(item.content.as_str()));
            prop_assert!(vocab.tokenize_full(item.content.as_str()).len() <= len);
        }
    }

    #[test]
    fn encodings_are_unit_norm_and_order_invariant(
        tokens in prop::collection::vec(5u32..40, 1..20),
        seed in 0u64..1000,
        masked: bool,
    ) {
        let mode = if masked { FacetMode::Masked } else { FacetMode::Prefixed };
        let m = model(mode, 40, seed);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut reversed = tokens.clone();
        reversed.reverse();
        let code = m.encode_code(&tokens).unwrap();
        prop_assert!((norm(&code) - 1.0).abs() < 1e-6);
        let again = m.encode_code(&reversed).unwrap();
        prop_assert!(code.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
        for facet in Facet::ALL {
            let p = m.encode_policy(&tokens, facet).unwrap();
            prop_assert!((norm(&p) - 1.0).abs() < 1e-6);
            prop_assert_eq!(m.encode_policy(&tokens, facet).unwrap(), p);
        }
    }

    #[test]
    fn model_json_round_trip_is_bit_exact(seed: u64, masked: bool) {
        let mode = if masked { FacetMode::Masked } else { FacetMode::Prefixed };
        let m = model(mode, 30, seed);
        let back = Model::<f64>::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back.hash(), m.hash());
        let bits = |m: &Model<f64>| -> Vec<u64> { m.params.tensors().iter().flat_map(|t| t.iter().map(|x| x.to_bits())).collect() };
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn search_order_is_total_and_ivf_with_all_lists_is_exact(
        rows in prop::collection::vec(prop::collection::vec(-1i8..=1, 3), 4..40),
        query in prop::collection::vec(-1.0f64..1.0, 3),
        k in 1usize..10,
    ) {
        // Coarse coordinates force many exact distance ties.
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("s{:03}", (i * 7919) % 1000)).collect();
        let index = EmbeddingIndex::from_rows(ids, rows, "h").unwrap();
        let hits = index.search_embedding(&query, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(index.len()));
        for (i, w) in hits.windows(2).enumerate() {
            prop_assert!((w[0].distance, &w[0].snippet_id) < (w[1].distance, &w[1].snippet_id));
            prop_assert_eq!(w[0].rank, i + 1);
        }
        let mut ivf = IvfIndex::build(&index, None, 3);
        ivf.nprobe = ivf.nlist();
        prop_assert_eq!(ivf.search(&index, &query, k).unwrap(), hits);
    }
}
