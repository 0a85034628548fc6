use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use weakrank_core::aggregation::{
    aggregate, majority_vote, marginal_log_likelihood, posterior, AggregatedLabel, AggregatedLabels,
    AggregationMethod, GenerativeParams,
};
use weakrank_core::corpus::{parse_dataset, to_jsonl, CandidateSet, Dataset, Passage, Query, Relevance, Split};
use weakrank_core::embeddings::{cosine, EmbeddingStore};
use weakrank_core::eval::{auc, average_precision, precision_at_k, reciprocal_rank};
use weakrank_core::labeling::{scores_to_labels, LabelMatrix, LabelScheme, WeakLabel};
use weakrank_core::lexical::{build_stats, Bm25Params, TokenizerConfig};
use weakrank_core::triplets::generate_triplets;

fn weak_label() -> impl Strategy<Value = WeakLabel> {
    prop_oneof![Just(WeakLabel::Negative), Just(WeakLabel::Abstain), Just(WeakLabel::Positive)]
}

fn unique_scores(max: usize) -> impl Strategy<Value = Vec<(String, f64)>> {
    prop::collection::vec(-1e3f64..1e3, 1..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, s)| (format!("p{i:02}"), (s * 4.0).round() / 4.0))
            .collect()
    })
}

proptest! {
    #[test]
    fn cosine_is_symmetric_scale_invariant_and_bounded(
        u in prop::collection::vec(-10f32..10.0, 8),
        v in prop::collection::vec(-10f32..10.0, 8),
        scale in 0.5f32..4.0,
    ) {
        let c = cosine(&u, &v);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&v, &u));
        let scaled: Vec<f32> = u.iter().map(|x| x * scale).collect();
        prop_assert!((cosine(&scaled, &v) - c).abs() < 1e-5);
    }

    #[test]
    fn labels_invariant_under_monotone_transform(scores in unique_scores(30)) {
        let base = scores_to_labels(&scores, LabelScheme::default());
        let transformed: Vec<(String, f64)> = scores.iter().map(|(p, s)| (p.clone(), (s / 100.0).exp() * 3.0 - 7.0)).collect();
        prop_assert_eq!(base, scores_to_labels(&transformed, LabelScheme::default()));
    }

    #[test]
    fn labels_follow_candidates_under_permutation(scores in unique_scores(30), seed in any::<u64>()) {
        let base = scores_to_labels(&scores, LabelScheme::default());
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let n = order.len();
        for i in (1..n).rev() {
            order.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let shuffled: Vec<(String, f64)> = order.iter().map(|&i| scores[i].clone()).collect();
        let labels = scores_to_labels(&shuffled, LabelScheme::default());
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(labels[k], base[i]);
        }
    }

    #[test]
    fn label_histogram_holds_for_any_scores(scores in unique_scores(40)) {
        let labels = scores_to_labels(&scores, LabelScheme::default());
        let pos = labels.iter().filter(|l| **l == WeakLabel::Positive).count();
        let neg = labels.iter().filter(|l| **l == WeakLabel::Negative).count();
        prop_assert_eq!(pos, 1);
        prop_assert_eq!(neg, scores.len() / 2);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        pairs in prop::collection::vec((-50i32..50, any::<bool>()), 2..40),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(*s)).collect();
        let gold: Vec<bool> = pairs.iter().map(|(_, g)| *g).collect();
        let a = auc(&scores, &gold);
        let t: Vec<f64> = scores.iter().map(|s| s.powi(3) + 2.0 * s).collect();
        match (a, auc(&t, &gold)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness differs"),
        }
    }

    #[test]
    fn rank_metric_orderings(rel in prop::collection::vec(any::<bool>(), 1..30)) {
        let rr = reciprocal_rank(&rel);
        prop_assert!(precision_at_k(&rel, 1) <= rr);
        if let Some(ap) = average_precision(&rel) {
            prop_assert!(ap > 0.0 && ap <= 1.0);
        } else {
            prop_assert_eq!(rr, 0.0);
        }
    }

    #[test]
    fn majority_vote_ignores_column_order(row in prop::collection::vec(weak_label(), 1..8)) {
        let mut rev = row.clone();
        rev.reverse();
        prop_assert_eq!(majority_vote(&row), majority_vote(&rev));
        if let Some(l) = majority_vote(&row) {
            prop_assert!(l.confidence > 0.5 && l.confidence <= 1.0);
        }
    }

    #[test]
    fn posterior_rises_with_positive_votes(
        row in prop::collection::vec(weak_label(), 1..6),
        j in 0usize..6,
        alpha in 0.51f64..0.99,
        beta in 0.01f64..0.99,
        gamma in 0.01f64..0.99,
    ) {
        let k = row.len();
        let j = j % k;
        let p = GenerativeParams::new(vec![alpha; k], vec![beta; k], gamma).unwrap();
        let mut up = row.clone();
        up[j] = WeakLabel::Positive;
        let mut down = row.clone();
        down[j] = WeakLabel::Negative;
        prop_assert!(posterior(&p, &up) >= posterior(&p, &down));
    }

    #[test]
    fn likelihood_independent_of_row_order(
        rows in prop::collection::vec(prop::collection::vec(-1i8..=1, 3), 1..60),
        seed in any::<u64>(),
    ) {
        let make = |rows: &[Vec<i8>]| LabelMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            (0..rows.len()).map(|i| ("q".to_owned(), format!("p{i}"))).collect(),
            rows,
        ).unwrap();
        let p = GenerativeParams::new(vec![0.8, 0.7, 0.6], vec![0.5, 0.9, 0.3], 0.2).unwrap();
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let a = marginal_log_likelihood(&p, &make(&rows));
        let b = marginal_log_likelihood(&p, &make(&shuffled));
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn triplets_respect_counts_and_confidence(
        queries in prop::collection::vec(prop::collection::vec(prop::option::of((any::<bool>(), 0.5f64..=1.0)), 1..12), 1..10),
        per_query in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        let mut expected = 0;
        for (qi, q) in queries.iter().enumerate() {
            let pos = q.iter().flatten().filter(|(p, _)| *p).count();
            let neg = q.iter().flatten().filter(|(p, _)| !*p).count();
            expected += per_query.min(pos * neg);
            for (pi, l) in q.iter().enumerate() {
                pairs.push((format!("q{qi}"), format!("q{qi}p{pi}")));
                labels.push(l.map(|(positive, confidence)| AggregatedLabel { positive, confidence }));
            }
        }
        let agg = AggregatedLabels { pairs, labels };
        let set = generate_triplets(&agg, per_query, seed).unwrap();
        prop_assert_eq!(set.triplets.len(), expected);
        let lookup: HashMap<(&str, &str), AggregatedLabel> = agg
            .iter()
            .filter_map(|(q, p, l)| l.map(|l| ((q, p), l)))
            .collect();
        for t in &set.triplets {
            prop_assert!(t.confidence >= 0.5 - 1e-12 && t.confidence <= 1.0);
            prop_assert!(lookup[&(t.query_id.as_str(), t.pos_id.as_str())].positive);
            prop_assert!(!lookup[&(t.query_id.as_str(), t.neg_id.as_str())].positive);
        }
        prop_assert_eq!(set, generate_triplets(&agg, per_query, seed).unwrap());
    }

    #[test]
    fn dataset_round_trips(
        texts in prop::collection::vec("[a-z ]{0,20}", 1..8),
        gold_bits in prop::collection::vec(any::<bool>(), 8),
    ) {
        let passages: Vec<Passage> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage { id: format!("p{i}"), text: t.clone() })
            .collect();
        let ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
        let gold: BTreeMap<String, Relevance> = ids
            .iter()
            .zip(&gold_bits)
            .map(|(id, g)| (id.clone(), if *g { Relevance::Relevant } else { Relevance::NonRelevant }))
            .collect();
        let ds = Dataset {
            split: Split::Val,
            queries: vec![Query { id: "q".into(), text: "a question".into() }],
            passages,
            candidate_sets: vec![CandidateSet { query_id: "q".into(), passage_ids: ids, gold: Some(gold) }],
        };
        let back = parse_dataset(&to_jsonl(&ds), Split::Val).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn embedding_file_round_trips(vectors in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 3), 0..20)) {
        let mut store = EmbeddingStore::new(3, "prop").unwrap();
        for (i, v) in vectors.iter().enumerate() {
            store.insert(format!("id-{i}"), v.clone()).unwrap();
        }
        let bytes = store.to_bytes();
        let back = EmbeddingStore::from_bytes(&bytes, "prop").unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bm25_nonnegative_and_order_free(
        docs in prop::collection::vec("[abcde]{1,3}( [abcde]{1,3}){0,6}", 1..10),
        query in prop::collection::vec("[abcde]{1,3}", 1..5),
    ) {
        let passages: Vec<Passage> = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Passage { id: format!("p{i}"), text: t.clone() })
            .collect();
        let index = build_stats(&passages, &TokenizerConfig::default()).unwrap();
        let mut reversed = query.clone();
        reversed.reverse();
        for p in &passages {
            let s = index.bm25_score(&query, &p.id, Bm25Params::default()).unwrap();
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s.to_bits(), index.bm25_score(&reversed, &p.id, Bm25Params::default()).unwrap().to_bits());
            let t = index.tfidf_score(&query, &p.id).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
        }
    }
}

#[test]
fn generative_aggregation_matches_posterior_rule() {
    let rows = vec![vec![1, 1, 0], vec![-1, -1, -1], vec![0, 0, 0], vec![1, -1, 0]];
    let matrix = LabelMatrix::from_rows(
        vec!["a".into(), "b".into(), "c".into()],
        (0..rows.len()).map(|i| ("q".to_owned(), format!("p{i}"))).collect(),
        &rows,
    )
    .unwrap();
    let p = GenerativeParams::new(vec![0.8, 0.8, 0.8], vec![0.5, 0.5, 0.5], 0.3).unwrap();
    let agg = aggregate(&matrix, &AggregationMethod::Generative(p.clone())).unwrap();
    // All-abstain row: posterior is the prior 0.3, so a negative at 0.7.
    let l = agg.labels[2].unwrap();
    assert!(!l.positive);
    assert_eq!(l.confidence, 1.0 - 0.3);
    // Symmetric disagreement with equal accuracies falls back to the prior.
    let l = agg.labels[3].unwrap();
    assert!((l.confidence - 0.7).abs() < 1e-12);
    assert!(agg.labels[0].unwrap().positive);
    assert!(!agg.labels[1].unwrap().positive);
}
