//! Ranking metrics (MAP, MRR, P@k) and pseudo-label quality (P@1, R@1, AUC).
//!
//! Queries without a gold-relevant candidate are left out of every
//! per-query average. P@k always divides by `k`, even for shorter lists.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::labeling::rank_order;

/// One query's ranking with gold relevance flags in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub passage_ids: Vec<String>,
    pub relevant: Vec<bool>,
}

impl RankedList {
    pub fn num_relevant(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }
}

/// Mean of precision at the rank of each relevant item; `None` when the
/// list holds no relevant item.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// `1 / rank` of the first relevant item, 0 if there is none.
pub fn reciprocal_rank(relevant: &[bool]) -> f64 {
    relevant
        .iter()
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn precision_at_k(relevant: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "precision at k needs k >= 1");
    relevant.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// Mann–Whitney AUC: probability that a random positive outscores a random
/// negative, ties counting one half. Uses average ranks for tied scores.
pub fn auc(scores: &[f64], gold: &[bool]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} gold labels",
            scores.len(),
            gold.len()
        )));
    }
    let pos = gold.iter().filter(|&&g| g).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidDataset(
            "AUC needs at least one positive and one negative pair".into(),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps average ranks of ties integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1, average (i + j + 2) / 2.
        let avg2 = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| gold[k]).count() as u128;
        rank_sum2 += avg2 * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub p_at_1: f64,
    pub r_at_1: f64,
    pub auc: f64,
    pub queries: usize,
}

/// Quality of per-pair pseudo-label scores against gold.
///
/// `scores` maps (query id, passage id) to a value that grows with the
/// believed relevance: a label in {-1, 0, 1}, a signed confidence or a raw
/// score. Within each query the top-scoring candidate (ties by ascending
/// id) is its top-1 pick. P@1 is the share of queries whose pick is
/// gold-relevant; R@1 is the number of such hits over all gold-relevant
/// pairs; AUC pools every judged pair.
pub fn pseudo_label_quality(scores: &HashMap<(String, String), f64>, dataset: &Dataset) -> Result<PseudoLabelQuality> {
    let mut hits = 0usize;
    let mut queries = 0usize;
    let mut relevant_total = 0usize;
    let mut pooled_scores = Vec::new();
    let mut pooled_gold = Vec::new();
    for cs in &dataset.candidate_sets {
        let Some(gold) = &cs.gold else { continue };
        let mut list = Vec::with_capacity(cs.passage_ids.len());
        for p in &cs.passage_ids {
            let s = *scores
                .get(&(cs.query_id.clone(), p.clone()))
                .ok_or_else(|| Error::UnknownPassage(format!("{p} (query {}) has no score", cs.query_id)))?;
            list.push((p.as_str(), s));
            if let Some(r) = gold.get(p) {
                pooled_scores.push(s);
                pooled_gold.push(r.is_relevant());
            }
        }
        let n_rel = cs.passage_ids.iter().filter(|p| cs.is_relevant(p)).count();
        if n_rel == 0 {
            continue;
        }
        queries += 1;
        relevant_total += n_rel;
        let top = list[rank_order(&list)[0]].0;
        if cs.is_relevant(top) {
            hits += 1;
        }
    }
    if queries == 0 {
        return Err(Error::InvalidDataset("no gold-relevant labels".into()));
    }
    Ok(PseudoLabelQuality {
        p_at_1: hits as f64 / queries as f64,
        r_at_1: hits as f64 / relevant_total as f64,
        auc: auc(&pooled_scores, &pooled_gold)?,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ap: f64,
    pub rr: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
    /// Queries averaged over.
    pub evaluated: usize,
    /// Queries without a gold-relevant candidate.
    pub excluded: usize,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `MAP MRR P@1 P@5` as percentages, one aligned row.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let w = label.len().max(6);
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6}  {:>6}", "method", "MAP", "MRR", "P@1", "P@5");
        let _ = writeln!(
            out,
            "{:<w$}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}",
            label,
            100.0 * self.map,
            100.0 * self.mrr,
            100.0 * self.p_at_1,
            100.0 * self.p_at_5
        );
        out
    }
}

/// Averages per-query metrics over lists holding a relevant item.
pub fn evaluate_lists(lists: &[RankedList]) -> Result<MetricReport> {
    let mut per_query = Vec::new();
    let mut excluded = 0;
    for list in lists {
        if list.relevant.len() != list.passage_ids.len() {
            return Err(Error::Shape(format!("query {}: relevance flags do not match list", list.query_id)));
        }
        let Some(ap) = average_precision(&list.relevant) else {
            excluded += 1;
            continue;
        };
        per_query.push(QueryMetrics {
            query_id: list.query_id.clone(),
            ap,
            rr: reciprocal_rank(&list.relevant),
            p_at_1: precision_at_k(&list.relevant, 1),
            p_at_5: precision_at_k(&list.relevant, 5),
        });
    }
    if per_query.is_empty() {
        return Err(Error::InvalidDataset("no query has a gold-relevant candidate".into()));
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        map: mean(|q| q.ap),
        mrr: mean(|q| q.rr),
        p_at_1: mean(|q| q.p_at_1),
        p_at_5: mean(|q| q.p_at_5),
        evaluated: per_query.len(),
        excluded,
        per_query,
    })
}

/// Ranks every query's candidates by `score` (descending, ties by ascending
/// passage id) and evaluates against gold.
pub fn evaluate_ranker<F>(dataset: &Dataset, mut score: F) -> Result<MetricReport>
where
    F: FnMut(&str, &str) -> Result<f64>,
{
    if !dataset.has_gold() {
        return Err(Error::InvalidDataset("dataset has no gold labels".into()));
    }
    let mut lists = Vec::with_capacity(dataset.candidate_sets.len());
    for cs in &dataset.candidate_sets {
        let ranked = crate::trainer::rank_candidates(&cs.passage_ids, |p| score(&cs.query_id, p))?;
        lists.push(RankedList {
            query_id: cs.query_id.clone(),
            relevant: ranked.iter().map(|(p, _)| cs.is_relevant(p)).collect(),
            passage_ids: ranked.into_iter().map(|(p, _)| p).collect(),
        });
    }
    evaluate_lists(&lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_dataset, Split};

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true; 4]), Some(1.0));
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn rr_and_precision() {
        assert_eq!(reciprocal_rank(&[false, true, false]), 0.5);
        assert_eq!(reciprocal_rank(&[false, false]), 0.0);
        assert_eq!(precision_at_k(&[true, false, true, false, false, true], 5), 0.4);
        assert_eq!(precision_at_k(&[false, true, false], 5), 0.2);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_six_pairs_against_pair_counting() {
        // Positives {0.8, 0.4, 0.4}, negatives {0.4, 0.6, 0.1}.
        // Pair wins: 0.8 beats 3; each 0.4 beats 0.1 and ties 0.4 -> 1.5 each.
        // Total 6 of 9.
        let s = [0.8, 0.4, 0.4, 0.4, 0.6, 0.1];
        let g = [true, true, true, false, false, false];
        assert!((auc(&s, &g).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    const TOY: &str = r#"{"kind":"passage","id":"a","text":"x"}
{"kind":"passage","id":"b","text":"x"}
{"kind":"passage","id":"c","text":"x"}
{"kind":"passage","id":"d","text":"x"}
{"kind":"passage","id":"e","text":"x"}
{"kind":"query","id":"q1","text":"x","candidates":["a","b","c"],"gold":{"a":1,"b":1,"c":1}}
{"kind":"query","id":"q2","text":"x","candidates":["d","e"],"gold":{"d":1,"e":0}}
"#;

    fn scores(rows: &[(&str, &str, f64)]) -> HashMap<(String, String), f64> {
        rows.iter().map(|(q, p, s)| (((*q).to_owned(), (*p).to_owned()), *s)).collect()
    }

    #[test]
    fn pseudo_label_counts() {
        let ds = parse_dataset(TOY, Split::Train).unwrap();
        // q1 picks a (relevant), q2 picks e (not): P@1 = 1/2, R@1 = 1/4.
        let s = scores(&[
            ("q1", "a", 1.0),
            ("q1", "b", 0.0),
            ("q1", "c", -1.0),
            ("q2", "d", -1.0),
            ("q2", "e", 1.0),
        ]);
        let q = pseudo_label_quality(&s, &ds).unwrap();
        assert_eq!(q.p_at_1, 0.5);
        assert_eq!(q.r_at_1, 0.25);
        assert_eq!(q.queries, 2);
    }

    #[test]
    fn perfect_pseudo_labels() {
        let ds = parse_dataset(TOY, Split::Train).unwrap();
        let s = scores(&[
            ("q1", "a", 1.0),
            ("q1", "b", 0.0),
            ("q1", "c", -1.0),
            ("q2", "d", 1.0),
            ("q2", "e", -1.0),
        ]);
        let q = pseudo_label_quality(&s, &ds).unwrap();
        assert_eq!(q.p_at_1, 1.0);
    }

    #[test]
    fn oracle_and_reversed_scorers() {
        let mut text = String::new();
        for i in 0..5 {
            text.push_str(&format!("{{\"kind\":\"passage\",\"id\":\"p{i}\",\"text\":\"x\"}}\n"));
        }
        for q in 0..3 {
            text.push_str(&format!(
                "{{\"kind\":\"query\",\"id\":\"q{q}\",\"text\":\"x\",\"candidates\":[\"p0\",\"p1\",\"p2\",\"p3\",\"p4\"],\"gold\":{{\"p{q}\":1}}}}\n"
            ));
        }
        let ds = parse_dataset(&text, Split::Test).unwrap();
        let gold = |q: &str, p: &str| -> Result<f64> {
            Ok(f64::from(u8::from(ds.candidate_set(q).unwrap().is_relevant(p))))
        };
        let r = evaluate_ranker(&ds, gold).unwrap();
        assert_eq!((r.map, r.mrr, r.p_at_1), (1.0, 1.0, 1.0));
        let r = evaluate_ranker(&ds, |q, p| gold(q, p).map(|g| -g)).unwrap();
        assert!((r.mrr - 0.2).abs() < 1e-15, "{r:?}");
        assert_eq!(r.evaluated, 3);
    }

    #[test]
    fn queries_without_relevant_are_excluded() {
        let lists = [
            RankedList {
                query_id: "a".into(),
                passage_ids: vec!["x".into(), "y".into()],
                relevant: vec![false, true],
            },
            RankedList {
                query_id: "b".into(),
                passage_ids: vec!["z".into()],
                relevant: vec![false],
            },
        ];
        let r = evaluate_lists(&lists).unwrap();
        assert_eq!((r.evaluated, r.excluded), (1, 1));
        assert_eq!(r.mrr, 0.5);
        assert!(r.to_table("bm25").contains("50.00"));
    }
}
