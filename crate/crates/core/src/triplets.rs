//! Confidence-weighted (query, positive, negative) training triplets.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::info;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregation::AggregatedLabels;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES_PER_QUERY: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub query_id: String,
    pub pos_id: String,
    pub neg_id: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Queries without at least one positive and one negative pair.
    pub skipped_queries: usize,
}

/// Samples up to `per_query_samples` distinct (positive, negative) pairs per
/// query, uniformly from the cross product of its positive and negative
/// pairs. Abstained pairs are ignored. A triplet's confidence is the
/// geometric mean of its two pair confidences.
///
/// Each query draws from its own ChaCha stream (stream id = query ordinal),
/// so the output depends only on `seed` and the input.
pub fn generate_triplets(aggregated: &AggregatedLabels, per_query_samples: usize, seed: u64) -> Result<TripletSet> {
    if per_query_samples == 0 {
        return Err(Error::config("per_query_samples", "must be at least 1"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sides: HashMap<&str, (Vec<(&str, f64)>, Vec<(&str, f64)>)> = HashMap::new();
    for (q, p, label) in aggregated.iter() {
        let entry = sides.entry(q).or_insert_with(|| {
            order.push(q);
            (Vec::new(), Vec::new())
        });
        match label {
            Some(l) if l.positive => entry.0.push((p, l.confidence)),
            Some(l) => entry.1.push((p, l.confidence)),
            None => {}
        }
    }

    let per_query: Vec<Option<Vec<Triplet>>> = order
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let (pos, neg) = &sides[q];
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let total = pos.len() * neg.len();
            let amount = per_query_samples.min(total);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(qi as u64);
            let picks = index::sample(&mut rng, total, amount);
            Some(
                picks
                    .into_iter()
                    .map(|idx| {
                        let (p, sp) = pos[idx / neg.len()];
                        let (n, sn) = neg[idx % neg.len()];
                        Triplet {
                            query_id: (*q).to_owned(),
                            pos_id: p.to_owned(),
                            neg_id: n.to_owned(),
                            confidence: (sp * sn).sqrt(),
                        }
                    })
                    .collect(),
            )
        })
        .collect();

    let skipped_queries = per_query.iter().filter(|t| t.is_none()).count();
    if skipped_queries > 0 {
        info!("{skipped_queries} queries lack a positive or a negative pair and yield no triplets");
    }
    Ok(TripletSet {
        triplets: per_query.into_iter().flatten().flatten().collect(),
        skipped_queries,
    })
}

pub fn to_tsv(triplets: &[Triplet], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("query_id\tpos_id\tneg_id\tconfidence\n");
    for t in triplets {
        let _ = writeln!(out, "{}\t{}\t{}\t{:?}", t.query_id, t.pos_id, t.neg_id, t.confidence);
    }
    out
}

pub fn from_tsv(text: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != "query_id\tpos_id\tneg_id\tconfidence" {
                return Err(Error::Format("triplets: bad header".into()));
            }
            header_seen = true;
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: lineno + 1,
            message: m.to_owned(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let confidence: f64 = f[3].parse().map_err(|_| bad("confidence is not a number"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad("confidence outside [0, 1]"));
        }
        if f[1] == f[2] {
            return Err(bad("positive and negative passage are the same"));
        }
        out.push(Triplet {
            query_id: f[0].to_owned(),
            pos_id: f[1].to_owned(),
            neg_id: f[2].to_owned(),
            confidence,
        });
    }
    if !header_seen {
        return Err(Error::Format("triplets: missing header".into()));
    }
    Ok(out)
}
