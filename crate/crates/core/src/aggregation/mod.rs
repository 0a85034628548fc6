//! Fusing the label matrix columns into one label per pair.

mod generative;
mod majority;

pub use generative::{
    fit_generative_model, gradient, marginal_log_likelihood, posterior, row_log_likelihood, FitOptions,
    FitTrace, GenerativeParams, LabelHistogram, ParamGradient, TraceEntry, PROJECTION_MARGIN,
};
pub use majority::majority_vote;

use crate::error::{Error, Result};
use crate::labeling::LabelMatrix;

/// A binary relevance label with a confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatedLabel {
    pub positive: bool,
    pub confidence: f64,
}

impl AggregatedLabel {
    pub fn sign(&self) -> i8 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    /// `±confidence`, increasing in the belief that the pair is relevant.
    pub fn signed_confidence(&self) -> f64 {
        f64::from(self.sign()) * self.confidence
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregationMethod {
    Majority,
    Generative(GenerativeParams),
}

/// One aggregated label per pair; `None` marks an abstention.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedLabels {
    pub pairs: Vec<(String, String)>,
    pub labels: Vec<Option<AggregatedLabel>>,
}

impl AggregatedLabels {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, Option<AggregatedLabel>)> {
        self.pairs
            .iter()
            .zip(&self.labels)
            .map(|((q, p), l)| (q.as_str(), p.as_str(), *l))
    }

    pub fn abstentions(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// TSV rows `query_id, passage_id, label, confidence`; abstentions are
    /// written as label 0 with confidence 0.
    pub fn to_tsv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("query_id\tpassage_id\tlabel\tconfidence\n");
        for (q, p, l) in self.iter() {
            let (y, s) = l.map_or((0, 0.0), |l| (l.sign(), l.confidence));
            out.push_str(&format!("{q}\t{p}\t{y}\t{s:?}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != "query_id\tpassage_id\tlabel\tconfidence" {
                    return Err(Error::Format("aggregated labels: bad header".into()));
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
            let y: i8 = f[2].parse().map_err(|_| bad("label is not an integer"))?;
            let s: f64 = f[3].parse().map_err(|_| bad("confidence is not a number"))?;
            if !(0.0..=1.0).contains(&s) {
                return Err(bad("confidence outside [0, 1]"));
            }
            let label = match y {
                0 => None,
                1 | -1 => Some(AggregatedLabel {
                    positive: y == 1,
                    confidence: s,
                }),
                _ => return Err(bad("label not in {-1, 0, 1}")),
            };
            pairs.push((f[0].to_owned(), f[1].to_owned()));
            labels.push(label);
        }
        if !header_seen {
            return Err(Error::Format("aggregated labels: missing header".into()));
        }
        Ok(Self { pairs, labels })
    }
}

/// Decision rule for a posterior `Pr(y = +1 | row)`: positive above 0.5,
/// negative below, abstain at exactly 0.5. Confidence is the probability of
/// the chosen label.
pub fn label_from_posterior(p: f64) -> Option<AggregatedLabel> {
    if p > 0.5 {
        Some(AggregatedLabel {
            positive: true,
            confidence: p,
        })
    } else if p < 0.5 {
        Some(AggregatedLabel {
            positive: false,
            confidence: 1.0 - p,
        })
    } else {
        None
    }
}

/// Aggregates every row of `matrix`.
pub fn aggregate(matrix: &LabelMatrix, method: &AggregationMethod) -> Result<AggregatedLabels> {
    let labels = match method {
        AggregationMethod::Majority => matrix.rows().map(majority_vote).collect(),
        AggregationMethod::Generative(params) => {
            params.check_columns(matrix)?;
            matrix
                .rows()
                .map(|row| label_from_posterior(posterior(params, row)))
                .collect()
        }
    };
    Ok(AggregatedLabels {
        pairs: matrix.pairs.clone(),
        labels,
    })
}
