//! Labeling functions: per-query score rankings turned into weak labels.
//!
//! Within one query, the best-scoring candidate is labeled +1, the bottom
//! `⌊m/2⌋` candidates −1 and the rest abstain. Scores are only ever
//! compared inside a query.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::lexical::{self, Bm25Params, LexicalIndex, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeakLabel {
    Negative,
    Abstain,
    Positive,
}

impl WeakLabel {
    pub fn value(self) -> i8 {
        match self {
            WeakLabel::Negative => -1,
            WeakLabel::Abstain => 0,
            WeakLabel::Positive => 1,
        }
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            -1 => Some(WeakLabel::Negative),
            0 => Some(WeakLabel::Abstain),
            1 => Some(WeakLabel::Positive),
            _ => None,
        }
    }

    pub fn is_abstain(self) -> bool {
        self == WeakLabel::Abstain
    }
}

impl fmt::Display for WeakLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Where a labeling function gets its pair scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Bm25,
    Tfidf,
    /// Cosine similarity in the named embedding store.
    Embedding(String),
}

/// How equal scores are ordered. Only one rule exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    AscendingId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelingFunction {
    pub name: String,
    pub source: ScoreSource,
    pub tie_break: TieBreak,
}

impl LabelingFunction {
    pub fn new(name: impl Into<String>, source: ScoreSource) -> Self {
        Self {
            name: name.into(),
            source,
            tie_break: TieBreak::AscendingId,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelScheme {
    /// Label every candidate tied with the best score +1 instead of only
    /// the first one under the tie-break.
    pub tied_top_all_positive: bool,
}

/// Candidate indices sorted best first: descending score, then ascending id.
pub fn rank_order<S: AsRef<str>>(scores: &[(S, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .1
            .total_cmp(&scores[a].1)
            .then_with(|| scores[a].0.as_ref().cmp(scores[b].0.as_ref()))
    });
    order
}

/// Labels one query's candidates; output is aligned with `scores`.
pub fn scores_to_labels<S: AsRef<str>>(scores: &[(S, f64)], scheme: LabelScheme) -> Vec<WeakLabel> {
    let m = scores.len();
    let mut labels = vec![WeakLabel::Abstain; m];
    if m == 0 {
        return labels;
    }
    let order = rank_order(scores);
    let negatives = m / 2;
    for &i in &order[m - negatives..] {
        labels[i] = WeakLabel::Negative;
    }
    labels[order[0]] = WeakLabel::Positive;
    if scheme.tied_top_all_positive {
        let best = scores[order[0]].1;
        for &i in &order[1..m - negatives] {
            if scores[i].1 == best {
                labels[i] = WeakLabel::Positive;
            }
        }
    }
    labels
}

/// Everything the labeling functions need to score pairs of one dataset.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    pub lexical: LexicalIndex,
    pub bm25: Bm25Params,
    query_tokens: HashMap<String, Vec<String>>,
    stores: HashMap<String, Arc<EmbeddingStore>>,
}

impl ScoreContext {
    /// Builds lexical statistics over the union of the dataset's candidate
    /// passages.
    pub fn build(
        dataset: &Dataset,
        tokenizer: &TokenizerConfig,
        bm25: Bm25Params,
        stores: HashMap<String, Arc<EmbeddingStore>>,
    ) -> Result<Self> {
        let index = dataset.passage_index();
        let mut pooled: Vec<&str> = dataset
            .candidate_sets
            .iter()
            .flat_map(|c| c.passage_ids.iter().map(String::as_str))
            .collect();
        pooled.sort_unstable();
        pooled.dedup();
        let passages = pooled
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::UnknownPassage((*id).to_owned()))
            })
            .collect::<Result<Vec<_>>>()?;
        let lexical = lexical::build_stats(passages, tokenizer)?;
        let query_tokens = dataset
            .queries
            .iter()
            .map(|q| (q.id.clone(), lexical::tokenize(&q.text, tokenizer)))
            .collect();
        Ok(Self {
            lexical,
            bm25,
            query_tokens,
            stores,
        })
    }

    pub fn store(&self, name: &str) -> Result<&EmbeddingStore> {
        self.stores
            .get(name)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::config(format!("embedding store `{name}`"), "not loaded"))
    }

    pub fn score(&self, source: &ScoreSource, query_id: &str, passage_id: &str) -> Result<f64> {
        let tokens = || {
            self.query_tokens
                .get(query_id)
                .ok_or_else(|| Error::InvalidDataset(format!("unknown query `{query_id}`")))
        };
        match source {
            ScoreSource::Bm25 => self.lexical.bm25_score(tokens()?, passage_id, self.bm25),
            ScoreSource::Tfidf => self.lexical.tfidf_score(tokens()?, passage_id),
            ScoreSource::Embedding(name) => self.store(name)?.pair_similarity(query_id, passage_id),
        }
    }

    /// Fails on the first pair some function cannot score.
    pub fn check_resolvable(&self, dataset: &Dataset, functions: &[LabelingFunction]) -> Result<()> {
        for f in functions {
            for (q, p) in dataset.pairs() {
                self.score(&f.source, q, p)?;
            }
        }
        Ok(())
    }
}

/// Weak labels for every (query, passage) pair and labeling function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    pub functions: Vec<String>,
    pub pairs: Vec<(String, String)>,
    labels: Vec<WeakLabel>,
}

impl LabelMatrix {
    pub fn new(functions: Vec<String>, pairs: Vec<(String, String)>, labels: Vec<WeakLabel>) -> Result<Self> {
        if labels.len() != functions.len() * pairs.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} pairs × {} functions",
                labels.len(),
                pairs.len(),
                functions.len()
            )));
        }
        Ok(Self {
            functions,
            pairs,
            labels,
        })
    }

    /// Builds a matrix from rows given as `{-1, 0, 1}` values.
    pub fn from_rows(functions: Vec<String>, pairs: Vec<(String, String)>, rows: &[Vec<i8>]) -> Result<Self> {
        let k = functions.len();
        let mut labels = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!("row {i} has {} labels, expected {k}", row.len())));
            }
            for &v in row {
                labels.push(
                    WeakLabel::from_value(v)
                        .ok_or_else(|| Error::Format(format!("row {i}: label {v} not in {{-1,0,1}}")))?,
                );
            }
        }
        Self::new(functions, pairs, labels)
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn k(&self) -> usize {
        self.functions.len()
    }

    pub fn row(&self, i: usize) -> &[WeakLabel] {
        let k = self.k();
        &self.labels[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[WeakLabel]> {
        self.labels.chunks(self.k().max(1)).take(self.n())
    }

    pub fn get(&self, row: usize, col: usize) -> WeakLabel {
        self.labels[row * self.k() + col]
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.k()) {
            return Err(Error::Shape(format!("column {bad} out of range")));
        }
        let functions = cols.iter().map(|&c| self.functions[c].clone()).collect();
        let labels = (0..self.n())
            .flat_map(|i| cols.iter().map(move |&c| (i, c)))
            .map(|(i, c)| self.get(i, c))
            .collect();
        Self::new(functions, self.pairs.clone(), labels)
    }

    /// Consecutive row ranges sharing a query id, in row order.
    pub fn query_blocks(&self) -> Vec<(&str, Range<usize>)> {
        let mut out: Vec<(&str, Range<usize>)> = Vec::new();
        for (i, (q, _)) in self.pairs.iter().enumerate() {
            match out.last_mut() {
                Some((last, r)) if *last == q.as_str() => r.end = i + 1,
                _ => out.push((q.as_str(), i..i + 1)),
            }
        }
        out
    }

    /// Tab-separated dump: header of function names, then
    /// `query_id, passage_id, label...` rows.
    pub fn to_tsv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("query_id\tpassage_id");
        for f in &self.functions {
            out.push('\t');
            out.push_str(f);
        }
        out.push('\n');
        for (i, (q, p)) in self.pairs.iter().enumerate() {
            out.push_str(q);
            out.push('\t');
            out.push_str(p);
            for l in self.row(i) {
                out.push('\t');
                out.push_str(&l.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format("label matrix: missing header".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 2 || cols[0] != "query_id" || cols[1] != "passage_id" {
            return Err(Error::Format("label matrix: bad header".into()));
        }
        let functions: Vec<String> = cols[2..].iter().map(|s| (*s).to_owned()).collect();
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != functions.len() + 2 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected {} fields", functions.len() + 2),
                });
            }
            pairs.push((fields[0].to_owned(), fields[1].to_owned()));
            for f in &fields[2..] {
                let label = f
                    .parse::<i8>()
                    .ok()
                    .and_then(WeakLabel::from_value)
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 1,
                        message: format!("label `{f}` not in {{-1,0,1}}"),
                    })?;
                labels.push(label);
            }
        }
        Self::new(functions, pairs, labels)
    }
}

/// Applies every labeling function to every query of `dataset`.
///
/// Rows follow dataset order (queries in file order, candidates in list
/// order); column `j` holds function `j`'s labels.
pub fn apply_labeling_functions(
    dataset: &Dataset,
    functions: &[LabelingFunction],
    ctx: &ScoreContext,
    scheme: LabelScheme,
) -> Result<LabelMatrix> {
    let mut names = std::collections::HashSet::new();
    for f in functions {
        if !names.insert(f.name.as_str()) {
            return Err(Error::DuplicateId {
                kind: "labeling function",
                id: f.name.clone(),
            });
        }
    }
    let k = functions.len();
    let blocks: Vec<Vec<WeakLabel>> = dataset
        .candidate_sets
        .par_iter()
        .map(|cs| {
            let m = cs.passage_ids.len();
            if m == 1 {
                warn!(
                    "query {} has a single candidate; it is labeled positive and yields no triplets",
                    cs.query_id
                );
            }
            let mut block = vec![WeakLabel::Abstain; m * k];
            for (j, f) in functions.iter().enumerate() {
                let scores = cs
                    .passage_ids
                    .iter()
                    .map(|p| Ok((p.as_str(), ctx.score(&f.source, &cs.query_id, p)?)))
                    .collect::<Result<Vec<_>>>()?;
                if let Some((p, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "{} score {s} for ({}, {p})",
                        f.name, cs.query_id
                    )));
                }
                for (i, l) in scores_to_labels(&scores, scheme).into_iter().enumerate() {
                    block[i * k + j] = l;
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;

    let pairs = dataset
        .pairs()
        .map(|(q, p)| (q.to_owned(), p.to_owned()))
        .collect();
    LabelMatrix::new(
        functions.iter().map(|f| f.name.clone()).collect(),
        pairs,
        blocks.concat(),
    )
}

/// Checks the per-(query, function) label histogram: one +1, `⌊m/2⌋` −1,
/// the rest abstain. Returns a description of every block that differs.
pub fn histogram_violations(matrix: &LabelMatrix) -> Vec<String> {
    let mut out = Vec::new();
    for (q, rows) in matrix.query_blocks() {
        let m = rows.len();
        for (j, name) in matrix.functions.iter().enumerate() {
            let mut pos = 0;
            let mut neg = 0;
            for i in rows.clone() {
                match matrix.get(i, j) {
                    WeakLabel::Positive => pos += 1,
                    WeakLabel::Negative => neg += 1,
                    WeakLabel::Abstain => {}
                }
            }
            if pos != 1 || neg != m / 2 {
                out.push(format!(
                    "query {q}, function {name}: {pos} positive / {neg} negative of {m}"
                ));
            }
        }
    }
    out
}
