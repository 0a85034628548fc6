//! Tokenization, corpus statistics, and the BM25 / TF-IDF scorers.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Passage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Split on every non-alphanumeric character instead of whitespace only.
    pub strip_punctuation: bool,
    pub min_token_len: usize,
    pub stopwords: Vec<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            min_token_len: 1,
            stopwords: Vec::new(),
        }
    }
}

/// Splits `text` into tokens.
///
/// Text is NFKC-normalized first, then lowercased when configured. With
/// `strip_punctuation` a token is a maximal run of alphanumeric characters,
/// so `"A-1"` becomes `["a", "1"]`; otherwise tokens are whitespace
/// separated and keep their punctuation. Tokens shorter than
/// `min_token_len` characters and configured stopwords are dropped.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let mut normalized: String = text.nfkc().collect();
    if config.lowercase {
        normalized = normalized.to_lowercase();
    }
    let keep = |tok: &&str| {
        tok.chars().count() >= config.min_token_len.max(1)
            && !config.stopwords.iter().any(|s| s == tok)
    };
    if config.strip_punctuation {
        normalized
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .filter(keep)
            .map(str::to_owned)
            .collect()
    } else {
        normalized
            .split_whitespace()
            .filter(keep)
            .map(str::to_owned)
            .collect()
    }
}

/// Document statistics over a passage pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub doc_freq: BTreeMap<String, usize>,
    pub doc_len: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// Corpus statistics plus per-passage term frequencies: everything the
/// lexical scorers need.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    pub stats: CorpusStats,
    term_freqs: HashMap<String, HashMap<String, u32>>,
}

fn term_counts<S: AsRef<str>>(tokens: &[S]) -> HashMap<&str, u32> {
    let mut tf = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_ref()).or_insert(0) += 1;
    }
    tf
}

/// Builds statistics over `passages`; the result does not depend on their order.
pub fn build_stats<'a, I>(passages: I, config: &TokenizerConfig) -> Result<LexicalIndex>
where
    I: IntoIterator<Item = &'a Passage>,
{
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut doc_len = BTreeMap::new();
    let mut term_freqs = HashMap::new();
    for p in passages {
        if term_freqs.contains_key(&p.id) {
            return Err(Error::DuplicateId {
                kind: "passage",
                id: p.id.clone(),
            });
        }
        let tokens = tokenize(&p.text, config);
        let tf: HashMap<String, u32> = term_counts(&tokens)
            .into_iter()
            .map(|(t, c)| (t.to_owned(), c))
            .collect();
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        doc_len.insert(p.id.clone(), tokens.len());
        term_freqs.insert(p.id.clone(), tf);
    }
    if doc_len.is_empty() {
        return Err(Error::Empty("passage pool"));
    }
    let doc_count = doc_len.len();
    let total: usize = doc_len.values().sum();
    Ok(LexicalIndex {
        stats: CorpusStats {
            doc_count,
            avg_doc_len: total as f64 / doc_count as f64,
            doc_freq,
            doc_len,
        },
        term_freqs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl LexicalIndex {
    fn tf(&self, passage_id: &str) -> Result<&HashMap<String, u32>> {
        self.term_freqs
            .get(passage_id)
            .ok_or_else(|| Error::UnknownPassage(passage_id.to_owned()))
    }

    /// Replaces the statistics while keeping term frequencies.
    pub fn with_stats(&self, stats: CorpusStats) -> Self {
        Self {
            stats,
            term_freqs: self.term_freqs.clone(),
        }
    }

    /// Okapi BM25 of `query_tokens` against a pooled passage.
    ///
    /// Repeated query terms count once per occurrence.
    pub fn bm25_score<S: AsRef<str>>(
        &self,
        query_tokens: &[S],
        passage_id: &str,
        params: Bm25Params,
    ) -> Result<f64> {
        let tf = self.tf(passage_id)?;
        let len = self.stats.doc_len[passage_id] as f64;
        let avg = self.stats.avg_doc_len;
        let norm = if avg > 0.0 {
            params.k1 * (1.0 - params.b + params.b * len / avg)
        } else {
            params.k1
        };
        let mut terms: Vec<&str> = query_tokens.iter().map(AsRef::as_ref).collect();
        // Sorted so floating-point accumulation ignores query token order.
        terms.sort_unstable();
        let mut score = 0.0;
        for term in terms {
            let f = f64::from(tf.get(term).copied().unwrap_or(0));
            if f > 0.0 {
                score += self.stats.idf(term) * f * (params.k1 + 1.0) / (f + norm);
            }
        }
        Ok(score)
    }

    /// Cosine similarity of `ln(1 + tf) * idf` vectors; 0 when either
    /// vector is zero.
    pub fn tfidf_score<S: AsRef<str>>(&self, query_tokens: &[S], passage_id: &str) -> Result<f64> {
        let tf = self.tf(passage_id)?;
        let query = term_counts(query_tokens);
        let weight = |term: &str, count: u32| (1.0 + f64::from(count)).ln() * self.stats.idf(term);

        let mut q_terms: Vec<(&str, u32)> = query.into_iter().collect();
        q_terms.sort_unstable();
        let mut p_terms: Vec<(&str, u32)> = tf.iter().map(|(t, c)| (t.as_str(), *c)).collect();
        p_terms.sort_unstable();

        let q_norm = q_terms
            .iter()
            .map(|&(t, c)| weight(t, c).powi(2))
            .sum::<f64>()
            .sqrt();
        let p_norm = p_terms
            .iter()
            .map(|&(t, c)| weight(t, c).powi(2))
            .sum::<f64>()
            .sqrt();
        if q_norm == 0.0 || p_norm == 0.0 {
            return Ok(0.0);
        }
        let dot: f64 = q_terms
            .iter()
            .filter_map(|&(t, qc)| tf.get(t).map(|&pc| weight(t, qc) * weight(t, pc)))
            .sum();
        Ok((dot / (q_norm * p_norm)).clamp(0.0, 1.0))
    }
}

/// Pretty JSON dump of the statistics, for debugging.
pub fn stats_json(stats: &CorpusStats) -> String {
    serde_json::to_string_pretty(stats).expect("stats serialize")
}
