//! Pair feature vectors for the scorer.
//!
//! Layout: `[query emb (e) | passage emb (e) | query ⊙ passage (e) | s_1 .. s_f]`
//! where the embedding block comes from one designated store and `s_j` is
//! labeling function `j`'s score, standardized with constants computed once
//! over the training pairs. With the usual four functions (BM25, TF-IDF and
//! two embedding cosines) the dimension is `3e + 4`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::labeling::{LabelingFunction, ScoreContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Store supplying the embedding blocks, if any.
    pub embedding_store: Option<String>,
    pub embedding_dim: usize,
    /// Labeling functions supplying the scalar features, in order.
    pub scalars: Vec<LabelingFunctionSpec>,
}

/// Serializable name + source of a scalar feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingFunctionSpec {
    pub name: String,
    pub source: crate::labeling::ScoreSource,
}

impl From<&LabelingFunction> for LabelingFunctionSpec {
    fn from(f: &LabelingFunction) -> Self {
        Self {
            name: f.name.clone(),
            source: f.source.clone(),
        }
    }
}

impl FeatureSchema {
    pub fn new(ctx: &ScoreContext, embedding_store: Option<&str>, functions: &[LabelingFunction]) -> Result<Self> {
        let embedding_dim = match embedding_store {
            Some(name) => ctx.store(name)?.dim(),
            None => 0,
        };
        Ok(Self {
            embedding_store: embedding_store.map(str::to_owned),
            embedding_dim,
            scalars: functions.iter().map(Into::into).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        3 * self.embedding_dim + self.scalars.len()
    }
}

/// Per-feature mean and standard deviation of the scalar block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over every candidate pair of `dataset`. A
    /// constant feature gets `std = 1`.
    pub fn fit(schema: &FeatureSchema, ctx: &ScoreContext, dataset: &Dataset) -> Result<Self> {
        let f = schema.scalars.len();
        let n = dataset.num_pairs();
        if n == 0 {
            return Err(Error::Empty("training pairs"));
        }
        let mut columns = vec![Vec::with_capacity(n); f];
        for (q, p) in dataset.pairs() {
            for (j, spec) in schema.scalars.iter().enumerate() {
                columns[j].push(ctx.score(&spec.source, q, p)?);
            }
        }
        let mut mean = Vec::with_capacity(f);
        let mut std = Vec::with_capacity(f);
        for col in &columns {
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }
}

/// Builds feature vectors for one dataset's pairs.
#[derive(Debug, Clone, Copy)]
pub struct Featurizer<'a> {
    pub schema: &'a FeatureSchema,
    pub standardizer: &'a Standardizer,
    pub ctx: &'a ScoreContext,
}

impl Featurizer<'_> {
    pub fn featurize(&self, query_id: &str, passage_id: &str) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.schema.dim());
        if let Some(name) = &self.schema.embedding_store {
            let store = self.ctx.store(name)?;
            if store.dim() != self.schema.embedding_dim {
                return Err(Error::Shape(format!(
                    "store `{name}` has dim {}, schema expects {}",
                    store.dim(),
                    self.schema.embedding_dim
                )));
            }
            let missing = |role, id: &str| Error::MissingEmbedding {
                store: name.clone(),
                role,
                id: id.to_owned(),
            };
            let q = store.get(query_id).ok_or_else(|| missing("query", query_id))?;
            let p = store.get(passage_id).ok_or_else(|| missing("passage", passage_id))?;
            x.extend(q.iter().map(|&v| f64::from(v)));
            x.extend(p.iter().map(|&v| f64::from(v)));
            x.extend(q.iter().zip(p).map(|(&a, &b)| f64::from(a) * f64::from(b)));
        }
        for (j, spec) in self.schema.scalars.iter().enumerate() {
            let s = self.ctx.score(&spec.source, query_id, passage_id)?;
            x.push((s - self.standardizer.mean[j]) / self.standardizer.std[j]);
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature {bad} for ({query_id}, {passage_id})"
            )));
        }
        Ok(x)
    }

    /// Features of every candidate pair of `dataset`.
    pub fn table(&self, dataset: &Dataset) -> Result<FeatureTable> {
        let mut map = HashMap::with_capacity(dataset.num_pairs());
        for (q, p) in dataset.pairs() {
            map.insert((q.to_owned(), p.to_owned()), self.featurize(q, p)?);
        }
        Ok(FeatureTable { map })
    }
}

/// Precomputed features keyed by (query id, passage id).
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    map: HashMap<(String, String), Vec<f64>>,
}

impl FeatureTable {
    pub fn get(&self, query_id: &str, passage_id: &str) -> Result<&[f64]> {
        self.map
            .get(&(query_id.to_owned(), passage_id.to_owned()))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownPassage(format!("{passage_id} (query {query_id})")))
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, x: Vec<f64>) {
        self.map.insert((query_id.to_owned(), passage_id.to_owned()), x);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
