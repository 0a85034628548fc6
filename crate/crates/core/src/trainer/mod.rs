//! Training the pairwise ranker on weakly labeled triplets.

mod checkpoint;
mod features;
mod mlp;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use features::{FeatureSchema, FeatureTable, Featurizer, LabelingFunctionSpec, Standardizer};
pub use mlp::{
    batch_loss, gradient, hinge_loss, Layer, ScorerParams, TrainOptions, TripletFeatures, HIDDEN_SIZES,
};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::triplets::Triplet;

/// Full-data training loss after each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("epoch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{},{l:?}", i + 1);
        }
        out
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Resolves triplets to feature vectors.
pub fn resolve_triplets(triplets: &[Triplet], table: &FeatureTable) -> Result<Vec<TripletFeatures>> {
    triplets
        .iter()
        .map(|t| {
            Ok(TripletFeatures {
                pos: table.get(&t.query_id, &t.pos_id)?.to_vec(),
                neg: table.get(&t.query_id, &t.neg_id)?.to_vec(),
                confidence: t.confidence,
            })
        })
        .collect()
}

/// Mini-batch gradient descent on the hinge objective.
///
/// Weights are initialized from `opts.seed`; each epoch visits the triplets
/// in an order shuffled by a separate stream of the same seed.
pub fn train(data: &[TripletFeatures], opts: &TrainOptions) -> Result<(ScorerParams, LossTrace)> {
    opts.validate()?;
    let first = data.first().ok_or(Error::Empty("triplet list"))?;
    let dim = first.pos.len();
    let params = ScorerParams::init(dim, &opts.hidden_sizes, opts.init_scale, opts.seed)?;
    train_from(params, data, opts)
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    mut params: ScorerParams,
    data: &[TripletFeatures],
    opts: &TrainOptions,
) -> Result<(ScorerParams, LossTrace)> {
    opts.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("triplet list"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(opts.batch_size);
    let mut trace = LossTrace::default();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let grad = gradient(&params, &batch, opts)?;
            params.descend(&grad, opts.learning_rate);
        }
        let loss = batch_loss(&params, data, opts)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} after epoch {epoch}; lower the learning rate"
            )));
        }
        trace.losses.push(loss);
    }
    Ok((params, trace))
}

/// Candidates sorted by descending score, ties by ascending passage id.
pub fn rank_candidates<F>(candidate_ids: &[String], mut score: F) -> Result<Vec<(String, f64)>>
where
    F: FnMut(&str) -> Result<f64>,
{
    let mut scored = candidate_ids
        .iter()
        .map(|p| Ok((p.clone(), score(p)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// Ranks one query's candidates with a trained scorer.
pub fn rank(
    params: &ScorerParams,
    query_id: &str,
    candidate_ids: &[String],
    featurizer: &Featurizer<'_>,
) -> Result<Vec<(String, f64)>> {
    rank_candidates(candidate_ids, |p| params.score(&featurizer.featurize(query_id, p)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::Arc;

    use crate::corpus::{parse_dataset, Split};
    use crate::embeddings::EmbeddingStore;
    use crate::labeling::{LabelingFunction, ScoreContext, ScoreSource};
    use crate::lexical::{Bm25Params, TokenizerConfig};

    const DATA: &str = r#"{"kind":"passage","id":"p1","text":"red apple"}
{"kind":"passage","id":"p2","text":"green pear"}
{"kind":"passage","id":"p3","text":"red pear"}
{"kind":"query","id":"q1","text":"red fruit","candidates":["p1","p2","p3"]}
"#;

    fn context() -> (crate::corpus::Dataset, ScoreContext, Vec<LabelingFunction>) {
        let ds = parse_dataset(DATA, Split::Train).unwrap();
        let mut store = EmbeddingStore::new(2, "toy").unwrap();
        store.insert("q1", vec![1.0, 2.0]).unwrap();
        store.insert("p1", vec![1.0, 2.0]).unwrap();
        store.insert("p2", vec![-1.0, 0.5]).unwrap();
        store.insert("p3", vec![0.0, 3.0]).unwrap();
        let mut stores = HashMap::new();
        stores.insert("u".to_owned(), Arc::new(store));
        let ctx = ScoreContext::build(&ds, &TokenizerConfig::default(), Bm25Params::default(), stores).unwrap();
        let fns = vec![
            LabelingFunction::new("bm25", ScoreSource::Bm25),
            LabelingFunction::new("u", ScoreSource::Embedding("u".into())),
        ];
        (ds, ctx, fns)
    }

    #[test]
    fn identical_embeddings_give_squared_product_block() {
        let (ds, ctx, fns) = context();
        let schema = FeatureSchema::new(&ctx, Some("u"), &fns).unwrap();
        assert_eq!(schema.dim(), 3 * 2 + 2);
        let std = Standardizer::fit(&schema, &ctx, &ds).unwrap();
        let fz = Featurizer {
            schema: &schema,
            standardizer: &std,
            ctx: &ctx,
        };
        let x = fz.featurize("q1", "p1").unwrap();
        assert_eq!(&x[4..6], &[1.0, 4.0]);
    }

    #[test]
    fn standardized_features_have_zero_mean_unit_variance() {
        let (ds, ctx, fns) = context();
        let schema = FeatureSchema::new(&ctx, None, &fns).unwrap();
        let std = Standardizer::fit(&schema, &ctx, &ds).unwrap();
        let fz = Featurizer {
            schema: &schema,
            standardizer: &std,
            ctx: &ctx,
        };
        let rows: Vec<Vec<f64>> = ds.pairs().map(|(q, p)| fz.featurize(q, p).unwrap()).collect();
        for j in 0..2 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / 3.0;
            let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        // A pair scoring exactly the training mean maps to 0.
        let at_mean = Standardizer {
            mean: vec![ctx.score(&ScoreSource::Bm25, "q1", "p2").unwrap(), 0.0],
            std: vec![2.0, 1.0],
        };
        let fz = Featurizer {
            schema: &schema,
            standardizer: &at_mean,
            ctx: &ctx,
        };
        assert_eq!(fz.featurize("q1", "p2").unwrap()[0], 0.0);
    }

    #[test]
    fn golden_feature_vector() {
        let (_, ctx, fns) = context();
        let schema = FeatureSchema::new(&ctx, Some("u"), &fns).unwrap();
        let id = Standardizer::identity(2);
        let fz = Featurizer {
            schema: &schema,
            standardizer: &id,
            ctx: &ctx,
        };
        let x = fz.featurize("q1", "p3").unwrap();
        // bm25: only "red" matches; df(red) = 2, N = 3, len = avg = 2.
        let bm25 = (1.5f64 / 2.5 + 1.0).ln() * 2.2 / 2.2;
        let cos = 6.0 / (5.0f64.sqrt() * 3.0);
        let expect = [1.0, 2.0, 0.0, 3.0, 0.0, 6.0, bm25, cos];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn missing_embedding_is_error() {
        let (_, ctx, fns) = context();
        let schema = FeatureSchema::new(&ctx, Some("u"), &fns).unwrap();
        let id = Standardizer::identity(2);
        let fz = Featurizer {
            schema: &schema,
            standardizer: &id,
            ctx: &ctx,
        };
        assert!(fz.featurize("q9", "p1").is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = vec![TripletFeatures {
            pos: vec![0.1, 0.2],
            neg: vec![0.3, -0.1],
            confidence: 1.0,
        }];
        let opts = TrainOptions {
            learning_rate: 0.0,
            epochs: 3,
            hidden_sizes: vec![4, 2],
            ..Default::default()
        };
        let (p, trace) = train(&data, &opts).unwrap();
        assert_eq!(p, ScorerParams::init(2, &[4, 2], 1.0, 0).unwrap());
        assert_eq!(trace.losses.len(), 3);
        assert!(trace.losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn identical_features_rank_by_id() {
        let p = ScorerParams::init(2, &[3], 1.0, 5).unwrap();
        let ids: Vec<String> = ["c", "a", "b"].iter().map(|s| (*s).to_owned()).collect();
        let ranked = rank_candidates(&ids, |_| p.score(&[0.5, 0.5])).unwrap();
        let order: Vec<&str> = ranked.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn empty_triplets_rejected() {
        assert!(matches!(train(&[], &TrainOptions::default()), Err(Error::Empty(_))));
    }
}
