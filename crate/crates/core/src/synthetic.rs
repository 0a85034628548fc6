//! Seeded synthetic benchmarks with planted relevance.
//!
//! [`text_benchmark`] produces real text and two embedding stores so that
//! the standard BM25 / TF-IDF / cosine labeling functions all carry signal.
//! [`planted_benchmark`] instead plants one score per labeling function,
//! each a noisy copy of the gold relevance, encoded as a 2-d embedding store
//! whose query/passage cosine equals that score.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

use crate::corpus::{self, CandidateSet, Dataset, Passage, Query, Relevance, Split};
use crate::embeddings::{write_embeddings, EmbeddingStore};
use crate::error::{Error, Result};
use crate::pipeline::{FunctionConfig, PipelineConfig, SourceKind};

/// Generated splits plus the embedding stores covering their ids.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub train: Dataset,
    pub test: Dataset,
    pub stores: Vec<(String, EmbeddingStore)>,
    /// Whether the passage text carries signal for BM25 / TF-IDF.
    pub lexical: bool,
    /// Share of relevant pairs, used as the label-model prior.
    pub gamma: f64,
    /// Store suggested for the ranker's embedding features.
    pub feature_store: Option<String>,
}

/// Paths written by [`SyntheticBenchmark::write_to`].
#[derive(Debug, Clone)]
pub struct BenchmarkFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub stores: Vec<(String, PathBuf)>,
}

impl SyntheticBenchmark {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<BenchmarkFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let train = dir.join("train.jsonl");
        let test = dir.join("test.jsonl");
        corpus::write_dataset(&self.train, &train)?;
        corpus::write_dataset(&self.test, &test)?;
        let mut stores = Vec::new();
        for (name, store) in &self.stores {
            let path = dir.join(format!("{name}.emb"));
            write_embeddings(store, &path)?;
            stores.push((name.clone(), path));
        }
        Ok(BenchmarkFiles { train, test, stores })
    }

    /// Pipeline config over files written to one directory, with paths
    /// relative to it: one embedding labeling function per store, plus BM25
    /// and TF-IDF when the text is informative.
    pub fn config(&self, files: &BenchmarkFiles, seed: u64) -> PipelineConfig {
        let rel = |p: &Path| PathBuf::from(p.file_name().expect("file path"));
        let mut c = PipelineConfig::with_train(rel(&files.train));
        c.data.test = Some(rel(&files.test));
        c.seed = seed;
        if !self.lexical {
            c.labeling.functions.clear();
        }
        for (name, path) in &files.stores {
            c.labeling.functions.push(FunctionConfig {
                name: name.clone(),
                source: SourceKind::Embedding,
                store: Some(name.clone()),
            });
            c.embeddings.insert(name.clone(), rel(path));
        }
        c.features.embedding = self.feature_store.clone();
        c.aggregation.gamma = self.gamma;
        c.train.learning_rate = 0.01;
        c.train.epochs = 30;
        c
    }

    /// Writes the benchmark and a `config.toml` for it; returns the config
    /// path.
    pub fn write_with_config(&self, dir: impl AsRef<Path>, seed: u64) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let files = self.write_to(dir)?;
        let path = dir.join("config.toml");
        fs::write(&path, self.config(&files, seed).to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextBenchOptions {
    pub train_queries: usize,
    pub test_queries: usize,
    pub candidates: usize,
    pub vocab: usize,
    pub embedding_dim: usize,
}

impl Default for TextBenchOptions {
    fn default() -> Self {
        Self {
            train_queries: 20,
            test_queries: 10,
            candidates: 10,
            vocab: 300,
            embedding_dim: 8,
        }
    }
}

fn vocabulary(size: usize) -> Vec<String> {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let s = syllables.len();
    (0..size)
        .map(|i| format!("{}{}{}", syllables[i % s], syllables[(i / s) % s], syllables[(i * 7 + 3) % s]))
        .collect()
}

/// Topic-word queries with lexically and semantically related relevant
/// passages; distractors occasionally share one topic word.
pub fn text_benchmark(opts: &TextBenchOptions, seed: u64) -> Result<SyntheticBenchmark> {
    if opts.candidates < 2 || opts.vocab < 20 || opts.embedding_dim == 0 {
        return Err(Error::config("synthetic", "need >= 2 candidates, >= 20 words, dim >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = vocabulary(opts.vocab);
    let names = ["universal", "bert"];
    let mut stores: Vec<EmbeddingStore> = names
        .iter()
        .map(|n| EmbeddingStore::new(opts.embedding_dim, format!("synthetic-{n} seed={seed}")))
        .collect::<Result<_>>()?;

    let mut make_split = |split: Split, prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut ds = Dataset {
            split,
            queries: Vec::new(),
            passages: Vec::new(),
            candidate_sets: Vec::new(),
        };
        for qi in 0..n {
            let qid = format!("{prefix}q{qi:04}");
            let topic: Vec<&String> = words.choose_multiple(rng, 3).collect();
            let filler = |rng: &mut ChaCha8Rng, k: usize| -> Vec<String> {
                (0..k).map(|_| words[rng.random_range(0..words.len())].clone()).collect()
            };
            let mut qwords: Vec<String> = topic.iter().map(|w| (*w).clone()).collect();
            qwords.extend(filler(rng, 1));
            ds.queries.push(Query {
                id: qid.clone(),
                text: qwords.join(" "),
            });

            let n_rel = if rng.random_bool(0.3) { 2 } else { 1 };
            let mut gold = BTreeMap::new();
            let mut ids = Vec::new();
            let topic_vecs: Vec<Vec<f64>> = (0..stores.len())
                .map(|_| (0..opts.embedding_dim).map(|_| normal(rng)).collect())
                .collect();
            for (s, store) in stores.iter_mut().enumerate() {
                let v: Vec<f32> = topic_vecs[s].iter().map(|t| (t + 0.5 * normal(rng)) as f32).collect();
                store.insert(qid.clone(), v)?;
            }
            for pi in 0..opts.candidates {
                let pid = format!("{qid}-p{pi:02}");
                let relevant = pi < n_rel;
                let len = rng.random_range(8..14);
                let mut text = filler(rng, len);
                if relevant {
                    let k = rng.random_range(1..=3);
                    for w in topic.choose_multiple(rng, k) {
                        text.push((*w).clone());
                    }
                } else if rng.random_bool(0.3) {
                    text.push(topic[rng.random_range(0..topic.len())].clone());
                }
                text.shuffle(rng);
                for (s, store) in stores.iter_mut().enumerate() {
                    let weight = if relevant { 1.0 } else { 0.3 };
                    let v: Vec<f32> = topic_vecs[s]
                        .iter()
                        .map(|t| (weight * t + normal(rng)) as f32)
                        .collect();
                    store.insert(pid.clone(), v)?;
                }
                gold.insert(
                    pid.clone(),
                    if relevant {
                        Relevance::Relevant
                    } else {
                        Relevance::NonRelevant
                    },
                );
                ds.passages.push(Passage {
                    id: pid.clone(),
                    text: text.join(" "),
                });
                ids.push(pid);
            }
            ids.shuffle(rng);
            ds.candidate_sets.push(CandidateSet {
                query_id: qid,
                passage_ids: ids,
                gold: Some(gold),
            });
        }
        Ok(ds)
    };

    let train = make_split(Split::Train, "tr-", opts.train_queries, &mut rng)?;
    let test = make_split(Split::Test, "te-", opts.test_queries, &mut rng)?;
    let relevant = train
        .candidate_sets
        .iter()
        .flat_map(|cs| cs.passage_ids.iter().filter(|p| cs.is_relevant(p)))
        .count();
    Ok(SyntheticBenchmark {
        gamma: relevant as f64 / train.num_pairs().max(1) as f64,
        train,
        test,
        stores: names.iter().map(|n| (*n).to_owned()).zip(stores).collect(),
        lexical: true,
        feature_store: Some(names[0].to_owned()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOptions {
    pub train_queries: usize,
    pub test_queries: usize,
    pub candidates: usize,
    /// Per function: probability that its boosted candidate is a random
    /// non-relevant one instead of the relevant one.
    pub flip_rates: Vec<f64>,
    /// Boost added to the targeted candidate's score.
    pub signal: f64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        Self {
            train_queries: 200,
            test_queries: 200,
            candidates: 20,
            flip_rates: vec![0.46, 0.48, 0.5, 0.52],
            signal: 6.0,
        }
    }
}

/// One relevant candidate per query. Function `j` scores every candidate
/// with standard normal noise and adds `signal` to a single target: a
/// uniformly chosen non-relevant candidate on exactly
/// `round(flip_rates[j] * n)` randomly chosen queries of each split, the
/// relevant one otherwise. Stores are named `lf0`, `lf1`, ...
pub fn planted_benchmark(opts: &PlantedOptions, seed: u64) -> Result<SyntheticBenchmark> {
    if opts.candidates < 2 || opts.flip_rates.is_empty() || opts.flip_rates.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::config("synthetic", "need >= 2 candidates and >= 1 function"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = opts.flip_rates.len();
    let mut stores: Vec<EmbeddingStore> = (0..k)
        .map(|j| EmbeddingStore::new(2, format!("planted-lf{j} flip={} seed={seed}", opts.flip_rates[j])))
        .collect::<Result<_>>()?;

    let mut make_split = |split: Split, prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut ds = Dataset {
            split,
            queries: Vec::new(),
            passages: Vec::new(),
            candidate_sets: Vec::new(),
        };
        let m = opts.candidates;
        let flipped: Vec<Vec<bool>> = opts
            .flip_rates
            .iter()
            .map(|f| {
                let mut mask = vec![false; n];
                let count = ((f * n as f64).round() as usize).min(n);
                for i in rand::seq::index::sample(rng, n, count) {
                    mask[i] = true;
                }
                mask
            })
            .collect();
        for qi in 0..n {
            let qid = format!("{prefix}q{qi:04}");
            ds.queries.push(Query {
                id: qid.clone(),
                text: format!("query {qi}"),
            });
            let relevant = rng.random_range(0..m);
            let ids: Vec<String> = (0..m).map(|pi| format!("{qid}-p{pi:02}")).collect();
            for (j, store) in stores.iter_mut().enumerate() {
                let target = if flipped[j][qi] {
                    let other = rng.random_range(0..m - 1);
                    if other >= relevant {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    relevant
                };
                store.insert(qid.clone(), vec![1.0, 0.0])?;
                for (pi, pid) in ids.iter().enumerate() {
                    let boost = if pi == target { opts.signal } else { 0.0 };
                    let score = boost + normal(rng);
                    // cos of the angle equals tanh(score / 4): a strictly
                    // increasing map into (-1, 1).
                    let c = (score / 4.0).tanh();
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    store.insert(pid.clone(), vec![c as f32, s as f32])?;
                }
            }
            for (pi, pid) in ids.iter().enumerate() {
                ds.passages.push(Passage {
                    id: pid.clone(),
                    text: format!("passage {pi} for query {qi}"),
                });
            }
            let gold = ids
                .iter()
                .enumerate()
                .map(|(pi, pid)| {
                    let r = if pi == relevant {
                        Relevance::Relevant
                    } else {
                        Relevance::NonRelevant
                    };
                    (pid.clone(), r)
                })
                .collect();
            ds.candidate_sets.push(CandidateSet {
                query_id: qid,
                passage_ids: ids,
                gold: Some(gold),
            });
        }
        Ok(ds)
    };

    let train = make_split(Split::Train, "tr-", opts.train_queries, &mut rng)?;
    let test = make_split(Split::Test, "te-", opts.test_queries, &mut rng)?;
    Ok(SyntheticBenchmark {
        train,
        test,
        stores: (0..k).map(|j| format!("lf{j}")).zip(stores).collect(),
        lexical: false,
        gamma: 1.0 / opts.candidates as f64,
        feature_store: None,
    })
}
