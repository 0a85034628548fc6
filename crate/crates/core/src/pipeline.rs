//! Config-driven pipeline stages with on-disk artifacts.
//!
//! Each stage reads its inputs from files (the dataset and embedding paths
//! named in the config, or artifacts of earlier stages in the output
//! directory) and writes its outputs there, so a run can be resumed, diffed
//! or inspected at any point. Every artifact carries a provenance record:
//! stage name and version, SHA-256 of the config, and the seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{self, AggregatedLabels, AggregationMethod, FitOptions};
use crate::corpus::{self, Dataset, Split};
use crate::embeddings::{load_embeddings, EmbeddingStore};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport, PseudoLabelQuality};
use crate::labeling::{self, LabelMatrix, LabelScheme, LabelingFunction, ScoreContext, ScoreSource};
use crate::lexical::{Bm25Params, TokenizerConfig};
use crate::trainer::{self, Checkpoint, FeatureSchema, Featurizer, LossTrace, Standardizer, TrainOptions};
use crate::triplets::{self, TripletSet, DEFAULT_SAMPLES_PER_QUERY};

pub const LABELS: &str = "labels.tsv";
pub const AGGREGATED: &str = "aggregated.tsv";
pub const LABEL_MODEL: &str = "label_model.json";
pub const FIT_TRACE: &str = "fit_trace.csv";
pub const TRIPLETS: &str = "triplets.tsv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_TRACE: &str = "train_trace.csv";
pub const RANKING: &str = "ranking.tsv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Split ranked and evaluated; defaults to test, then val, then train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Bm25,
    Tfidf,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionConfig {
    pub name: String,
    pub source: SourceKind,
    /// Key into `[embeddings]`; required for `source = "embedding"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<String>,
}

impl FunctionConfig {
    fn to_function(&self) -> LabelingFunction {
        let source = match self.source {
            SourceKind::Bm25 => ScoreSource::Bm25,
            SourceKind::Tfidf => ScoreSource::Tfidf,
            SourceKind::Embedding => ScoreSource::Embedding(self.store.clone().unwrap_or_default()),
        };
        LabelingFunction::new(self.name.clone(), source)
    }
}

fn default_functions() -> Vec<FunctionConfig> {
    [("bm25", SourceKind::Bm25), ("tfidf", SourceKind::Tfidf)]
        .into_iter()
        .map(|(name, source)| FunctionConfig {
            name: name.to_owned(),
            source,
            store: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub tied_top_all_positive: bool,
    pub functions: Vec<FunctionConfig>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            tied_top_all_positive: false,
            functions: default_functions(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Store supplying the embedding blocks of the ranker input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Majority,
    #[default]
    Generative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub method: AggregatorKind,
    /// Fixed class prior of the generative model.
    pub gamma: f64,
    /// Labeling functions fed to the aggregator; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<String>>,
    pub fit: FitOptions,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            method: AggregatorKind::Generative,
            gamma: 0.01,
            functions: None,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletConfig {
    pub per_query_samples: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            per_query_samples: DEFAULT_SAMPLES_PER_QUERY,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Full pipeline configuration, read from TOML.
///
/// Relative paths resolve against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub bm25: Bm25Params,
    /// Store name to EMB1 file.
    #[serde(default)]
    pub embeddings: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub triplets: TripletConfig,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn within(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    })
}

impl PipelineConfig {
    /// A config with every default filled in and the given training file.
    pub fn with_train(train: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            data: DataConfig {
                train: train.into(),
                val: None,
                test: None,
                eval_split: None,
            },
            tokenizer: TokenizerConfig::default(),
            bm25: Bm25Params::default(),
            embeddings: BTreeMap::new(),
            labeling: LabelingConfig::default(),
            features: FeatureConfig::default(),
            aggregation: AggregationConfig::default(),
            triplets: TripletConfig::default(),
            train: TrainOptions::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            message: e.message().to_owned()
                + &e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default(),
        })?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// SHA-256 of the canonical TOML form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn split_path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => Some(&self.data.train),
            Split::Val => self.data.val.as_deref(),
            Split::Test => self.data.test.as_deref(),
        }
    }

    pub fn eval_split(&self) -> Split {
        self.data.eval_split.unwrap_or(if self.data.test.is_some() {
            Split::Test
        } else if self.data.val.is_some() {
            Split::Val
        } else {
            Split::Train
        })
    }

    pub fn labeling_functions(&self) -> Vec<LabelingFunction> {
        self.labeling.functions.iter().map(FunctionConfig::to_function).collect()
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Embedding stores some function or the feature block refers to.
    pub fn referenced_stores(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .labeling
            .functions
            .iter()
            .filter_map(|f| f.store.as_deref())
            .chain(self.features.embedding.as_deref())
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// Checks every field and that every referenced file exists. The error
    /// names the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.aggregation.gamma > 0.0 && self.aggregation.gamma < 1.0) {
            return Err(Error::config("aggregation.gamma", "must lie in (0, 1)"));
        }
        within("aggregation.fit", self.aggregation.fit.validate())?;
        within("train", self.train.validate())?;
        if self.triplets.per_query_samples == 0 {
            return Err(Error::config("triplets.per_query_samples", "must be at least 1"));
        }
        if !(self.bm25.k1 >= 0.0 && self.bm25.k1.is_finite()) {
            return Err(Error::config("bm25.k1", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(Error::config("bm25.b", "must lie in [0, 1]"));
        }
        if self.tokenizer.min_token_len == 0 {
            return Err(Error::config("tokenizer.min_token_len", "must be at least 1"));
        }

        let fns = &self.labeling.functions;
        if fns.is_empty() {
            return Err(Error::config("labeling.functions", "at least one function is required"));
        }
        let mut names = HashSet::new();
        for (i, f) in fns.iter().enumerate() {
            let field = |k: &str| format!("labeling.functions[{i}].{k}");
            if f.name.is_empty() || f.name.contains(char::is_whitespace) {
                return Err(Error::config(field("name"), "must be non-empty without whitespace"));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(field("name"), format!("duplicate function `{}`", f.name)));
            }
            match (f.source, &f.store) {
                (SourceKind::Embedding, None) => {
                    return Err(Error::config(field("store"), "required for embedding sources"));
                }
                (SourceKind::Embedding, Some(s)) if !self.embeddings.contains_key(s) => {
                    return Err(Error::config(field("store"), format!("no `{s}` entry in [embeddings]")));
                }
                (SourceKind::Bm25 | SourceKind::Tfidf, Some(_)) => {
                    return Err(Error::config(field("store"), "only embedding sources take a store"));
                }
                _ => {}
            }
        }
        if let Some(selected) = &self.aggregation.functions {
            if selected.is_empty() {
                return Err(Error::config("aggregation.functions", "must not be empty"));
            }
            let mut seen = HashSet::new();
            for name in selected {
                if !names.contains(name.as_str()) {
                    return Err(Error::config(
                        "aggregation.functions",
                        format!("unknown labeling function `{name}`"),
                    ));
                }
                if !seen.insert(name) {
                    return Err(Error::config("aggregation.functions", format!("duplicate `{name}`")));
                }
            }
        }
        if let Some(s) = &self.features.embedding {
            if !self.embeddings.contains_key(s) {
                return Err(Error::config("features.embedding", format!("no `{s}` entry in [embeddings]")));
            }
        }

        let eval_split = self.eval_split();
        if self.split_path(eval_split).is_none() {
            return Err(Error::config("data.eval_split", format!("no path configured for `{eval_split}`")));
        }
        let mut files: Vec<(String, &Path)> = vec![("data.train".into(), &self.data.train)];
        if let Some(p) = &self.data.val {
            files.push(("data.val".into(), p));
        }
        if let Some(p) = &self.data.test {
            files.push(("data.test".into(), p));
        }
        for name in self.referenced_stores() {
            files.push((format!("embeddings.{name}"), &self.embeddings[name]));
        }
        for (field, path) in files {
            let full = self.resolve(path);
            if !full.is_file() {
                return Err(Error::config(field, format!("file not found: {}", full.display())));
            }
        }
        Ok(())
    }
}

/// The pipeline stages, in run order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Label,
    Aggregate,
    Triplets,
    Train,
    Rank,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Label,
        Stage::Aggregate,
        Stage::Triplets,
        Stage::Train,
        Stage::Rank,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Label => "label",
            Stage::Aggregate => "aggregate",
            Stage::Triplets => "triplets",
            Stage::Train => "train",
            Stage::Rank => "rank",
            Stage::Eval => "eval",
        }
    }

    /// Bumped whenever a stage's output format or semantics change.
    pub fn version(self) -> u32 {
        1
    }
}

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub stage_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub tool_version: String,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!(
            "stage={} stage_version={} config_sha256={} seed={} tool_version={}",
            self.stage, self.stage_version, self.config_sha256, self.seed, self.tool_version
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

/// Metrics written by the eval stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub split: Split,
    /// Trained ranker on the eval split, when a ranking exists.
    pub ranker: Option<MetricReport>,
    /// Pseudo-label quality on the training split, per labeling function
    /// and for the aggregated labels (`aggregated`).
    pub pseudo_labels: BTreeMap<String, PseudoLabelQuality>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.provenance.comment());
        if let Some(r) = &self.ranker {
            let _ = writeln!(out, "ranker on {} split ({} queries, {} excluded)", self.split, r.evaluated, r.excluded);
            out.push_str(&r.to_table("ranker"));
        }
        if !self.pseudo_labels.is_empty() {
            if self.ranker.is_some() {
                out.push('\n');
            }
            let w = self.pseudo_labels.keys().map(String::len).max().unwrap_or(0).max(6);
            let _ = writeln!(out, "pseudo labels on train split");
            let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6}", "source", "P@1", "R@1", "AUC");
            for (name, q) in &self.pseudo_labels {
                let _ = writeln!(
                    out,
                    "{:<w$}  {:>6.2}  {:>6.2}  {:>6.2}",
                    name,
                    100.0 * q.p_at_1,
                    100.0 * q.r_at_1,
                    100.0 * q.auc
                );
            }
        }
        out
    }
}

/// One ranked query of the rank stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
}

/// A validated config bound to its output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
    out_dir: PathBuf,
}

impl Pipeline {
    /// Validates the config, including that referenced files exist, before
    /// any stage runs.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let out_dir = config.resolve(&config.output_dir);
        Ok(Self {
            hash: config.hash(),
            config,
            out_dir,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn provenance(&self, stage: Stage) -> Provenance {
        Provenance {
            stage: stage.name().to_owned(),
            stage_version: stage.version(),
            config_sha256: self.hash.clone(),
            seed: self.config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    fn read_input(&self, stage: Stage, name: &str) -> Result<String> {
        let path = self.artifact(name);
        if !path.is_file() {
            return Err(Error::MissingInput {
                stage: stage.name(),
                path,
            });
        }
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.artifact(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let path = self
            .config
            .split_path(split)
            .ok_or_else(|| Error::config(format!("data.{split}"), "not configured"))?;
        let ds = corpus::load_dataset(self.config.resolve(path), split)?;
        let violations = corpus::validate(&ds);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidDataset(format!(
                "{split} split: {} ({} violation(s))",
                v,
                violations.len()
            )));
        }
        Ok(ds)
    }

    fn load_stores(&self) -> Result<HashMap<String, Arc<EmbeddingStore>>> {
        self.config
            .referenced_stores()
            .into_iter()
            .map(|name| {
                let store = load_embeddings(self.config.resolve(&self.config.embeddings[name]))?;
                Ok((name.to_owned(), Arc::new(store)))
            })
            .collect()
    }

    fn context(&self, dataset: &Dataset, stores: HashMap<String, Arc<EmbeddingStore>>) -> Result<ScoreContext> {
        let ctx = ScoreContext::build(dataset, &self.config.tokenizer, self.config.bm25, stores)?;
        ctx.check_resolvable(dataset, &self.config.labeling_functions())?;
        if let Some(name) = &self.config.features.embedding {
            let store = ctx.store(name)?;
            for (q, p) in dataset.pairs() {
                for (role, id) in [("query", q), ("passage", p)] {
                    if !store.contains(id) {
                        return Err(Error::MissingEmbedding {
                            store: name.clone(),
                            role,
                            id: id.to_owned(),
                        });
                    }
                }
            }
        }
        Ok(ctx)
    }

    /// Applies the labeling functions to the training split.
    pub fn label(&self) -> Result<LabelMatrix> {
        let train = self.load_split(Split::Train)?;
        let mut splits = vec![train];
        for split in [Split::Val, Split::Test] {
            if self.config.split_path(split).is_some() {
                splits.push(self.load_split(split)?);
            }
        }
        let refs: Vec<&Dataset> = splits.iter().collect();
        if let Some(v) = corpus::check_disjoint(&refs).first() {
            return Err(Error::InvalidDataset(v.to_string()));
        }
        let train = &splits[0];
        let ctx = self.context(train, self.load_stores()?)?;
        let scheme = LabelScheme {
            tied_top_all_positive: self.config.labeling.tied_top_all_positive,
        };
        let matrix = labeling::apply_labeling_functions(train, &self.config.labeling_functions(), &ctx, scheme)?;
        let comment = self.provenance(Stage::Label).comment();
        self.write(LABELS, matrix.to_tsv(Some(&comment)))?;
        info!("labeled {} pairs with {} functions", matrix.n(), matrix.k());
        Ok(matrix)
    }

    /// Fuses the label matrix into one label per pair.
    pub fn aggregate(&self) -> Result<AggregatedLabels> {
        let mut matrix = LabelMatrix::from_tsv(&self.read_input(Stage::Aggregate, LABELS)?)?;
        if let Some(selected) = &self.config.aggregation.functions {
            let cols = selected
                .iter()
                .map(|name| {
                    matrix.functions.iter().position(|f| f == name).ok_or_else(|| {
                        Error::config("aggregation.functions", format!("`{name}` is not a column of {LABELS}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            matrix = matrix.select_columns(&cols)?;
        }
        let provenance = self.provenance(Stage::Aggregate);
        let (method, mut model) = match self.config.aggregation.method {
            AggregatorKind::Majority => {
                let trace = self.artifact(FIT_TRACE);
                if trace.exists() {
                    fs::remove_file(&trace).map_err(|e| Error::io(&trace, e))?;
                }
                let model = serde_json::json!({ "functions": matrix.functions });
                (AggregationMethod::Majority, model)
            }
            AggregatorKind::Generative => {
                let (params, trace) = aggregation::fit_generative_model(
                    &matrix,
                    self.config.aggregation.gamma,
                    &self.config.aggregation.fit,
                )?;
                info!(
                    "label model fit: {} iterations, objective {:.6}, converged {}",
                    trace.entries.len(),
                    trace.final_objective(),
                    trace.converged
                );
                self.write(FIT_TRACE, trace.to_csv(Some(&provenance.comment())))?;
                let model = serde_json::to_value(&params).expect("params serialize");
                (AggregationMethod::Generative(params), model)
            }
        };
        let aggregated = aggregation::aggregate(&matrix, &method)?;
        model["method"] = serde_json::to_value(self.config.aggregation.method).expect("method serializes");
        model["provenance"] = provenance.to_json();
        let json = serde_json::to_string_pretty(&model).expect("model serializes") + "\n";
        self.write(LABEL_MODEL, json)?;
        self.write(AGGREGATED, aggregated.to_tsv(Some(&provenance.comment())))?;
        info!("{} of {} pairs abstained", aggregated.abstentions(), aggregated.pairs.len());
        Ok(aggregated)
    }

    /// Samples training triplets from the aggregated labels.
    pub fn triplets(&self) -> Result<TripletSet> {
        let aggregated = AggregatedLabels::from_tsv(&self.read_input(Stage::Triplets, AGGREGATED)?)?;
        let set = triplets::generate_triplets(&aggregated, self.config.triplets.per_query_samples, self.config.seed)?;
        if set.skipped_queries > 0 {
            warn!("{} queries lack a positive or a negative and yield no triplets", set.skipped_queries);
        }
        let comment = self.provenance(Stage::Triplets).comment();
        self.write(TRIPLETS, triplets::to_tsv(&set.triplets, Some(&comment)))?;
        Ok(set)
    }

    /// Trains the ranker on the sampled triplets.
    pub fn train(&self) -> Result<(Checkpoint, LossTrace)> {
        let triplets = triplets::from_tsv(&self.read_input(Stage::Train, TRIPLETS)?)?;
        if triplets.is_empty() {
            return Err(Error::Empty("triplet list"));
        }
        let train = self.load_split(Split::Train)?;
        let ctx = self.context(&train, self.load_stores()?)?;
        let functions = self.config.labeling_functions();
        let schema = FeatureSchema::new(&ctx, self.config.features.embedding.as_deref(), &functions)?;
        let standardizer = Standardizer::fit(&schema, &ctx, &train)?;
        let featurizer = Featurizer {
            schema: &schema,
            standardizer: &standardizer,
            ctx: &ctx,
        };
        let table = featurizer.table(&train)?;
        let data = trainer::resolve_triplets(&triplets, &table)?;
        let opts = self.config.train_options();
        let (params, trace) = trainer::train(&data, &opts)?;
        let provenance = self.provenance(Stage::Train);
        let checkpoint = Checkpoint::new(params, schema, standardizer, opts.margin, provenance.to_json())?;
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        checkpoint.save(self.artifact(CHECKPOINT))?;
        self.write(TRAIN_TRACE, trace.to_csv(Some(&provenance.comment())))?;
        info!("trained on {} triplets, final loss {:?}", data.len(), trace.last());
        Ok((checkpoint, trace))
    }

    /// Ranks every candidate set of the eval split with the checkpoint.
    pub fn rank(&self) -> Result<Vec<RankedQuery>> {
        let path = self.artifact(CHECKPOINT);
        if !path.is_file() {
            return Err(Error::MissingInput {
                stage: Stage::Rank.name(),
                path,
            });
        }
        let checkpoint = Checkpoint::load(&path)?;
        let split = self.config.eval_split();
        let ds = self.load_split(split)?;
        let ctx = self.context(&ds, self.load_stores()?)?;
        let featurizer = Featurizer {
            schema: &checkpoint.header.feature_schema,
            standardizer: &checkpoint.header.standardization,
            ctx: &ctx,
        };
        let ranked = ds
            .candidate_sets
            .iter()
            .map(|cs| {
                Ok(RankedQuery {
                    query_id: cs.query_id.clone(),
                    ranked: trainer::rank(&checkpoint.params, &cs.query_id, &cs.passage_ids, &featurizer)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = format!("# {} split={split}\nquery_id\trank\tpassage_id\tscore\n", self.provenance(Stage::Rank).comment());
        for rq in &ranked {
            for (i, (p, s)) in rq.ranked.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{p}\t{s:?}", rq.query_id, i + 1);
            }
        }
        self.write(RANKING, out)?;
        Ok(ranked)
    }

    /// Scores whatever artifacts exist: the ranking against eval-split gold,
    /// and the weak and aggregated labels against training-split gold.
    pub fn eval(&self) -> Result<EvalReport> {
        let split = self.config.eval_split();
        let mut ranker = None;
        let ranking_path = self.artifact(RANKING);
        if ranking_path.is_file() {
            let ds = self.load_split(split)?;
            if ds.has_gold() {
                let scores = parse_ranking(&self.read_input(Stage::Eval, RANKING)?)?;
                ranker = Some(eval::evaluate_ranker(&ds, |q, p| {
                    scores
                        .get(&(q.to_owned(), p.to_owned()))
                        .copied()
                        .ok_or_else(|| Error::UnknownPassage(format!("{p} (query {q}) missing from {RANKING}")))
                })?);
            } else {
                warn!("{split} split has no gold labels; skipping ranker metrics");
            }
        }

        let mut pseudo_labels = BTreeMap::new();
        let labels_path = self.artifact(LABELS);
        let aggregated_path = self.artifact(AGGREGATED);
        if labels_path.is_file() || aggregated_path.is_file() {
            let train = self.load_split(Split::Train)?;
            if train.has_gold() {
                if labels_path.is_file() {
                    let matrix = LabelMatrix::from_tsv(&self.read_input(Stage::Eval, LABELS)?)?;
                    for (j, name) in matrix.functions.iter().enumerate() {
                        let scores = (0..matrix.n())
                            .map(|i| (matrix.pairs[i].clone(), f64::from(matrix.get(i, j).value())))
                            .collect();
                        pseudo_labels.insert(name.clone(), eval::pseudo_label_quality(&scores, &train)?);
                    }
                }
                if aggregated_path.is_file() {
                    let agg = AggregatedLabels::from_tsv(&self.read_input(Stage::Eval, AGGREGATED)?)?;
                    let scores: HashMap<_, _> = agg
                        .iter()
                        .map(|(q, p, l)| {
                            let s = l.map_or(0.0, |l| l.signed_confidence());
                            ((q.to_owned(), p.to_owned()), s)
                        })
                        .collect();
                    pseudo_labels.insert("aggregated".to_owned(), eval::pseudo_label_quality(&scores, &train)?);
                }
            } else {
                warn!("train split has no gold labels; skipping pseudo-label quality");
            }
        }

        if ranker.is_none() && pseudo_labels.is_empty() {
            return Err(Error::MissingInput {
                stage: Stage::Eval.name(),
                path: ranking_path,
            });
        }
        let report = EvalReport {
            provenance: self.provenance(Stage::Eval),
            split,
            ranker,
            pseudo_labels,
        };
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        self.write(REPORT_JSON, json)?;
        self.write(REPORT_TXT, report.to_text())?;
        Ok(report)
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<EvalReport> {
        self.label()?;
        self.aggregate()?;
        self.triplets()?;
        self.train()?;
        self.rank()?;
        self.eval()
    }
}

fn parse_ranking(text: &str) -> Result<HashMap<(String, String), f64>> {
    let mut out = HashMap::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header {
            header = true;
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: format!("{RANKING}: {m}"),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let [q, _, p, s] = cols[..] else {
            return Err(bad("expected 4 columns"));
        };
        let s: f64 = s.parse().map_err(|_| bad("bad score"))?;
        out.insert((q.to_owned(), p.to_owned()), s);
    }
    Ok(out)
}

/// Documentation for every config key, in reference-page order.
const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "Seed for triplet sampling, weight init and batch shuffling."),
    ("output_dir", "Directory receiving the stage artifacts."),
    ("data.train", "Training split (JSONL); the labeling functions run on it."),
    ("data.val", "Optional validation split."),
    ("data.test", "Optional test split."),
    ("data.eval_split", "Split ranked and evaluated: train, val or test. Default: test, else val, else train."),
    ("tokenizer.lowercase", "Lowercase after NFKC normalization."),
    ("tokenizer.strip_punctuation", "Keep only alphanumeric runs as tokens."),
    ("tokenizer.min_token_len", "Drop tokens with fewer characters."),
    ("tokenizer.stopwords", "Tokens removed after normalization."),
    ("bm25.k1", "Term-frequency saturation."),
    ("bm25.b", "Length normalization."),
    ("embeddings.<store>", "EMB1 file for the named embedding store."),
    ("labeling.tied_top_all_positive", "Label every candidate tied with the top score +1, not just the first by id."),
    ("labeling.functions", "Labeling functions, one `[[labeling.functions]]` table each; default lists their names."),
    ("labeling.functions[].name", "Column name in the label matrix."),
    ("labeling.functions[].source", "bm25, tfidf or embedding."),
    ("labeling.functions[].store", "Embedding store key for embedding sources."),
    ("features.embedding", "Store supplying the query, passage and elementwise-product ranker features; scalar features only when absent."),
    ("aggregation.method", "majority or generative."),
    ("aggregation.gamma", "Fixed class prior Pr(y = +1) of the generative model, in (0, 1)."),
    ("aggregation.functions", "Subset of labeling functions to aggregate; all when absent."),
    ("aggregation.fit.step_size", "Initial step of each backtracking line search."),
    ("aggregation.fit.max_iterations", "Iteration cap of the label-model fit."),
    ("aggregation.fit.tolerance", "Stop when an accepted step gains less than this."),
    ("aggregation.fit.alpha_init", "Initial accuracy of every function."),
    ("aggregation.fit.beta_init", "Initial coverage of every function."),
    ("aggregation.fit.seed", "Reserved; the default start is deterministic."),
    ("triplets.per_query_samples", "Triplets drawn per query, without replacement."),
    ("train.margin", "Hinge margin."),
    ("train.learning_rate", "Gradient descent step size."),
    ("train.epochs", "Passes over the triplets."),
    ("train.batch_size", "Triplets per gradient step."),
    ("train.noise_aware", "Weight each triplet's loss by its confidence."),
    ("train.init_scale", "Multiplier on the uniform Glorot init bound."),
    ("train.hidden_sizes", "Hidden layer widths of the scorer."),
];

/// Markdown reference of every config key and its default.
pub fn config_reference() -> String {
    let mut example = PipelineConfig::with_train("train.jsonl");
    example.data.test = Some("test.jsonl".into());
    example.embeddings.insert("universal".into(), "universal.emb".into());
    example.labeling.functions.push(FunctionConfig {
        name: "universal".into(),
        source: SourceKind::Embedding,
        store: Some("universal".into()),
    });
    let defaults = PipelineConfig::with_train("train.jsonl");
    let value = toml::Value::try_from(&defaults).expect("config converts");
    let mut flat = BTreeMap::new();
    flatten("", &value, &mut flat);

    let mut out = String::from(
        "# Configuration reference\n\n\
         Generated by `weakrank config-reference`; do not edit by hand.\n\n\
         Relative paths resolve against the directory holding the config file.\n\n\
         | key | default | description |\n|---|---|---|\n",
    );
    for (key, doc) in KEY_DOCS {
        let default = flat
            .get(*key)
            .map(|v| format!("`{v}`"))
            .unwrap_or_else(|| "(none)".to_owned());
        let _ = writeln!(out, "| `{key}` | {default} | {doc} |");
    }
    out.push_str("\n## Example\n\n```toml\n");
    out.push_str(&example.to_toml());
    out.push_str("```\n");
    out
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        toml::Value::Array(items) if items.iter().all(toml::Value::is_table) && !items.is_empty() => {
            let names: Vec<String> = items
                .iter()
                .filter_map(|t| t.get("name").and_then(toml::Value::as_str).map(str::to_owned))
                .collect();
            out.insert(prefix.to_owned(), names.join(", "));
        }
        other => {
            out.entry(prefix.to_owned()).or_insert_with(|| other.to_string());
        }
    }
}

/// Config keys present in a full default config but missing from the
/// reference table.
pub fn undocumented_keys() -> Vec<String> {
    let value = toml::Value::try_from(PipelineConfig::with_train("train.jsonl")).expect("config converts");
    let mut flat = BTreeMap::new();
    flatten("", &value, &mut flat);
    flat.into_keys()
        .filter(|k| !KEY_DOCS.iter().any(|(d, _)| d == k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    const DATA: &str = r#"{"kind":"passage","id":"p1","text":"red apple"}
{"kind":"passage","id":"p2","text":"green pear"}
{"kind":"passage","id":"p3","text":"red pear"}
{"kind":"query","id":"q1","text":"red fruit","candidates":["p1","p2","p3"],"gold":{"p1":1,"p2":0,"p3":0}}
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = PipelineConfig::from_toml_str("[data]\ntrain = \"t.jsonl\"\n", "/x").unwrap();
        assert_eq!(c.aggregation.gamma, 0.01);
        assert_eq!(c.labeling.functions.len(), 2);
        assert_eq!(c.resolve(&c.data.train), PathBuf::from("/x/t.jsonl"));
        assert_eq!(c.eval_split(), Split::Train);
    }

    #[test]
    fn toml_round_trip() {
        let text = config_reference();
        let start = text.find("```toml\n").unwrap() + 8;
        let end = text.rfind("```").unwrap();
        let c = PipelineConfig::from_toml_str(&text[start..end], "").unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&c.to_toml(), "").unwrap(), c);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = PipelineConfig::from_toml_str("[data]\ntrain = \"t\"\n[train]\nlr = 1\n", "").unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn validation_names_field() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.jsonl", DATA);
        let mut c = PipelineConfig::with_train("t.jsonl");
        c.base_dir = dir.path().to_path_buf();
        c.validate().unwrap();

        let field = |c: &PipelineConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let mut bad = c.clone();
        bad.aggregation.gamma = 1.0;
        assert_eq!(field(&bad), "aggregation.gamma");
        let mut bad = c.clone();
        bad.train.learning_rate = -1.0;
        assert_eq!(field(&bad), "train.learning_rate");
        let mut bad = c.clone();
        bad.aggregation.fit.tolerance = 0.0;
        assert_eq!(field(&bad), "aggregation.fit.tolerance");
        let mut bad = c.clone();
        bad.labeling.functions.push(FunctionConfig {
            name: "u".into(),
            source: SourceKind::Embedding,
            store: Some("u".into()),
        });
        assert_eq!(field(&bad), "labeling.functions[2].store");
        bad.embeddings.insert("u".into(), "missing.emb".into());
        assert_eq!(field(&bad), "embeddings.u");
        let mut bad = c.clone();
        bad.aggregation.functions = Some(vec!["nope".into()]);
        assert_eq!(field(&bad), "aggregation.functions");
        let mut bad = c.clone();
        bad.data.eval_split = Some(Split::Test);
        assert_eq!(field(&bad), "data.eval_split");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::with_train("t.jsonl");
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn reference_documents_every_key() {
        assert!(undocumented_keys().is_empty(), "{:?}", undocumented_keys());
    }

    #[test]
    fn stage_without_input_reports_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.jsonl", DATA);
        let mut c = PipelineConfig::with_train("t.jsonl");
        c.base_dir = dir.path().to_path_buf();
        let p = Pipeline::new(c).unwrap();
        assert!(matches!(p.aggregate(), Err(Error::MissingInput { stage: "aggregate", .. })));
        assert!(matches!(p.rank(), Err(Error::MissingInput { stage: "rank", .. })));
        assert!(matches!(p.eval(), Err(Error::MissingInput { stage: "eval", .. })));
    }

    #[test]
    fn tiny_pipeline_runs() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.jsonl", DATA);
        let mut c = PipelineConfig::with_train("t.jsonl");
        c.base_dir = dir.path().to_path_buf();
        c.train.hidden_sizes = vec![4];
        c.aggregation.method = AggregatorKind::Majority;
        let p = Pipeline::new(c).unwrap();
        let report = p.run().unwrap();
        assert_eq!(report.ranker.as_ref().unwrap().evaluated, 1);
        assert!(report.pseudo_labels.contains_key("bm25"));
        assert!(report.pseudo_labels.contains_key("aggregated"));
        let labels = fs::read_to_string(p.artifact(LABELS)).unwrap();
        assert!(labels.starts_with("# stage=label stage_version=1 config_sha256="));
        for name in [LABELS, AGGREGATED, LABEL_MODEL, TRIPLETS, CHECKPOINT, TRAIN_TRACE, RANKING, REPORT_JSON, REPORT_TXT] {
            assert!(p.artifact(name).is_file(), "{name}");
        }
    }
}
