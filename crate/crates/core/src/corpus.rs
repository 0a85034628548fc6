//! Queries, passages and their candidate sets, loaded from JSONL.
//!
//! A dataset file holds two record kinds discriminated by `kind`:
//!
//! ```text
//! {"kind":"passage","id":"p1","text":"..."}
//! {"kind":"query","id":"q1","text":"...","candidates":["p1","p2"],"gold":{"p1":1}}
//! ```
//!
//! Text is kept verbatim; normalization belongs to [`crate::lexical`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Gold relevance of a candidate passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relevance {
    Relevant,
    NonRelevant,
}

impl Relevance {
    pub fn is_relevant(self) -> bool {
        matches!(self, Relevance::Relevant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub query_id: String,
    pub passage_ids: Vec<String>,
    pub gold: Option<BTreeMap<String, Relevance>>,
}

impl CandidateSet {
    /// Gold relevance of `passage_id`, `None` when unjudged or no gold exists.
    pub fn relevance(&self, passage_id: &str) -> Option<Relevance> {
        self.gold.as_ref()?.get(passage_id).copied()
    }

    pub fn is_relevant(&self, passage_id: &str) -> bool {
        self.relevance(passage_id)
            .is_some_and(Relevance::is_relevant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split `{other}`"))),
        }
    }
}

/// One split of a passage-ranking dataset.
///
/// `candidate_sets[i]` belongs to `queries[i]`. Fields are public so that
/// callers can assemble datasets in memory; [`validate`] reports any broken
/// invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub queries: Vec<Query>,
    pub passages: Vec<Passage>,
    pub candidate_sets: Vec<CandidateSet>,
}

impl Dataset {
    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.id == id)
    }

    /// Id → passage lookup table.
    pub fn passage_index(&self) -> HashMap<&str, &Passage> {
        self.passages.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn query_index(&self) -> HashMap<&str, &Query> {
        self.queries.iter().map(|q| (q.id.as_str(), q)).collect()
    }

    pub fn candidate_set(&self, query_id: &str) -> Option<&CandidateSet> {
        self.candidate_sets.iter().find(|c| c.query_id == query_id)
    }

    /// All (query, passage) pairs in file order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.candidate_sets.iter().flat_map(|cs| {
            cs.passage_ids
                .iter()
                .map(move |p| (cs.query_id.as_str(), p.as_str()))
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.candidate_sets.iter().map(|c| c.passage_ids.len()).sum()
    }

    pub fn has_gold(&self) -> bool {
        self.candidate_sets.iter().any(|c| c.gold.is_some())
    }
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Passage {
        id: String,
        text: String,
    },
    Query {
        id: String,
        text: String,
        candidates: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gold: Option<BTreeMap<String, u8>>,
    },
}

/// Parses a dataset from JSONL text.
pub fn parse_dataset(text: &str, split: Split) -> Result<Dataset> {
    let mut queries = Vec::new();
    let mut passages = Vec::new();
    let mut candidate_sets = Vec::new();
    let mut passage_ids = HashSet::new();
    let mut query_ids = HashSet::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match record {
            Record::Passage { id, text } => {
                if id.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "empty passage id".into(),
                    });
                }
                if !passage_ids.insert(id.clone()) {
                    return Err(Error::DuplicateId { kind: "passage", id });
                }
                passages.push(Passage { id, text });
            }
            Record::Query {
                id,
                text,
                candidates,
                gold,
            } => {
                if id.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "empty query id".into(),
                    });
                }
                if text.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("query `{id}` has empty text"),
                    });
                }
                if candidates.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("query `{id}` has no candidates"),
                    });
                }
                if !query_ids.insert(id.clone()) {
                    return Err(Error::DuplicateId { kind: "query", id });
                }
                let gold = gold
                    .map(|g| {
                        g.into_iter()
                            .map(|(pid, v)| match v {
                                1 => Ok((pid, Relevance::Relevant)),
                                0 => Ok((pid, Relevance::NonRelevant)),
                                other => Err(Error::Parse {
                                    line: line_no,
                                    message: format!(
                                        "gold value {other} for `{pid}` is not 0 or 1"
                                    ),
                                }),
                            })
                            .collect::<Result<BTreeMap<_, _>>>()
                    })
                    .transpose()?;
                candidate_sets.push(CandidateSet {
                    query_id: id.clone(),
                    passage_ids: candidates,
                    gold,
                });
                queries.push(Query { id, text });
            }
        }
    }

    if queries.is_empty() {
        return Err(Error::NoQueries);
    }

    let dataset = Dataset {
        split,
        queries,
        passages,
        candidate_sets,
    };
    // Passage records may follow the queries that cite them, so references
    // are resolved only once the whole file is read.
    for cs in &dataset.candidate_sets {
        let mut seen = HashSet::new();
        for pid in &cs.passage_ids {
            if !passage_ids.contains(pid) {
                return Err(Error::DanglingPassage {
                    query: cs.query_id.clone(),
                    passage: pid.clone(),
                });
            }
            if !seen.insert(pid) {
                return Err(Error::DuplicateId {
                    kind: "candidate",
                    id: format!("{} in query {}", pid, cs.query_id),
                });
            }
        }
    }
    if let Some(v) = validate(&dataset).into_iter().next() {
        return Err(Error::InvalidDataset(v.to_string()));
    }
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, split)
}

/// Serializes a dataset as JSONL: passages first, then queries, each in
/// their stored order.
pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for p in &dataset.passages {
        let rec = Record::Passage {
            id: p.id.clone(),
            text: p.text.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    for (q, cs) in dataset.queries.iter().zip(&dataset.candidate_sets) {
        let rec = Record::Query {
            id: q.id.clone(),
            text: q.text.clone(),
            candidates: cs.passage_ids.clone(),
            gold: cs.gold.as_ref().map(|g| {
                g.iter()
                    .map(|(k, v)| (k.clone(), u8::from(v.is_relevant())))
                    .collect()
            }),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(dataset).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Checks every dataset invariant and reports each violation found.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |entity: String, message: String| out.push(Violation { entity, message });

    let mut passage_ids = HashSet::new();
    for p in &dataset.passages {
        if p.id.is_empty() {
            report("passage".into(), "empty id".into());
        } else if !passage_ids.insert(p.id.as_str()) {
            report(format!("passage {}", p.id), "duplicate id".into());
        }
    }

    let mut query_ids = HashSet::new();
    for q in &dataset.queries {
        if q.id.is_empty() {
            report("query".into(), "empty id".into());
        } else if !query_ids.insert(q.id.as_str()) {
            report(format!("query {}", q.id), "duplicate id".into());
        }
        if q.text.is_empty() {
            report(format!("query {}", q.id), "empty text".into());
        }
    }

    if dataset.queries.len() != dataset.candidate_sets.len() {
        report(
            "dataset".into(),
            format!(
                "{} queries but {} candidate sets",
                dataset.queries.len(),
                dataset.candidate_sets.len()
            ),
        );
    }

    for cs in &dataset.candidate_sets {
        let entity = format!("candidate set {}", cs.query_id);
        if !query_ids.contains(cs.query_id.as_str()) {
            report(entity.clone(), "query id does not resolve".into());
        }
        if cs.passage_ids.is_empty() {
            report(entity.clone(), "no candidates".into());
        }
        let mut seen = HashSet::new();
        for pid in &cs.passage_ids {
            if !passage_ids.contains(pid.as_str()) {
                report(entity.clone(), format!("passage {pid} does not resolve"));
            }
            if !seen.insert(pid.as_str()) {
                report(entity.clone(), format!("passage {pid} listed twice"));
            }
        }
        if let Some(gold) = &cs.gold {
            for pid in gold.keys() {
                if !seen.contains(pid.as_str()) {
                    report(entity.clone(), format!("gold label on non-candidate {pid}"));
                }
            }
        }
    }
    out
}

/// Reports query ids shared between splits.
pub fn check_disjoint(datasets: &[&Dataset]) -> Vec<Violation> {
    let mut owner: HashMap<&str, Split> = HashMap::new();
    let mut out = Vec::new();
    for ds in datasets {
        for q in &ds.queries {
            if let Some(prev) = owner.insert(q.id.as_str(), ds.split) {
                if prev != ds.split {
                    out.push(Violation {
                        entity: format!("query {}", q.id),
                        message: format!("present in both {prev} and {} splits", ds.split),
                    });
                }
            }
        }
    }
    out
}
