//! Stage 2: re-score stage-1 candidates and keep the Top-N.
//!
//! Scores are treated as opaque ordinals; only their order matters. Scorers
//! are either imported score files (from external cross-encoders) or the
//! built-in character 3-gram overlap baseline.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::corpus::parse_id;
use crate::embedder::{char_ngrams, normalize_text};
use crate::error::{Error, RecordError, Result};
use crate::retriever::{rank_order, Candidate, RankedList, Stage};

pub const DEFAULT_TOP_N: usize = 10;

/// Something that can score a `(post, fact-check)` pair.
pub trait Scorer: Sync {
    fn model_name(&self) -> &str;

    /// `None` when the pair is not covered.
    fn score(&self, post_id: u64, fact_check_id: u64) -> Option<f64>;
}

/// Scores imported from a TSV file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub model_name: String,
    scores: HashMap<(u64, u64), f64>,
    /// Rows that overwrote an earlier row for the same pair.
    pub duplicate_rows: usize,
}

impl ScoreTable {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            ..Default::default()
        }
    }

    /// Returns false when the key already existed (the new score wins).
    pub fn insert(&mut self, post_id: u64, fact_check_id: u64, score: f64) -> Result<bool> {
        if !score.is_finite() {
            return Err(Error::Contract(format!("score for ({post_id},{fact_check_id}) is not finite")));
        }
        Ok(self.scores.insert((post_id, fact_check_id), score).is_none())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Scorer for ScoreTable {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn score(&self, post_id: u64, fact_check_id: u64) -> Option<f64> {
        self.scores.get(&(post_id, fact_check_id)).copied()
    }
}

/// Read a `post_id\tfact_check_id\tscore` TSV. Malformed rows are returned
/// alongside the table; duplicate keys keep the last score.
pub fn load_scores<R: Read>(input: R, model_name: &str) -> Result<(ScoreTable, Vec<RecordError>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Validation(format!("score file lacks column `{name}`")))
    };
    let (pc, fc, sc) = (col("post_id")?, col("fact_check_id")?, col("score")?);
    let mut table = ScoreTable::new(model_name);
    let mut rejected = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |name: &str, raw: &str, msg: &str| RecordError {
            row,
            field: name.into(),
            raw: raw.into(),
            message: msg.into(),
        };
        let Some(p) = parse_id(field(pc)) else {
            rejected.push(bad("post_id", field(pc), "not an id"));
            continue;
        };
        let Some(f) = parse_id(field(fc)) else {
            rejected.push(bad("fact_check_id", field(fc), "not an id"));
            continue;
        };
        match field(sc).parse::<f64>() {
            Ok(s) if s.is_finite() => {
                if !table.insert(p, f, s)? {
                    table.duplicate_rows += 1;
                }
            }
            _ => rejected.push(bad("score", field(sc), "not a finite number")),
        }
    }
    if table.duplicate_rows > 0 {
        log::warn!("{model_name}: {} duplicate score rows, last value kept", table.duplicate_rows);
    }
    Ok((table, rejected))
}

fn gram_set(text: &str) -> BTreeSet<String> {
    let t = normalize_text(text);
    char_ngrams(&t, 3, 3).into_iter().map(str::to_owned).collect()
}

/// Jaccard similarity of the character 3-gram sets of both texts after
/// NFKC folding and lowercasing. Two gram-less texts score 0.
pub fn lexical_overlap_score(query: &str, doc: &str) -> f64 {
    jaccard(&gram_set(query), &gram_set(doc))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The lexical-overlap baseline over pre-composed texts. Total over every
/// pair whose texts it holds.
pub struct LexicalScorer {
    name: String,
    posts: HashMap<u64, BTreeSet<String>>,
    fact_checks: HashMap<u64, BTreeSet<String>>,
}

impl LexicalScorer {
    pub fn new<'a>(
        name: impl Into<String>,
        posts: impl IntoIterator<Item = (u64, &'a str)>,
        fact_checks: impl IntoIterator<Item = (u64, &'a str)>,
    ) -> Self {
        Self {
            name: name.into(),
            posts: posts.into_iter().map(|(id, t)| (id, gram_set(t))).collect(),
            fact_checks: fact_checks.into_iter().map(|(id, t)| (id, gram_set(t))).collect(),
        }
    }
}

impl Scorer for LexicalScorer {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn score(&self, post_id: u64, fact_check_id: u64) -> Option<f64> {
        Some(jaccard(self.posts.get(&post_id)?, self.fact_checks.get(&fact_check_id)?))
    }
}

/// What to do when a scorer does not cover a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingScorePolicy {
    #[default]
    Fail,
    /// Keep the candidate's stage-1 score and warn.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RerankerKind {
    ScoreFile { path: std::path::PathBuf },
    LexicalBaseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankerSpec {
    pub model_name: String,
    #[serde(flatten)]
    pub kind: RerankerKind,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub list: RankedList,
    /// Candidates that kept their stage-1 score under
    /// [`MissingScorePolicy::Fallback`].
    pub fallbacks: usize,
}

/// Reorder `candidates` by the scorer's scores (descending, ties by id) and
/// keep the first `top_n`. Never introduces new ids.
pub fn rerank(candidates: &RankedList, scorer: &dyn Scorer, top_n: usize, policy: MissingScorePolicy) -> Result<Reranked> {
    if top_n == 0 {
        return Err(Error::Contract("top_n must be at least 1".into()));
    }
    let mut fallbacks = 0;
    let mut rescored = Vec::with_capacity(candidates.len());
    for c in candidates.entries() {
        let score = match (scorer.score(candidates.post_id, c.fact_check_id), policy) {
            (Some(s), _) => s,
            (None, MissingScorePolicy::Fallback) => {
                fallbacks += 1;
                c.score
            }
            (None, MissingScorePolicy::Fail) => {
                return Err(Error::Lookup(format!(
                    "{}: no score for post {} / fact-check {}",
                    scorer.model_name(),
                    candidates.post_id,
                    c.fact_check_id
                )))
            }
        };
        rescored.push(Candidate {
            fact_check_id: c.fact_check_id,
            score,
        });
    }
    if fallbacks > 0 {
        log::warn!(
            "{}: post {}: {fallbacks} candidates kept their retrieval score",
            scorer.model_name(),
            candidates.post_id
        );
    }
    rescored.sort_by(rank_order);
    rescored.truncate(top_n);
    Ok(Reranked {
        list: RankedList::new(candidates.post_id, Stage::Rerank, rescored)?,
        fallbacks,
    })
}
