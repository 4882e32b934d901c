//! Stage 1: exact cosine top-K over the fact-check pool.
//!
//! Search is brute force. Ties are broken by ascending fact-check id, so the
//! output never depends on insertion order or thread scheduling.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{dense_dot, EmbeddingStore, Namespace, SparseVector, Vector};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Retrieval,
    Rerank,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub fact_check_id: u64,
    pub score: f64,
}

/// Best-first list of candidates for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub post_id: u64,
    pub stage: Stage,
    entries: Vec<Candidate>,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.fact_check_id.cmp(&b.fact_check_id))
}

impl RankedList {
    /// Validates ordering (scores non-increasing) and id uniqueness.
    pub fn new(post_id: u64, stage: Stage, entries: Vec<Candidate>) -> Result<Self> {
        if let Some(c) = entries.iter().find(|c| !c.score.is_finite()) {
            return Err(Error::Contract(format!("post {post_id}: non-finite score for {}", c.fact_check_id)));
        }
        if entries.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::Contract(format!("post {post_id}: scores are not non-increasing")));
        }
        let mut ids: Vec<u64> = entries.iter().map(|c| c.fact_check_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!("post {post_id}: duplicate fact-check id in ranked list")));
        }
        Ok(Self { post_id, stage, entries })
    }

    /// Sort arbitrary scored candidates into rank order, then validate.
    pub fn from_unsorted(post_id: u64, stage: Stage, mut entries: Vec<Candidate>) -> Result<Self> {
        entries.sort_by(rank_order);
        Self::new(post_id, stage, entries)
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|c| c.fact_check_id).collect()
    }

    pub fn truncated(&self, n: usize) -> RankedList {
        RankedList {
            post_id: self.post_id,
            stage: self.stage,
            entries: self.entries[..n.min(self.entries.len())].to_vec(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CandidateLine {
    post_id: u64,
    #[serde(default)]
    stage: Stage,
    candidates: Vec<(u64, f64)>,
}

/// Write lists as JSON Lines:
/// `{"post_id": int, "stage": str, "candidates": [[fact_check_id, score], ...]}`.
pub fn write_candidates<'a, W: Write, I: IntoIterator<Item = &'a RankedList>>(mut out: W, lists: I) -> Result<()> {
    for l in lists {
        let line = CandidateLine {
            post_id: l.post_id,
            stage: l.stage,
            candidates: l.entries.iter().map(|c| (c.fact_check_id, c.score)).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<candidates>", e))?;
    }
    out.flush().map_err(|e| Error::io("<candidates>", e))
}

/// Read candidate JSON Lines. A missing `stage` means retrieval.
pub fn read_candidates<R: BufRead>(input: R) -> Result<BTreeMap<u64, RankedList>> {
    let mut out = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<candidates>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CandidateLine = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("candidate line {}: {e}", i + 1)))?;
        let entries = c
            .candidates
            .into_iter()
            .map(|(fact_check_id, score)| Candidate { fact_check_id, score })
            .collect();
        let list = RankedList::new(c.post_id, c.stage, entries)?;
        if out.insert(c.post_id, list).is_some() {
            return Err(Error::DuplicateId { kind: "candidate post", id: c.post_id });
        }
    }
    Ok(out)
}

enum Rows {
    Dense(Vec<f32>),
    Sparse(Vec<SparseVector>),
}

/// Query operand for [`Index::top_k`].
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Dense(&'a Vector),
    Sparse(&'a SparseVector),
}

impl Query<'_> {
    fn dim(&self) -> usize {
        match self {
            Query::Dense(v) => v.dim(),
            Query::Sparse(v) => v.dim(),
        }
    }
}

/// Normalized fact-check vectors keyed by id, sorted by id.
pub struct Index {
    dim: usize,
    ids: Vec<u64>,
    rows: Rows,
    zero_ids: Vec<u64>,
}

impl Index {
    /// Index the pool's fact-check vectors from a store.
    pub fn build(store: &EmbeddingStore, pool_ids: &[u64]) -> Result<Self> {
        if pool_ids.is_empty() {
            return Err(Error::Validation("cannot build an index over an empty pool".into()));
        }
        let missing: Vec<String> = pool_ids
            .iter()
            .filter(|&&id| !store.contains(Namespace::FactCheck, id))
            .map(u64::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup(format!("fact-check ids missing from embeddings: {}", missing.join(", "))));
        }
        let mut ids = pool_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let dim = store.dim();
        let mut data = Vec::with_capacity(ids.len() * dim);
        let mut zero_ids = Vec::new();
        for &id in &ids {
            let v = store.embed(Namespace::FactCheck, id)?;
            if v.is_zero() {
                zero_ids.push(id);
            }
            data.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            dim,
            ids,
            rows: Rows::Dense(data),
            zero_ids,
        })
    }

    /// Index in-memory dense vectors.
    pub fn from_dense(items: Vec<(u64, Vector)>) -> Result<Self> {
        let dim = items.first().map(|(_, v)| v.dim()).ok_or_else(|| Error::Validation("cannot build an index over an empty pool".into()))?;
        let mut items = items;
        items.sort_by_key(|(id, _)| *id);
        check_unique(items.iter().map(|(id, _)| *id))?;
        let mut data = Vec::with_capacity(items.len() * dim);
        let mut zero_ids = Vec::new();
        let mut ids = Vec::with_capacity(items.len());
        for (id, v) in items {
            if v.dim() != dim {
                return Err(Error::Contract(format!("fact-check {id} has dim {}, expected {dim}", v.dim())));
            }
            let v = v.normalized();
            if v.is_zero() {
                zero_ids.push(id);
            }
            data.extend_from_slice(v.as_slice());
            ids.push(id);
        }
        Ok(Self {
            dim,
            ids,
            rows: Rows::Dense(data),
            zero_ids,
        })
    }

    /// Index sparse vectors (the hashed baseline).
    pub fn from_sparse(items: Vec<(u64, SparseVector)>) -> Result<Self> {
        let dim = items.first().map(|(_, v)| v.dim()).ok_or_else(|| Error::Validation("cannot build an index over an empty pool".into()))?;
        let mut items = items;
        items.sort_by_key(|(id, _)| *id);
        check_unique(items.iter().map(|(id, _)| *id))?;
        let mut rows = Vec::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        let mut zero_ids = Vec::new();
        for (id, v) in items {
            if v.dim() != dim {
                return Err(Error::Contract(format!("fact-check {id} has dim {}, expected {dim}", v.dim())));
            }
            if v.is_zero() {
                zero_ids.push(id);
            }
            rows.push(v.normalized());
            ids.push(id);
        }
        Ok(Self {
            dim,
            ids,
            rows: Rows::Sparse(rows),
            zero_ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Ids whose vectors are zero; they always score 0.
    pub fn zero_ids(&self) -> &[u64] {
        &self.zero_ids
    }

    fn scores(&self, query: Query<'_>) -> Vec<f32> {
        let n = self.ids.len();
        match (&self.rows, query) {
            (Rows::Dense(data), Query::Dense(q)) => {
                let q = q.normalized();
                data.chunks_exact(self.dim).map(|row| dense_dot(row, q.as_slice())).collect()
            }
            (Rows::Dense(data), Query::Sparse(q)) => {
                let q = q.normalized();
                (0..n)
                    .map(|r| q.dot_dense(&data[r * self.dim..(r + 1) * self.dim]))
                    .collect()
            }
            (Rows::Sparse(rows), Query::Dense(q)) => {
                let q = q.normalized();
                rows.iter().map(|row| row.dot_dense(q.as_slice())).collect()
            }
            (Rows::Sparse(rows), Query::Sparse(q)) => {
                let q = q.normalized();
                let mut scratch = vec![0.0f32; self.dim];
                q.scatter(&mut scratch);
                let out = rows.iter().map(|row| row.dot_dense(&scratch)).collect();
                q.clear(&mut scratch);
                out
            }
        }
    }

    /// The `k` most similar fact-checks, best first. Returns the whole pool
    /// when it is smaller than `k`.
    pub fn top_k(&self, post_id: u64, query: Query<'_>, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Contract("k must be at least 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Contract(format!(
                "post {post_id}: query dim {} does not match index dim {}",
                query.dim(),
                self.dim
            )));
        }
        let scores = self.scores(query);
        let mut cands: Vec<Candidate> = self
            .ids
            .iter()
            .zip(scores)
            .map(|(&id, s)| Candidate {
                fact_check_id: id,
                // Fold -0.0 into 0.0 so the total order sees one zero.
                score: if s == 0.0 { 0.0 } else { f64::from(s) },
            })
            .collect();
        if k < cands.len() {
            cands.select_nth_unstable_by(k - 1, rank_order);
            cands.truncate(k);
        }
        cands.sort_by(rank_order);
        Ok(RankedList {
            post_id,
            stage: Stage::Retrieval,
            entries: cands,
        })
    }
}

fn check_unique(sorted: impl Iterator<Item = u64>) -> Result<()> {
    let mut prev = None;
    for id in sorted {
        if prev == Some(id) {
            return Err(Error::DuplicateId { kind: "fact_check", id });
        }
        prev = Some(id);
    }
    Ok(())
}

/// Run [`Index::top_k`] for every query. With `threads = Some(n)` the work
/// runs on a dedicated pool of `n` workers; `Some(1)` is fully serial.
/// Results are identical regardless of the thread count.
pub fn batch_retrieve(
    index: &Index,
    queries: &BTreeMap<u64, Query<'_>>,
    k: usize,
    threads: Option<usize>,
) -> Result<BTreeMap<u64, RankedList>> {
    let items: Vec<(u64, Query<'_>)> = queries.iter().map(|(&id, &q)| (id, q)).collect();
    let run = || -> Result<Vec<RankedList>> {
        items
            .par_iter()
            .map(|&(id, q)| index.top_k(id, q, k).map_err(|e| Error::Contract(format!("post {id}: {e}"))))
            .collect()
    };
    let lists = match threads {
        Some(1) => items
            .iter()
            .map(|&(id, q)| index.top_k(id, q, k).map_err(|e| Error::Contract(format!("post {id}: {e}"))))
            .collect::<Result<Vec<_>>>()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(lists.into_iter().map(|l| (l.post_id, l)).collect())
}
