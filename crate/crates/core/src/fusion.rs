//! Stage 3: weighted voting over several models' Top-10 lists.
//!
//! Each model's weight grows with its dev-set Success@10. A model grants the
//! candidate at 1-based rank `r` a vote of `weight × points(r)`, with
//! `points(r) = window + 1 − r` under the default Borda scheme. Candidates
//! are ordered by total points, then by how many models listed them, then by
//! ascending id.
//!
//! Weights are normalized to sum to one and point totals are compared on a
//! fixed 1e-9 grid, which keeps the output order identical under model
//! permutation and under rescaling all weights by a positive constant.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retriever::{Candidate, RankedList, Stage};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_RRF_K: f64 = 60.0;

const POINT_GRID: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeight {
    pub model_name: String,
    pub dev_s_at_10: f64,
    pub weight: f64,
}

/// How dev scores become weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    /// `weight = s / Σ s`.
    #[default]
    Proportional,
    /// `weight = exp(s / t) / Σ exp(s / t)`.
    Softmax { temperature: f64 },
}

/// Per-rank point scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VoteScheme {
    /// `window + 1 − rank`.
    #[default]
    Borda,
    /// `1 / (k + rank)`.
    Rrf { k: f64 },
    /// One point for any listed candidate.
    Approval,
}

impl VoteScheme {
    fn points(self, rank: usize, window: usize) -> f64 {
        match self {
            VoteScheme::Borda => (window + 1 - rank) as f64,
            VoteScheme::Rrf { k } => 1.0 / (k + rank as f64),
            VoteScheme::Approval => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSpec {
    pub scheme: VoteScheme,
    pub weighting: Weighting,
    /// Longest accepted input list, and the output length.
    pub window: usize,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            scheme: VoteScheme::Borda,
            weighting: Weighting::Proportional,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Derive model weights from dev Success@10 values in `[0, 1]`.
pub fn compute_weights(dev_scores: &BTreeMap<String, f64>, weighting: Weighting) -> Result<Vec<ModelWeight>> {
    if dev_scores.is_empty() {
        return Err(Error::Validation("no models to weight".into()));
    }
    if let Some((m, s)) = dev_scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Validation(format!("dev S@10 for `{m}` is {s}, outside [0, 1]")));
    }
    let raw: Vec<f64> = match weighting {
        Weighting::Proportional => {
            if dev_scores.values().all(|&s| s == 0.0) {
                return Err(Error::Validation("every model has dev S@10 of zero".into()));
            }
            dev_scores.values().copied().collect()
        }
        Weighting::Softmax { temperature } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("softmax temperature {temperature} must be positive")));
            }
            let max = dev_scores.values().copied().fold(f64::MIN, f64::max);
            dev_scores.values().map(|&s| ((s - max) / temperature).exp()).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(dev_scores
        .iter()
        .zip(raw)
        .map(|((m, &s), r)| ModelWeight {
            model_name: m.clone(),
            dev_s_at_10: s,
            weight: r / total,
        })
        .collect())
}

/// Accumulated votes for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VoteTally {
    pub points: f64,
    pub supporters: usize,
    /// Sum of the supporting models' own scores; informational.
    pub score_sum: f64,
}

/// Raw tally for one post, before ordering.
pub fn tally(
    lists: &BTreeMap<String, RankedList>,
    weights: &[ModelWeight],
    spec: &FusionSpec,
) -> Result<BTreeMap<u64, VoteTally>> {
    let by_name: BTreeMap<&str, f64> = weights.iter().map(|w| (w.model_name.as_str(), w.weight)).collect();
    if let Some(w) = weights.iter().find(|w| !(w.weight > 0.0 && w.weight.is_finite())) {
        return Err(Error::Validation(format!("weight of `{}` must be positive", w.model_name)));
    }
    let mut post = None;
    let mut total = 0.0;
    for (name, list) in lists {
        let w = *by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Lookup(format!("no weight for model `{name}`")))?;
        total += w;
        if list.len() > spec.window {
            return Err(Error::Contract(format!(
                "model `{name}` supplied {} candidates, window is {}",
                list.len(),
                spec.window
            )));
        }
        match post {
            None => post = Some(list.post_id),
            Some(p) if p != list.post_id => {
                return Err(Error::Contract(format!("lists for posts {p} and {} cannot be fused", list.post_id)))
            }
            _ => {}
        }
    }
    let mut parts: BTreeMap<u64, (Vec<f64>, VoteTally)> = BTreeMap::new();
    for (name, list) in lists {
        let w = by_name[name.as_str()] / total;
        for (i, c) in list.entries().iter().enumerate() {
            let (pts, t) = parts.entry(c.fact_check_id).or_default();
            pts.push(w * spec.scheme.points(i + 1, spec.window));
            t.supporters += 1;
            t.score_sum += c.score;
        }
    }
    // Summing in sorted order makes totals independent of model naming.
    Ok(parts
        .into_iter()
        .map(|(id, (mut pts, mut t))| {
            pts.sort_by(f64::total_cmp);
            t.points = pts.iter().sum();
            (id, t)
        })
        .collect())
}

/// Fuse one post's lists into a single list of at most `window` entries.
/// Output scores are the normalized point totals on the comparison grid.
pub fn weighted_vote(lists: &BTreeMap<String, RankedList>, weights: &[ModelWeight], spec: &FusionSpec) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::Validation("nothing to fuse".into()));
    }
    let post_id = lists.values().next().map(|l| l.post_id).unwrap_or_default();
    let tallies = tally(lists, weights, spec)?;
    let mut ranked: Vec<(i64, usize, u64)> = tallies
        .iter()
        .map(|(&id, t)| ((t.points * POINT_GRID).round() as i64, t.supporters, id))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    ranked.truncate(spec.window);
    let entries = ranked
        .into_iter()
        .map(|(q, _, id)| Candidate {
            fact_check_id: id,
            score: q as f64 / POINT_GRID,
        })
        .collect();
    RankedList::new(post_id, Stage::Fused, entries)
}

/// Per-model predictions: model name → post id → list.
pub type ModelPredictions = BTreeMap<String, BTreeMap<u64, RankedList>>;

/// Apply [`weighted_vote`] to every post. All models must cover the same
/// posts.
pub fn fuse_run(per_model: &ModelPredictions, weights: &[ModelWeight], spec: &FusionSpec) -> Result<BTreeMap<u64, RankedList>> {
    let all_posts: BTreeSet<u64> = per_model.values().flat_map(|m| m.keys().copied()).collect();
    let gaps: Vec<String> = per_model
        .iter()
        .filter_map(|(name, preds)| {
            let missing: Vec<String> = all_posts.iter().filter(|p| !preds.contains_key(p)).map(u64::to_string).collect();
            (!missing.is_empty()).then(|| format!("{name}: [{}]", missing.join(", ")))
        })
        .collect();
    if !gaps.is_empty() {
        return Err(Error::Validation(format!("models cover different posts; missing {}", gaps.join("; "))));
    }
    let mut out = BTreeMap::new();
    for &post in &all_posts {
        let lists: BTreeMap<String, RankedList> = per_model
            .iter()
            .map(|(name, preds)| (name.clone(), preds[&post].clone()))
            .collect();
        out.insert(post, weighted_vote(&lists, weights, spec)?);
    }
    Ok(out)
}
