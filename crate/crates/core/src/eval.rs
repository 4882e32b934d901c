//! Success@K scoring, per-language aggregation and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::corpus::PairSet;
use crate::error::{Error, Result};
use crate::retriever::RankedList;

pub const DEFAULT_K: usize = 10;

/// Column order of rendered reports. Languages outside this list follow in
/// alphabetical order.
pub const LANGUAGE_ORDER: [&str; 10] = ["eng", "spa", "deu", "por", "fra", "ara", "msa", "tha", "pol", "tur"];

/// Ranked fact-check ids per post, no duplicates within a list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet {
    lists: BTreeMap<u64, Vec<u64>>,
}

impl PredictionSet {
    pub fn new(lists: BTreeMap<u64, Vec<u64>>) -> Result<Self> {
        for (post, ids) in &lists {
            let distinct: BTreeSet<&u64> = ids.iter().collect();
            if distinct.len() != ids.len() {
                return Err(Error::Validation(format!("prediction for post {post} repeats a fact-check id")));
            }
        }
        Ok(Self { lists })
    }

    pub fn from_ranked<'a>(lists: impl IntoIterator<Item = &'a RankedList>) -> Self {
        Self {
            lists: lists.into_iter().map(|l| (l.post_id, l.ids())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, post_id: u64) -> Option<&[u64]> {
        self.lists.get(&post_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[u64])> {
        self.lists.iter().map(|(&p, v)| (p, v.as_slice()))
    }

    /// Keep only the listed posts.
    pub fn restrict(&self, posts: &BTreeSet<u64>) -> PredictionSet {
        Self {
            lists: self
                .lists
                .iter()
                .filter(|(p, _)| posts.contains(p))
                .map(|(&p, v)| (p, v.clone()))
                .collect(),
        }
    }

    /// Submission JSON: `{"<post_id>": [fact_check_id, ...]}`.
    pub fn to_submission_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.lists)?)
    }

    pub fn from_submission_json<R: Read>(input: R) -> Result<Self> {
        let raw: BTreeMap<String, Vec<u64>> = serde_json::from_reader(input)?;
        let mut lists = BTreeMap::new();
        for (k, v) in raw {
            let id = crate::corpus::parse_id(&k)
                .ok_or_else(|| Error::Validation(format!("submission key `{k}` is not a post id")))?;
            lists.insert(id, v);
        }
        Self::new(lists)
    }
}

/// Fraction of posts whose first `k` predictions contain at least one gold
/// fact-check. Every predicted post must have gold pairs.
pub fn success_at_k(predictions: &PredictionSet, gold: &PairSet, k: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let mut hits = 0usize;
    for (post, ids) in predictions.iter() {
        if !gold.has_gold(post) {
            return Err(Error::Validation(format!("post {post} has no gold fact-checks")));
        }
        if ids.iter().take(k).any(|&fc| gold.contains(post, fc)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// S@k for each requested k.
pub fn success_sweep(predictions: &PredictionSet, gold: &PairSet, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    ks.iter().map(|&k| Ok((k, success_at_k(predictions, gold, k)?))).collect()
}

/// Round half away from zero to two decimals. A small guard absorbs binary
/// representation error, so 93.645 rounds to 93.65.
pub fn round2(x: f64) -> f64 {
    let scaled = x.abs() * 100.0;
    let r = (scaled + 0.5 + 1e-7).floor();
    x.signum() * r / 100.0
}

pub fn format2(x: f64) -> String {
    let r = round2(x);
    // Avoid "-0.00".
    format!("{:.2}", if r == 0.0 { 0.0 } else { r })
}

/// Unweighted mean of per-language percentages, in full precision.
pub fn macro_average(per_language: &BTreeMap<String, f64>) -> Result<f64> {
    if per_language.is_empty() {
        return Err(Error::Validation("macro average of no languages".into()));
    }
    Ok(per_language.values().sum::<f64>() / per_language.len() as f64)
}

/// Gain of a fused score over the best single model, in percentage points,
/// rounded to two decimals.
pub fn improvement(fused: f64, best_individual: f64) -> f64 {
    round2(fused - best_individual)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Monolingual,
    Crosslingual,
}

/// One table row: S@10 per language in percent (full precision) and their
/// macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub per_language: BTreeMap<String, f64>,
    pub avg: f64,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, per_language: BTreeMap<String, f64>) -> Result<Self> {
        let avg = macro_average(&per_language)?;
        Ok(Self {
            label: label.into(),
            per_language,
            avg,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub track: Track,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn new(track: Track) -> Self {
        Self { track, rows: Vec::new() }
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Language columns in display order. Crosslingual reports show only the
    /// average.
    pub fn columns(&self) -> Vec<String> {
        if self.track == Track::Crosslingual {
            return Vec::new();
        }
        let present: BTreeSet<&str> = self.rows.iter().flat_map(|r| r.per_language.keys().map(String::as_str)).collect();
        let mut cols: Vec<String> = LANGUAGE_ORDER.iter().filter(|l| present.contains(*l)).map(|s| s.to_string()).collect();
        cols.extend(present.iter().filter(|l| !LANGUAGE_ORDER.contains(l)).map(|s| s.to_string()));
        cols
    }

    /// Plain-text table: label, Avg, then one column per language.
    pub fn render_text(&self) -> String {
        let cols = self.columns();
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Model".len());
        let mut out = String::new();
        let _ = write!(out, "{:<width$} | {:>6}", "Model", "Avg");
        for c in &cols {
            let _ = write!(out, " | {c:>6}");
        }
        out.push('\n');
        let line_len = width + 9 + cols.len() * 9;
        out.push_str(&"-".repeat(line_len));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$} | {:>6}", r.label, format2(r.avg));
            for c in &cols {
                let cell = r.per_language.get(c).map(|&v| format2(v)).unwrap_or_else(|| "-".into());
                let _ = write!(out, " | {cell:>6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn preds(items: &[(u64, &[u64])]) -> PredictionSet {
        PredictionSet::new(items.iter().map(|(p, v)| (*p, v.to_vec())).collect()).unwrap()
    }

    #[test]
    fn any_gold_counts() {
        let gold: PairSet = [(1, 100), (1, 101)].into_iter().collect();
        let ids: Vec<u64> = (1..=9).chain([101]).collect();
        assert_eq!(success_at_k(&preds(&[(1, &ids)]), &gold, 10).unwrap(), 1.0);
        assert_eq!(success_at_k(&preds(&[(1, &ids)]), &gold, 9).unwrap(), 0.0);
    }

    #[test]
    fn no_gold_hit_scores_zero() {
        let gold: PairSet = [(1, 100)].into_iter().collect();
        let ids: Vec<u64> = (1..=10).collect();
        assert_eq!(success_at_k(&preds(&[(1, &ids)]), &gold, 10).unwrap(), 0.0);
    }

    #[test]
    fn three_posts_two_hits() {
        let gold: PairSet = [(1, 5), (2, 6), (3, 7)].into_iter().collect();
        let s = success_at_k(&preds(&[(1, &[5]), (2, &[6, 1]), (3, &[1, 2])]), &gold, 10).unwrap();
        assert_eq!(format!("{s:.4}"), "0.6667");
    }

    #[test]
    fn errors() {
        let gold: PairSet = [(1, 5)].into_iter().collect();
        assert!(success_at_k(&preds(&[(2, &[5])]), &gold, 10).is_err());
        assert!(success_at_k(&PredictionSet::default(), &gold, 10).is_err());
        assert!(PredictionSet::new(BTreeMap::from([(1, vec![3, 3])])).is_err());
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(format2(93.645), "93.65");
        assert_eq!(format2(82.1775), "82.18");
        assert_eq!(format2(95.13875), "95.14");
        assert_eq!(format2(1.005), "1.01");
        assert_eq!(format2(-0.001), "0.00");
        assert_eq!(format2(-1.005), "-1.01");
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(format2(improvement(95.14, 93.73)), "1.41");
        assert_eq!(format2(improvement(84.05, 80.25)), "3.80");
        assert_eq!(format2(improvement(90.0, 90.0)), "0.00");
    }

    #[test]
    fn macro_average_single() {
        let m = BTreeMap::from([("eng".to_string(), 71.25)]);
        assert_eq!(macro_average(&m).unwrap(), 71.25);
        assert!(macro_average(&BTreeMap::new()).is_err());
    }

    #[test]
    fn render_one_row_two_languages() {
        let mut r = EvaluationReport::new(Track::Monolingual);
        r.rows.push(ReportRow::new("m", BTreeMap::from([("spa".into(), 50.0), ("eng".into(), 75.0)])).unwrap());
        let text = r.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "Model |    Avg |    eng |    spa");
        assert_eq!(lines[2], "m     |  62.50 |  75.00 |  50.00");
        assert_eq!(EvaluationReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn crosslingual_has_only_avg() {
        let mut r = EvaluationReport::new(Track::Crosslingual);
        r.rows.push(ReportRow::new("x", BTreeMap::from([("crosslingual".into(), 58.51)])).unwrap());
        assert!(r.columns().is_empty());
        assert_eq!(r.render_text().lines().nth(2).unwrap(), "x     |  58.51");
    }

    #[test]
    fn submission_round_trip() {
        let p = preds(&[(10, &[1, 2, 3]), (2, &[4])]);
        let json = p.to_submission_json().unwrap();
        assert_eq!(json, r#"{"2":[4],"10":[1,2,3]}"#);
        assert_eq!(PredictionSet::from_submission_json(json.as_bytes()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn monotone_in_k(
            lists in proptest::collection::btree_map(0u64..30, proptest::collection::btree_set(0u64..40, 0..15), 1..20),
            golds in proptest::collection::vec(0u64..40, 1..4),
        ) {
            let p = PredictionSet::new(lists.iter().map(|(k, v)| (*k, v.iter().copied().collect())).collect()).unwrap();
            let gold: PairSet = lists.keys().flat_map(|&post| golds.iter().map(move |&g| (post, g))).collect();
            let mut prev = 0.0;
            for k in 1..=15 {
                let s = success_at_k(&p, &gold, k).unwrap();
                prop_assert!(s >= prev);
                prev = s;
            }
        }
    }
}
