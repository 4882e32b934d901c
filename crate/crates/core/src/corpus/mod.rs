//! Shared-task corpus: typed records parsed from the CSV/JSON inputs, task
//! splits, and composition of model input text.

mod compose;
pub mod literal;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordError, Result};

pub use compose::{compose_fact_check_text, compose_post_text, CompositionPlan, Composer};
pub use split::{language_view, parse_tasks, LanguageView, TaskEntry, TaskSplit, CROSSLINGUAL};

/// Text in its original language, an optional machine translation, and the
/// detected languages with confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangTuple {
    pub original: String,
    pub translation: Option<String>,
    pub languages: Vec<(String, f64)>,
}

impl LangTuple {
    pub fn new(original: impl Into<String>, translation: Option<&str>) -> Self {
        Self {
            original: original.into(),
            translation: translation.map(str::to_owned),
            languages: Vec::new(),
        }
    }

    pub fn with_language(mut self, code: &str, confidence: f64) -> Self {
        self.languages.push((code.to_owned(), confidence));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: u64,
    pub ocr: Vec<LangTuple>,
    pub text: Option<LangTuple>,
    pub verdicts: Vec<String>,
    pub instances: String,
}

impl Post {
    /// Neither `text` nor any `ocr` entry carries content.
    pub fn is_empty(&self) -> bool {
        let blank = |t: &LangTuple| t.original.is_empty() && t.translation.is_none();
        self.text.as_ref().is_none_or(blank) && self.ocr.iter().all(blank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheck {
    pub fact_check_id: u64,
    pub claim: LangTuple,
    pub title: Option<LangTuple>,
    pub instances: String,
}

/// Gold `(post_id, fact_check_id)` mapping. A post may have several golds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pairs: BTreeSet<(u64, u64)>,
}

impl PairSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the pair was already present.
    pub fn insert(&mut self, post_id: u64, fact_check_id: u64) -> bool {
        self.pairs.insert((post_id, fact_check_id))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn contains(&self, post_id: u64, fact_check_id: u64) -> bool {
        self.pairs.contains(&(post_id, fact_check_id))
    }

    pub fn golds(&self, post_id: u64) -> impl Iterator<Item = u64> + '_ {
        self.pairs
            .range((post_id, 0)..=(post_id, u64::MAX))
            .map(|&(_, fc)| fc)
    }

    pub fn has_gold(&self, post_id: u64) -> bool {
        self.golds(post_id).next().is_some()
    }

    /// Gold sets grouped by post.
    pub fn by_post(&self) -> BTreeMap<u64, BTreeSet<u64>> {
        let mut out: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        for &(p, f) in &self.pairs {
            out.entry(p).or_default().insert(f);
        }
        out
    }
}

impl FromIterator<(u64, u64)> for PairSet {
    fn from_iter<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

/// Outcome of parsing one CSV stream: accepted records plus every rejected
/// row. `data_rows == records.len() + rejected.len()`.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejected: Vec<RecordError>,
    /// Ids of accepted records that carry no usable text.
    pub flagged: Vec<u64>,
    pub data_rows: u64,
}

/// Parse a non-negative integer id. Leading zeros are rejected so that ids
/// have a single textual form.
pub fn parse_id(s: &str) -> Option<u64> {
    let s = s.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if s.len() > 1 && s.starts_with('0') {
        return None;
    }
    s.parse().ok()
}

struct Columns {
    index: BTreeMap<&'static str, usize>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, wanted: &[&'static str]) -> Result<Self> {
        let mut index = BTreeMap::new();
        for &name in wanted {
            let pos = headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
                .ok_or_else(|| Error::Validation(format!("missing CSV column `{name}`")))?;
            index.insert(name, pos);
        }
        Ok(Self { index })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &'static str) -> &'r str {
        rec.get(self.index[name]).unwrap_or("")
    }
}

fn csv_reader<R: Read>(input: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(input)
}

fn record_error(row: u64, field: &str, raw: &str, message: impl Into<String>) -> RecordError {
    RecordError {
        row,
        field: field.to_owned(),
        raw: raw.to_owned(),
        message: message.into(),
    }
}

/// Drive a CSV through a per-row decoder, collecting rejects and enforcing
/// id uniqueness.
fn parse_rows<R, T, F>(
    input: R,
    wanted: &[&'static str],
    kind: &'static str,
    mut decode: F,
    id_of: fn(&T) -> u64,
) -> Result<Parsed<T>>
where
    R: Read,
    F: FnMut(&Columns, &csv::StringRecord, u64) -> std::result::Result<T, RecordError>,
{
    let mut rdr = csv_reader(input, b',');
    let cols = Columns::resolve(rdr.headers()?, wanted)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    let mut row = 0u64;
    for rec in rdr.records() {
        row += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(record_error(row, "*", "", e.to_string()));
                continue;
            }
        };
        match decode(&cols, &rec, row) {
            Ok(t) => {
                if !seen.insert(id_of(&t)) {
                    return Err(Error::DuplicateId { kind, id: id_of(&t) });
                }
                records.push(t);
            }
            Err(e) => rejected.push(e),
        }
    }
    Ok(Parsed {
        records,
        rejected,
        flagged: Vec::new(),
        data_rows: row,
    })
}

fn decode_id(cols: &Columns, rec: &csv::StringRecord, row: u64, name: &'static str) -> std::result::Result<u64, RecordError> {
    let raw = cols.get(rec, name);
    parse_id(raw).ok_or_else(|| record_error(row, name, raw, "not a canonical non-negative integer id"))
}

/// Parse `fact_checks.csv` (columns `fact_check_id,claim,instances,title`).
pub fn parse_fact_checks<R: Read>(input: R) -> Result<Parsed<FactCheck>> {
    parse_rows(
        input,
        &["fact_check_id", "claim", "instances", "title"],
        "fact_check",
        |cols, rec, row| {
            let fact_check_id = decode_id(cols, rec, row, "fact_check_id")?;
            let field = |name: &'static str| {
                let raw = cols.get(rec, name);
                literal::parse_tuple(raw).map_err(|e| record_error(row, name, raw, e.to_string()))
            };
            let claim = field("claim")?.ok_or_else(|| record_error(row, "claim", cols.get(rec, "claim"), "claim is missing"))?;
            let title = field("title")?;
            Ok(FactCheck {
                fact_check_id,
                claim,
                title,
                instances: cols.get(rec, "instances").to_owned(),
            })
        },
        |f| f.fact_check_id,
    )
}

/// Parse `posts.csv` (columns `post_id,instances,ocr,verdicts,text`). Posts
/// with no text at all are kept but listed in [`Parsed::flagged`].
pub fn parse_posts<R: Read>(input: R) -> Result<Parsed<Post>> {
    let mut parsed = parse_rows(
        input,
        &["post_id", "instances", "ocr", "verdicts", "text"],
        "post",
        |cols, rec, row| {
            let post_id = decode_id(cols, rec, row, "post_id")?;
            let raw_ocr = cols.get(rec, "ocr");
            let ocr = literal::parse_tuple_list(raw_ocr).map_err(|e| record_error(row, "ocr", raw_ocr, e.to_string()))?;
            let raw_verdicts = cols.get(rec, "verdicts");
            let verdicts = literal::parse_string_list(raw_verdicts)
                .map_err(|e| record_error(row, "verdicts", raw_verdicts, e.to_string()))?;
            let raw_text = cols.get(rec, "text");
            let text = literal::parse_tuple(raw_text).map_err(|e| record_error(row, "text", raw_text, e.to_string()))?;
            Ok(Post {
                post_id,
                ocr,
                text,
                verdicts,
                instances: cols.get(rec, "instances").to_owned(),
            })
        },
        |p| p.post_id,
    )?;
    parsed.flagged = parsed.records.iter().filter(|p| p.is_empty()).map(|p| p.post_id).collect();
    Ok(parsed)
}

/// Parse `pairs.csv` (columns `post_id,fact_check_id`, any order).
pub fn parse_pairs<R: Read>(input: R) -> Result<(PairSet, Vec<RecordError>)> {
    let mut rdr = csv_reader(input, b',');
    let cols = Columns::resolve(rdr.headers()?, &["post_id", "fact_check_id"])?;
    let mut pairs = PairSet::new();
    let mut rejected = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(record_error(row, "*", "", e.to_string()));
                continue;
            }
        };
        match (decode_id(&cols, &rec, row, "post_id"), decode_id(&cols, &rec, row, "fact_check_id")) {
            (Ok(p), Ok(f)) => {
                pairs.insert(p, f);
            }
            (Err(e), _) | (_, Err(e)) => rejected.push(e),
        }
    }
    Ok((pairs, rejected))
}

/// An immutable, id-indexed corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub posts: BTreeMap<u64, Post>,
    pub fact_checks: BTreeMap<u64, FactCheck>,
}

impl Corpus {
    pub fn new(posts: Vec<Post>, fact_checks: Vec<FactCheck>) -> Result<Self> {
        let mut c = Corpus::default();
        for p in posts {
            let id = p.post_id;
            if c.posts.insert(id, p).is_some() {
                return Err(Error::DuplicateId { kind: "post", id });
            }
        }
        for f in fact_checks {
            let id = f.fact_check_id;
            if c.fact_checks.insert(id, f).is_some() {
                return Err(Error::DuplicateId { kind: "fact_check", id });
            }
        }
        Ok(c)
    }

    /// Every pair must reference a known post and fact-check.
    pub fn validate_pairs(&self, pairs: &PairSet) -> Result<()> {
        let missing: Vec<String> = pairs
            .iter()
            .filter(|(p, f)| !self.posts.contains_key(p) || !self.fact_checks.contains_key(f))
            .take(10)
            .map(|(p, f)| format!("({p},{f})"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("pairs reference unknown ids: {}", missing.join(", "))))
        }
    }
}

/// One line of the normalized JSON Lines corpus form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizedRecord {
    Post(Post),
    FactCheck(FactCheck),
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FC_CSV: &str = "fact_check_id,claim,instances,title\n\
        1,\"(\"\"Der Text\"\", \"\"The text\"\", [(\"\"deu\"\",0.99)])\",\"[(1.0, 'fb')]\",\n\
        2,\"('x', 'y', [('eng', 1.0)])\",[],nan\n";

    #[test]
    fn parse_fact_checks_basic() {
        let p = parse_fact_checks(FC_CSV.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert!(p.rejected.is_empty());
        let fc = &p.records[0];
        assert_eq!(fc.claim, LangTuple::new("Der Text", Some("The text")).with_language("deu", 0.99));
        assert_eq!(fc.title, None);
        assert_eq!(fc.instances, "[(1.0, 'fb')]");
        assert_eq!(p.records[1].title, None);
    }

    #[test]
    fn malformed_row_is_reported_not_fatal() {
        let csv = "fact_check_id,claim,instances,title\n1,\"('a', \",[],\n2,\"('b','c')\",[],\n";
        let p = parse_fact_checks(csv.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.rejected[0].row, 1);
        assert_eq!(p.rejected[0].field, "claim");
        assert_eq!(p.rejected[0].raw, "('a', ");
        assert_eq!(p.data_rows, 2);
    }

    #[test]
    fn duplicate_fact_check_is_fatal() {
        let csv = "fact_check_id,claim,instances,title\n1,\"('a','b')\",,\n1,\"('c','d')\",,\n";
        assert!(matches!(
            parse_fact_checks(csv.as_bytes()),
            Err(Error::DuplicateId { kind: "fact_check", id: 1 })
        ));
    }

    #[test]
    fn leading_zero_ids_rejected() {
        assert_eq!(parse_id("0"), Some(0));
        assert_eq!(parse_id("42"), Some(42));
        assert_eq!(parse_id("042"), None);
        assert_eq!(parse_id("-1"), None);
        assert_eq!(parse_id("1.0"), None);
    }

    #[test]
    fn parse_posts_ocr_and_verdicts() {
        let csv = "post_id,instances,ocr,verdicts,text\n\
            7,[],\"[(\"\"hola\"\",\"\"hello\"\",[(\"\"spa\"\",1.0)])]\",['False.'],\n\
            8,[],[],[],\n";
        let p = parse_posts(csv.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        let post = &p.records[0];
        assert_eq!(post.ocr.len(), 1);
        assert_eq!(post.ocr[0].original, "hola");
        assert_eq!(post.text, None);
        assert_eq!(post.verdicts, vec!["False."]);
        assert_eq!(p.flagged, vec![8]);
    }

    #[test]
    fn parse_pairs_dedup_and_errors() {
        let (pairs, rej) = parse_pairs("post_id,fact_check_id\n1,10\n1,11\n2,10\n2,10\n".as_bytes()).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(rej.is_empty());
        assert_eq!(pairs.golds(1).collect::<Vec<_>>(), vec![10, 11]);

        let (empty, _) = parse_pairs("post_id,fact_check_id\n".as_bytes()).unwrap();
        assert!(empty.is_empty());

        // Column order from the published files is fact_check_id first.
        let (pairs, rej) = parse_pairs("fact_check_id,post_id\n10,1\nx,2\n".as_bytes()).unwrap();
        assert!(pairs.contains(1, 10));
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].field, "fact_check_id");
    }

    #[test]
    fn missing_column_is_fatal() {
        assert!(matches!(
            parse_pairs("post_id\n1\n".as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn normalized_jsonl_round_trip() {
        let p = parse_fact_checks(FC_CSV.as_bytes()).unwrap();
        let recs: Vec<NormalizedRecord> = p.records.into_iter().map(NormalizedRecord::FactCheck).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let back: Vec<NormalizedRecord> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
