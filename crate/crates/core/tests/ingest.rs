use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use claimstage::corpus::{
    self, compose_post_text, language_view, read_jsonl, write_jsonl, CompositionPlan, Corpus, LangTuple,
    NormalizedRecord,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest").join(name)
}

fn open(name: &str) -> BufReader<File> {
    BufReader::new(File::open(fixture(name)).unwrap())
}

#[test]
fn fact_check_grammar_productions() {
    let p = corpus::parse_fact_checks(open("fact_checks.csv")).unwrap();
    assert_eq!(p.data_rows, 4);
    assert!(p.rejected.is_empty(), "{:?}", p.rejected);
    let by_id = |id| p.records.iter().find(|f| f.fact_check_id == id).unwrap();

    let f10 = by_id(10);
    assert_eq!(f10.claim.original, "It's a \"fake\" photo");
    assert_eq!(f10.claim.translation.as_deref(), Some("It's a fake photo"));
    assert_eq!(
        f10.title.as_ref().unwrap().languages,
        vec![("spa".to_string(), 0.98), ("por".to_string(), 0.02)]
    );

    let f11 = by_id(11);
    assert_eq!(f11.claim.original, "Zeile eins\nZeile zwei\tTab");
    assert!(f11.title.is_none());

    let f12 = by_id(12);
    assert_eq!(f12.claim.original, "Backslash \\ und A und \u{e9} und \u{1F600}");
    assert_eq!(f12.claim.translation, None);
    assert!(f12.title.is_none());

    let f13 = by_id(13);
    assert_eq!(f13.claim.original, "ข่าวปลอม");
    assert_eq!(f13.title.as_ref().unwrap().original, "Title with 'single' quotes");
    assert!(f13.title.as_ref().unwrap().languages.is_empty());
}

#[test]
fn post_rows_are_conserved() {
    let p = corpus::parse_posts(open("posts.csv")).unwrap();
    assert_eq!(p.data_rows, 5);
    assert_eq!(p.records.len() + p.rejected.len(), 5);
    assert_eq!(p.rejected.len(), 1);
    assert_eq!(p.rejected[0].row, 5);
    assert_eq!(p.rejected[0].field, "text");
    assert_eq!(p.flagged, vec![4]);

    let post1 = &p.records[0];
    assert_eq!(post1.ocr.len(), 2);
    assert_eq!(post1.verdicts, vec!["False"]);
    assert_eq!(
        compose_post_text(post1, CompositionPlan::OTV),
        "Das ist falsch Bild Text Zweites Bild This is false Image text Second image False"
    );
    let post2 = &p.records[1];
    assert!(post2.text.is_none());
    assert_eq!(post2.ocr, vec![LangTuple::new("ocr only", None).with_language("eng", 1.0)]);
    // Missing translation under plan T falls back to the original.
    assert_eq!(compose_post_text(post2, CompositionPlan::T), "ocr only");
    assert_eq!(p.records[2].text.as_ref().unwrap().original, "She said \"no\" and it's done");
}

#[test]
fn pairs_skip_malformed_rows() {
    let (pairs, bad) = corpus::parse_pairs(open("pairs.csv")).unwrap();
    assert_eq!(pairs.len(), 4);
    assert_eq!(bad.len(), 1);
    assert_eq!(pairs.golds(3).collect::<Vec<_>>(), vec![10, 13]);
}

#[test]
fn normalized_jsonl_round_trip_is_lossless() {
    let fcs = corpus::parse_fact_checks(open("fact_checks.csv")).unwrap().records;
    let posts = corpus::parse_posts(open("posts.csv")).unwrap().records;
    let records: Vec<NormalizedRecord> = posts
        .iter()
        .cloned()
        .map(NormalizedRecord::Post)
        .chain(fcs.iter().cloned().map(NormalizedRecord::FactCheck))
        .collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), records.len());
    let back: Vec<NormalizedRecord> = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, records);
}

#[test]
fn views_resolve_against_corpus() {
    let fcs = corpus::parse_fact_checks(open("fact_checks.csv")).unwrap().records;
    let posts = corpus::parse_posts(open("posts.csv")).unwrap().records;
    let c = Corpus::new(posts, fcs).unwrap();
    let split = corpus::parse_tasks(open("tasks.json")).unwrap();
    split.validate(&c).unwrap();
    let eng = language_view(&c, &split, "eng").unwrap();
    assert_eq!(eng.posts.iter().map(|p| p.post_id).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(eng.pool.len(), 2);
    let cross = language_view(&c, &split, "crosslingual").unwrap();
    assert_eq!(cross.pool.len(), 4);
    assert!(language_view(&c, &split, "pol").is_err());
}
