//! Non-Rust examples in the guide must parse with the real types.

use std::path::PathBuf;

use claimstage::corpus::NormalizedRecord;
use claimstage::eval::{EvaluationReport, PredictionSet};
use claimstage::pipeline::{EmbedderSpec, ExperimentConfig};
use claimstage::reranker::RerankerKind;
use claimstage::retriever::read_candidates;

fn blocks(chapter: &str, lang: &str) -> Vec<String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../book/src").join(chapter);
    let text = std::fs::read_to_string(path).unwrap();
    let fence = format!("```{lang}\n");
    let mut out = Vec::new();
    let mut rest = text.as_str();
    while let Some(start) = rest.find(&fence) {
        let body = &rest[start + fence.len()..];
        let end = body.find("```").unwrap();
        out.push(body[..end].to_string());
        rest = &body[end..];
    }
    out
}

#[test]
fn config_example_parses_and_validates() {
    let toml = &blocks("pipeline.md", "toml")[0];
    let cfg: ExperimentConfig = toml::from_str(toml).unwrap();
    cfg.validate().unwrap();
    assert!(matches!(cfg.embedder, EmbedderSpec::Baseline(b) if b.hash_dim == 262_144));
    assert!(matches!(cfg.rerankers[1].kind, RerankerKind::LexicalBaseline));
}

#[test]
fn normalized_records_parse() {
    let json = &blocks("corpus.md", "json")[0];
    for line in json.lines() {
        let _: NormalizedRecord = serde_json::from_str(line).unwrap();
    }
}

#[test]
fn candidate_line_parses() {
    let json = &blocks("retrieval.md", "json")[0];
    let lists = read_candidates(json.as_bytes()).unwrap();
    assert_eq!(lists[&1].ids(), vec![10, 12]);
}

#[test]
fn submission_and_report_examples_parse() {
    let json = blocks("evaluation.md", "json");
    let preds = PredictionSet::from_submission_json(json[0].as_bytes()).unwrap();
    assert_eq!(preds.get(1), Some(&[11, 10][..]));
    let report = EvaluationReport::from_json(&json[1]).unwrap();
    assert_eq!(report.rows[0].avg, 93.675);
}
