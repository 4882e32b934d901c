//! Synthetic shared-task corpora written to disk in the CSV/JSON input
//! formats.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use claimstage::corpus::literal::{format_tuple, quote};
use claimstage::corpus::LangTuple;
use claimstage::pipeline::Paths;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LANGS: [&str; 8] = ["eng", "spa", "deu", "por", "fra", "ara", "msa", "tha"];

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub languages: usize,
    pub posts_per_language: usize,
    pub fact_checks: usize,
    /// Replace each gold claim with text sharing no characters with any post.
    pub scramble_gold: bool,
    /// Leave every translation empty.
    pub empty_translations: bool,
    /// One `crosslingual` task over all posts and fact-checks instead of one
    /// task per language.
    pub crosslingual: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: 8,
            posts_per_language: 50,
            fact_checks: 2000,
            scramble_gold: false,
            empty_translations: false,
            crosslingual: false,
            seed: 7,
        }
    }
}

/// What the generator wrote.
#[derive(Debug, Clone)]
pub struct Synth {
    pub paths: Paths,
    /// post id -> gold fact-check id
    pub gold: BTreeMap<u64, u64>,
    /// post id -> language
    pub language: BTreeMap<u64, String>,
    pub post_text: BTreeMap<u64, String>,
}

const LATIN: &[&str] = &[
    "ka", "lo", "mi", "ne", "po", "ru", "sa", "te", "vi", "zu", "bra", "cle", "dro", "fen", "gru", "hal", "jor", "kim",
    "lus", "mev", "nor", "pid", "qua", "rol", "sek", "tum", "vad", "wex", "yor", "zin",
];

const GREEK: &[&str] = &["αλ", "βη", "γι", "δο", "εκ", "ζυ", "θω", "κλ", "μν", "ξο", "πρ", "στ", "φυ", "χω", "ψα"];

fn sentence(rng: &mut ChaCha8Rng, syllables: &[&str], words: usize) -> String {
    (0..words)
        .map(|_| {
            let n = rng.random_range(2..=4);
            (0..n).map(|_| syllables[rng.random_range(0..syllables.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn tuple(original: &str, translation: &str, lang: &str) -> String {
    format_tuple(&LangTuple::new(original, (!translation.is_empty()).then_some(translation)).with_language(lang, 1.0))
}

/// Write `fact_checks.csv`, `posts.csv`, `pairs.csv` and `tasks.json` into
/// `dir`. Fact-checks are split evenly across languages; the first
/// `posts_per_language` fact-checks of each language are gold for one post
/// each, whose text repeats the claim and title.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Synth {
    assert!(spec.languages <= LANGS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_lang = spec.fact_checks / spec.languages;
    assert!(per_lang >= spec.posts_per_language);

    let mut fc_csv = csv::Writer::from_path(dir.join("fact_checks.csv")).unwrap();
    fc_csv.write_record(["fact_check_id", "claim", "instances", "title"]).unwrap();
    let mut posts_csv = csv::Writer::from_path(dir.join("posts.csv")).unwrap();
    posts_csv.write_record(["post_id", "instances", "ocr", "verdicts", "text"]).unwrap();
    let mut pairs_csv = csv::Writer::from_path(dir.join("pairs.csv")).unwrap();
    pairs_csv.write_record(["post_id", "fact_check_id"]).unwrap();

    let mut tasks = serde_json::Map::new();
    let mut gold = BTreeMap::new();
    let mut language = BTreeMap::new();
    let mut post_text = BTreeMap::new();
    let mut fc_id = 1000u64;
    let mut post_id = 1u64;
    for lang in &LANGS[..spec.languages] {
        let lang = lang.to_string();
        let mut pool = Vec::new();
        let mut posts = Vec::new();
        for j in 0..per_lang {
            let claim = sentence(&mut rng, LATIN, 8);
            let translation = if spec.empty_translations { String::new() } else { sentence(&mut rng, LATIN, 8) };
            let title = sentence(&mut rng, LATIN, 3);
            let id = fc_id;
            fc_id += 1;
            pool.push(id);
            let (c, t, ti) = if j < spec.posts_per_language {
                let pid = post_id;
                post_id += 1;
                let post = format!("{claim} {title}");
                posts_csv
                    .write_record([
                        pid.to_string(),
                        "[(1608000000.0, 'fb')]".into(),
                        "[]".into(),
                        format!("[{}]", quote("False")),
                        tuple(&post, &translation, &lang),
                    ])
                    .unwrap();
                pairs_csv.write_record([pid.to_string(), id.to_string()]).unwrap();
                gold.insert(pid, id);
                language.insert(pid, lang.clone());
                post_text.insert(pid, post);
                posts.push(pid);
                if spec.scramble_gold {
                    (sentence(&mut rng, GREEK, 8), String::new(), sentence(&mut rng, GREEK, 3))
                } else {
                    (claim, translation, title)
                }
            } else {
                (claim, translation, title)
            };
            fc_csv
                .write_record([
                    id.to_string(),
                    tuple(&c, &t, &lang),
                    "[(1608000000.0, 'https://example.org')]".into(),
                    tuple(&ti, "", &lang),
                ])
                .unwrap();
        }
        tasks.insert(
            lang,
            serde_json::json!({ "posts_train": [], "posts_dev": posts, "fact_checks": pool }),
        );
    }
    fc_csv.flush().unwrap();
    posts_csv.flush().unwrap();
    pairs_csv.flush().unwrap();
    if spec.crosslingual {
        let all = |key: &str| -> Vec<serde_json::Value> {
            tasks.values().flat_map(|t| t[key].as_array().unwrap().clone()).collect()
        };
        let merged = serde_json::json!({ "posts_train": [], "posts_dev": all("posts_dev"), "fact_checks": all("fact_checks") });
        tasks = serde_json::Map::new();
        tasks.insert("crosslingual".into(), merged);
    }
    let mut f = std::fs::File::create(dir.join("tasks.json")).unwrap();
    serde_json::to_writer(&mut f, &serde_json::Value::Object(tasks)).unwrap();
    f.flush().unwrap();

    Synth {
        paths: Paths {
            fact_checks: dir.join("fact_checks.csv"),
            posts: dir.join("posts.csv"),
            pairs: dir.join("pairs.csv"),
            tasks: dir.join("tasks.json"),
        },
        gold,
        language,
        post_text,
    }
}

/// Write a re-ranker score TSV.
pub fn write_scores(path: &Path, rows: impl IntoIterator<Item = (u64, u64, f64)>) -> PathBuf {
    let mut f = std::fs::File::create(path).unwrap();
    writeln!(f, "post_id\tfact_check_id\tscore").unwrap();
    for (p, c, s) in rows {
        writeln!(f, "{p}\t{c}\t{s}").unwrap();
    }
    path.to_path_buf()
}
