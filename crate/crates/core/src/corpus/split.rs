use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, FactCheck, Post};
use crate::error::{Error, Result};

/// Key of the crosslingual entry in a task split.
pub const CROSSLINGUAL: &str = "crosslingual";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub posts_train: Vec<u64>,
    pub posts_dev: Vec<u64>,
    pub fact_checks: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub posts_test: Vec<u64>,
}

/// Monolingual entries keyed by language code, plus the optional
/// crosslingual entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskSplit {
    pub monolingual: BTreeMap<String, TaskEntry>,
    pub crosslingual: Option<TaskEntry>,
}

impl TaskSplit {
    pub fn entry(&self, language: &str) -> Result<&TaskEntry> {
        let found = if language == CROSSLINGUAL {
            self.crosslingual.as_ref()
        } else {
            self.monolingual.get(language)
        };
        found.ok_or_else(|| Error::Lookup(format!("language `{language}` not present in task split")))
    }

    /// Every id in every entry must exist in the corpus.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let entries = self
            .monolingual
            .iter()
            .map(|(k, e)| (k.as_str(), e))
            .chain(self.crosslingual.iter().map(|e| (CROSSLINGUAL, e)));
        for (name, e) in entries {
            let posts = e.posts_train.iter().chain(&e.posts_dev).chain(&e.posts_test);
            if let Some(id) = posts.into_iter().find(|id| !corpus.posts.contains_key(id)) {
                return Err(Error::Validation(format!("task `{name}` references unknown post {id}")));
            }
            if let Some(id) = e.fact_checks.iter().find(|id| !corpus.fact_checks.contains_key(id)) {
                return Err(Error::Validation(format!("task `{name}` references unknown fact-check {id}")));
            }
        }
        Ok(())
    }
}

fn id_list(name: &str, field: &str, v: &Value) -> Result<Vec<u64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("task `{name}`: `{field}` must be an array of ids")))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(arr.len());
    for x in arr {
        let id = x
            .as_u64()
            .ok_or_else(|| Error::Config(format!("task `{name}`: `{field}` contains non-integer {x}")))?;
        if seen.insert(id) {
            out.push(id);
        }
    }
    Ok(out)
}

fn entry(name: &str, v: &Value) -> Result<TaskEntry> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config(format!("task `{name}` must be an object")))?;
    let mut e = TaskEntry::default();
    for (k, val) in obj {
        let slot = match k.as_str() {
            "posts_train" => &mut e.posts_train,
            "posts_dev" => &mut e.posts_dev,
            "posts_test" => &mut e.posts_test,
            "fact_checks" => &mut e.fact_checks,
            other => return Err(Error::Config(format!("task `{name}`: unknown key `{other}`"))),
        };
        *slot = id_list(name, k, val)?;
    }
    let train: BTreeSet<u64> = e.posts_train.iter().copied().collect();
    if let Some(id) = e.posts_dev.iter().find(|id| train.contains(id)) {
        return Err(Error::Validation(format!("task `{name}`: post {id} is in both train and dev")));
    }
    Ok(e)
}

fn is_entry(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.values().all(Value::is_array))
}

/// Parse `tasks.json`. Accepts both the flat form
/// `{"eng": {...}, "crosslingual": {...}}` and the form with monolingual
/// entries nested under `"monolingual"`.
pub fn parse_tasks<R: Read>(input: R) -> Result<TaskSplit> {
    let root: Value = serde_json::from_reader(input)?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Config("tasks file must be a JSON object".into()))?;
    let mut split = TaskSplit::default();
    for (key, v) in obj {
        if key == CROSSLINGUAL {
            split.crosslingual = Some(entry(key, v)?);
        } else if key == "monolingual" && !is_entry(v) {
            let langs = v
                .as_object()
                .ok_or_else(|| Error::Config("`monolingual` must be an object".into()))?;
            for (lang, e) in langs {
                split.monolingual.insert(lang.clone(), entry(lang, e)?);
            }
        } else if is_entry(v) {
            split.monolingual.insert(key.clone(), entry(key, v)?);
        } else {
            return Err(Error::Config(format!("task `{key}` has an unrecognized shape")));
        }
    }
    Ok(split)
}

/// Dev posts and the retrievable fact-check pool of one task entry.
#[derive(Debug, Clone)]
pub struct LanguageView<'a> {
    pub language: String,
    pub posts: Vec<&'a Post>,
    pub pool: Vec<&'a FactCheck>,
}

/// Resolve the dev view for `language` (or [`CROSSLINGUAL`]).
pub fn language_view<'a>(corpus: &'a Corpus, split: &TaskSplit, language: &str) -> Result<LanguageView<'a>> {
    let e = split.entry(language)?;
    let posts = e
        .posts_dev
        .iter()
        .map(|id| {
            corpus
                .posts
                .get(id)
                .ok_or_else(|| Error::Lookup(format!("post {id} not in corpus")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = e
        .fact_checks
        .iter()
        .map(|id| {
            corpus
                .fact_checks
                .get(id)
                .ok_or_else(|| Error::Lookup(format!("fact-check {id} not in corpus")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LanguageView {
        language: language.to_owned(),
        posts,
        pool,
    })
}
