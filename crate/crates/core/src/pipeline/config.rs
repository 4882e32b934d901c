use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CompositionPlan;
use crate::embedder::{BaselineVectorizerConfig, RemoteConfig};
use crate::error::{Error, Result};
use crate::eval::Track;
use crate::fusion::FusionSpec;
use crate::reranker::{MissingScorePolicy, RerankerKind, RerankerSpec};
use crate::retriever::DEFAULT_K;

/// Crate version, mixed into every config hash.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Baseline(BaselineVectorizerConfig),
    /// Precomputed vectors for every post and fact-check in the views.
    File { path: PathBuf },
    Remote(RemoteConfig),
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Baseline(BaselineVectorizerConfig::default())
    }
}

impl EmbedderSpec {
    /// Row label used for retrieval-only reports.
    pub fn label(&self) -> String {
        match self {
            EmbedderSpec::Baseline(_) => "baseline".into(),
            EmbedderSpec::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
            EmbedderSpec::Remote(r) => r.model.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paths {
    pub fact_checks: PathBuf,
    pub posts: PathBuf,
    pub pairs: PathBuf,
    pub tasks: PathBuf,
}

/// Which posts are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Dev posts; the submission covers dev.
    #[default]
    Dev,
    /// Dev and test posts; the report covers dev, the submission covers test.
    Test,
}

/// Where fusion weights come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    /// Macro-averaged dev S@10 of each re-ranker.
    #[default]
    Dev,
    /// S@10 over the predicted phase's own posts; in the test phase this
    /// requires gold pairs for test posts.
    Recompute,
    /// Fixed per-model scores in `[0, 1]`, e.g. carried over from an earlier
    /// dev run.
    External { scores: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub track: Track,
    /// Monolingual languages to run; empty means every language in the task
    /// split. Ignored for the crosslingual track.
    #[serde(default)]
    pub languages: Vec<String>,
    /// Defaults to `T` for crosslingual and `OT` for monolingual.
    #[serde(default)]
    pub plan: Option<CompositionPlan>,
    /// Disable the plan `T` fallback to originals.
    #[serde(default)]
    pub strict_plan: bool,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub rerankers: Vec<RerankerSpec>,
    #[serde(default)]
    pub retrieval_only: bool,
    #[serde(default)]
    pub fusion: FusionSpec,
    #[serde(default)]
    pub weights: WeightSource,
    #[serde(default)]
    pub missing_score: MissingScorePolicy,
    #[serde(default)]
    pub phase: Phase,
    pub paths: Paths,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses all cores. Never affects outputs.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Reuse persisted stage-1 candidates of the same config hash.
    #[serde(default)]
    pub resume: bool,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// A config with defaults for everything but the track and input paths.
    pub fn new(track: Track, paths: Paths) -> Self {
        Self {
            track,
            languages: Vec::new(),
            plan: None,
            strict_plan: false,
            embedder: EmbedderSpec::default(),
            k: DEFAULT_K,
            rerankers: Vec::new(),
            retrieval_only: false,
            fusion: FusionSpec::default(),
            weights: WeightSource::default(),
            missing_score: MissingScorePolicy::default(),
            phase: Phase::default(),
            paths,
            out: default_out(),
            seed: 0,
            threads: None,
            resume: false,
        }
    }

    /// Load TOML or JSON, chosen by extension (`.json` is JSON, anything else
    /// TOML). Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.fact_checks);
        fix(&mut self.paths.posts);
        fix(&mut self.paths.pairs);
        fix(&mut self.paths.tasks);
        fix(&mut self.out);
        if let EmbedderSpec::File { path } = &mut self.embedder {
            fix(path);
        }
        for r in &mut self.rerankers {
            if let RerankerKind::ScoreFile { path } = &mut r.kind {
                fix(path);
            }
        }
    }

    pub fn plan(&self) -> CompositionPlan {
        self.plan.unwrap_or(match self.track {
            Track::Crosslingual => CompositionPlan::T,
            Track::Monolingual => CompositionPlan::OT,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.rerankers.is_empty() && !self.retrieval_only {
            return Err(Error::Config("configure at least one reranker or set retrieval_only".into()));
        }
        if self.fusion.window == 0 {
            return Err(Error::Config("fusion window must be at least 1".into()));
        }
        if self.k < self.fusion.window {
            return Err(Error::Config(format!("k = {} is below the fusion window {}", self.k, self.fusion.window)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rerankers {
            if r.top_n == 0 || r.top_n > self.k {
                return Err(Error::Config(format!("reranker `{}`: top_n {} must lie in 1..={}", r.model_name, r.top_n, self.k)));
            }
            if r.top_n > self.fusion.window {
                return Err(Error::Config(format!(
                    "reranker `{}`: top_n {} exceeds the fusion window {}",
                    r.model_name, r.top_n, self.fusion.window
                )));
            }
            if r.model_name.trim().is_empty() || !seen.insert(r.model_name.as_str()) {
                return Err(Error::Config(format!("reranker names must be unique and non-empty: `{}`", r.model_name)));
            }
            if r.model_name == super::VOTING_ROW {
                return Err(Error::Config(format!("`{}` is reserved for the fused row", super::VOTING_ROW)));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let EmbedderSpec::Baseline(b) = &self.embedder {
            b.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over the output-relevant config fields, the crate version and
    /// the bytes of every input file. `out`, `threads` and `resume` are
    /// excluded because they never change outputs.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.threads = None;
        canonical.resume = false;
        canonical.plan = Some(self.plan());
        let mut h = Sha256::new();
        h.update(VERSION.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&canonical)?);
        let mut inputs = vec![
            &self.paths.fact_checks,
            &self.paths.posts,
            &self.paths.pairs,
            &self.paths.tasks,
        ];
        if let EmbedderSpec::File { path } = &self.embedder {
            inputs.push(path);
        }
        for r in &self.rerankers {
            if let RerankerKind::ScoreFile { path } = &r.kind {
                inputs.push(path);
            }
        }
        for p in inputs {
            let mut f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            let mut fh = Sha256::new();
            std::io::copy(&mut f, &mut fh).map_err(|e| Error::io(p, e))?;
            h.update([0]);
            h.update(fh.finalize());
        }
        Ok(hex::encode(h.finalize()))
    }
}
