//! Experiment orchestration: compose → embed → retrieve → rerank → fuse →
//! evaluate → report, with every stage's output persisted under
//! `<out>/runs/<config hash>/`.
//!
//! Layout of a run directory:
//!
//! ```text
//! stage1/<view>.jsonl            top-K candidates per post
//! stage2/<model>/<view>.jsonl    re-ranked top-N per post
//! stage3/<view>.jsonl            fused top-10 per post
//! <track>_predictions.json       submission
//! report.json, report.txt
//! manifest.json
//! ```
//!
//! A view is one monolingual language, or `crosslingual`.

mod config;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

pub use config::{EmbedderSpec, ExperimentConfig, Paths, Phase, WeightSource, VERSION};
pub use manifest::RunManifest;

use crate::corpus::{self, Composer, Corpus, PairSet, TaskEntry, TaskSplit, CROSSLINGUAL};
use crate::embedder::{BaselineVectorizer, EmbeddingStore, Namespace, RemoteEmbedder, SparseVector, Vector};
use crate::error::{Error, Result};
use crate::eval::{self, EvaluationReport, PredictionSet, ReportRow, Track};
use crate::fusion::{self, ModelPredictions, ModelWeight, Weighting};
use crate::reranker::{self, LexicalScorer, RerankerKind, RerankerSpec, Scorer};
use crate::retriever::{self, Index, Query, RankedList};

/// Report row label of the fused predictions.
pub const VOTING_ROW: &str = "Voting";

/// Cut-off used for evaluation and submissions.
const EVAL_K: usize = eval::DEFAULT_K;

/// Parsed and cross-validated input files.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub corpus: Corpus,
    pub pairs: PairSet,
    pub split: TaskSplit,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

impl Inputs {
    /// Parse the four input files. Malformed rows are logged and skipped;
    /// unknown ids in pairs or tasks are errors.
    pub fn load(paths: &Paths) -> Result<Self> {
        let fcs = corpus::parse_fact_checks(open(&paths.fact_checks)?)?;
        let posts = corpus::parse_posts(open(&paths.posts)?)?;
        let (pairs, bad_pairs) = corpus::parse_pairs(open(&paths.pairs)?)?;
        for e in fcs.rejected.iter().chain(&posts.rejected).chain(&bad_pairs) {
            warn!("skipped malformed row: {e}");
        }
        if !posts.flagged.is_empty() {
            warn!("{} posts have neither text nor OCR", posts.flagged.len());
        }
        let split = corpus::parse_tasks(open(&paths.tasks)?)?;
        let corpus = Corpus::new(posts.records, fcs.records)?;
        corpus.validate_pairs(&pairs)?;
        split.validate(&corpus)?;
        info!(
            "loaded {} posts, {} fact-checks, {} pairs",
            corpus.posts.len(),
            corpus.fact_checks.len(),
            pairs.len()
        );
        Ok(Self { corpus, pairs, split })
    }
}

/// Result of a pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvaluationReport,
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    /// Final top-10 per submitted post.
    pub predictions: PredictionSet,
}

/// Posts and pool of one view for the configured phase.
struct View {
    name: String,
    eval_posts: Vec<u64>,
    predict_posts: Vec<u64>,
    submit_posts: Vec<u64>,
    weight_posts: Vec<u64>,
    pool: Vec<u64>,
}

impl View {
    fn new(name: &str, e: &TaskEntry, cfg: &ExperimentConfig) -> Result<Self> {
        if e.posts_dev.is_empty() {
            return Err(Error::Validation(format!("view `{name}` has no dev posts")));
        }
        if e.fact_checks.is_empty() {
            return Err(Error::Validation(format!("view `{name}` has an empty fact-check pool")));
        }
        let (predict, submit, weight) = match cfg.phase {
            Phase::Dev => (e.posts_dev.clone(), e.posts_dev.clone(), e.posts_dev.clone()),
            Phase::Test => {
                if e.posts_test.is_empty() {
                    return Err(Error::Validation(format!("view `{name}` has no test posts")));
                }
                let all: BTreeSet<u64> = e.posts_dev.iter().chain(&e.posts_test).copied().collect();
                let weight = match cfg.weights {
                    WeightSource::Recompute => e.posts_test.clone(),
                    _ => e.posts_dev.clone(),
                };
                (all.into_iter().collect(), e.posts_test.clone(), weight)
            }
        };
        Ok(Self {
            name: name.to_owned(),
            eval_posts: e.posts_dev.clone(),
            predict_posts: predict,
            submit_posts: submit,
            weight_posts: weight,
            pool: e.fact_checks.clone(),
        })
    }
}

fn views(cfg: &ExperimentConfig, split: &TaskSplit) -> Result<Vec<View>> {
    match cfg.track {
        Track::Crosslingual => Ok(vec![View::new(CROSSLINGUAL, split.entry(CROSSLINGUAL)?, cfg)?]),
        Track::Monolingual => {
            let langs: Vec<String> = if cfg.languages.is_empty() {
                split.monolingual.keys().cloned().collect()
            } else {
                let mut l = cfg.languages.clone();
                l.sort();
                l.dedup();
                l
            };
            if langs.is_empty() {
                return Err(Error::Validation("task split has no monolingual languages".into()));
            }
            langs.iter().map(|l| View::new(l, split.entry(l)?, cfg)).collect()
        }
    }
}

fn track_name(t: Track) -> &'static str {
    match t {
        Track::Monolingual => "monolingual",
        Track::Crosslingual => "crosslingual",
    }
}

/// Directory-safe form of a model name.
fn dir_name(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Write via a temporary sibling and rename, so readers never see a torn
/// file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn candidates_bytes<'a>(lists: impl IntoIterator<Item = &'a RankedList>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    retriever::write_candidates(&mut buf, lists)?;
    Ok(buf)
}

/// Shared state of one run.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    inputs: &'a Inputs,
    composer: Composer,
    dir: PathBuf,
    manifest: RunManifest,
    /// Vectors from a file or remote embedder, loaded once.
    store: Option<EmbeddingStore>,
    remote: Option<RemoteEmbedder>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, inputs: &'a Inputs, hash: String) -> Result<Self> {
        let dir = cfg.out.join("runs").join(&hash);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let plan = cfg.plan();
        Ok(Self {
            cfg,
            inputs,
            composer: Composer::new(plan).strict(cfg.strict_plan),
            manifest: RunManifest::new(hash, cfg.track, plan),
            dir,
            store: None,
            remote: None,
        })
    }

    fn artifact(&mut self, key: String, rel: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(rel), bytes)?;
        self.manifest.artifacts.insert(key, rel.to_string_lossy().replace('\\', "/"));
        Ok(())
    }

    fn post_text(&self, id: u64) -> String {
        self.composer.post(&self.inputs.corpus.posts[&id])
    }

    fn fact_check_text(&self, id: u64) -> String {
        self.composer.fact_check(&self.inputs.corpus.fact_checks[&id])
    }

    /// Stage 1 for one view, reusing persisted candidates when allowed.
    fn stage1(&mut self, view: &View) -> Result<BTreeMap<u64, RankedList>> {
        let rel = PathBuf::from("stage1").join(format!("{}.jsonl", view.name));
        let path = self.dir.join(&rel);
        if self.cfg.resume && path.exists() {
            let lists = retriever::read_candidates(open(&path)?).map_err(|e| e.in_stage("retrieve"))?;
            let want_len = self.cfg.k.min(view.pool.len());
            let complete = lists.keys().copied().eq(view.predict_posts.iter().copied().collect::<BTreeSet<_>>())
                && lists.values().all(|l| l.len() == want_len);
            if complete {
                info!("{}: reusing stage-1 candidates", view.name);
                self.manifest.resumed.push(view.name.clone());
                self.manifest
                    .artifacts
                    .insert(format!("stage1/{}", view.name), rel.to_string_lossy().replace('\\', "/"));
                return Ok(lists);
            }
            warn!("{}: persisted stage-1 candidates are incomplete; recomputing", view.name);
        }

        let t = Instant::now();
        let index_and_queries = self.embed_view(view).map_err(|e| e.in_stage("embed"))?;
        self.manifest.add_time("embed", t);

        let t = Instant::now();
        let lists = match &index_and_queries {
            (index, Queries::Dense(q)) => {
                let queries = q.iter().map(|(&id, v)| (id, Query::Dense(v))).collect();
                retriever::batch_retrieve(index, &queries, self.cfg.k, None)
            }
            (index, Queries::Sparse(q)) => {
                let queries = q.iter().map(|(&id, v)| (id, Query::Sparse(v))).collect();
                retriever::batch_retrieve(index, &queries, self.cfg.k, None)
            }
        }
        .map_err(|e| e.in_stage("retrieve"))?;
        self.manifest.add_time("retrieve", t);

        let bytes = candidates_bytes(lists.values())?;
        self.artifact(format!("stage1/{}", view.name), &rel, &bytes)?;
        Ok(lists)
    }

    fn embed_view(&mut self, view: &View) -> Result<(Index, Queries)> {
        match &self.cfg.embedder {
            EmbedderSpec::Baseline(bc) => {
                let pool_texts: Vec<String> = view.pool.iter().map(|&id| self.fact_check_text(id)).collect();
                let vz = BaselineVectorizer::fit(*bc, &pool_texts)?;
                let rows: Vec<(u64, SparseVector)> = view
                    .pool
                    .par_iter()
                    .zip(pool_texts.par_iter())
                    .map(|(&id, t)| (id, vz.embed(t)))
                    .collect();
                let index = Index::from_sparse(rows)?;
                let queries = view
                    .predict_posts
                    .par_iter()
                    .map(|&id| (id, vz.embed(&self.post_text(id))))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect();
                Ok((index, Queries::Sparse(queries)))
            }
            EmbedderSpec::File { path } => {
                if self.store.is_none() {
                    self.store = Some(EmbeddingStore::load(path)?);
                }
                self.dense_from_store(view)
            }
            EmbedderSpec::Remote(rc) => {
                if self.remote.is_none() {
                    self.remote = Some(RemoteEmbedder::new(rc.clone().with_env_override())?);
                }
                let records: Vec<(Namespace, u64, String)> = view
                    .pool
                    .iter()
                    .map(|&id| (Namespace::FactCheck, id, self.fact_check_text(id)))
                    .chain(view.predict_posts.iter().map(|&id| (Namespace::Post, id, self.post_text(id))))
                    .collect();
                let store = self.remote.as_ref().expect("set above").embed_records(&records)?;
                let index = Index::build(&store, &view.pool)?;
                let queries = store_queries(&store, &view.predict_posts)?;
                Ok((index, Queries::Dense(queries)))
            }
        }
    }

    fn dense_from_store(&self, view: &View) -> Result<(Index, Queries)> {
        let store = self.store.as_ref().expect("store loaded");
        let index = Index::build(store, &view.pool)?;
        Ok((index, Queries::Dense(store_queries(store, &view.predict_posts)?)))
    }

    /// Stage 2 for one model and view.
    fn stage2(&mut self, spec: &RerankerSpec, scorer: &dyn Scorer, view: &View, cands: &BTreeMap<u64, RankedList>) -> Result<BTreeMap<u64, RankedList>> {
        let t = Instant::now();
        let results: Vec<reranker::Reranked> = cands
            .par_iter()
            .map(|(_, l)| reranker::rerank(l, scorer, spec.top_n, self.cfg.missing_score))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("rerank"))?;
        let fallbacks: usize = results.iter().map(|r| r.fallbacks).sum();
        if fallbacks > 0 {
            warn!("{} / {}: {fallbacks} candidates kept their retrieval score", spec.model_name, view.name);
        }
        let lists: BTreeMap<u64, RankedList> = results.into_iter().map(|r| (r.list.post_id, r.list)).collect();
        self.manifest.add_time("rerank", t);
        let rel = PathBuf::from("stage2").join(dir_name(&spec.model_name)).join(format!("{}.jsonl", view.name));
        let bytes = candidates_bytes(lists.values())?;
        self.artifact(format!("stage2/{}/{}", spec.model_name, view.name), &rel, &bytes)?;
        Ok(lists)
    }

    fn lexical_scorer(&self, spec: &RerankerSpec, view: &View, cands: &BTreeMap<u64, RankedList>) -> LexicalScorer {
        let fc_ids: BTreeSet<u64> = cands.values().flat_map(|l| l.ids()).collect();
        let posts: Vec<(u64, String)> = view.predict_posts.iter().map(|&id| (id, self.post_text(id))).collect();
        let fcs: Vec<(u64, String)> = fc_ids.iter().map(|&id| (id, self.fact_check_text(id))).collect();
        LexicalScorer::new(
            spec.model_name.clone(),
            posts.iter().map(|(id, t)| (*id, t.as_str())),
            fcs.iter().map(|(id, t)| (*id, t.as_str())),
        )
    }

    fn write_outputs(&mut self, report: &EvaluationReport, predictions: &PredictionSet) -> Result<()> {
        let t = Instant::now();
        let name = format!("{}_predictions.json", track_name(self.cfg.track));
        let sub = predictions.to_submission_json()?;
        self.artifact("submission".into(), Path::new(&name), sub.as_bytes())?;
        let json = report.to_json()?;
        self.artifact("report_json".into(), Path::new("report.json"), json.as_bytes())?;
        let text = report.render_text();
        self.artifact("report_text".into(), Path::new("report.txt"), text.as_bytes())?;
        self.manifest.add_time("report", t);
        let m = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.dir.join("manifest.json"), &m)
    }
}

enum Queries {
    Dense(BTreeMap<u64, Vector>),
    Sparse(BTreeMap<u64, SparseVector>),
}

fn store_queries(store: &EmbeddingStore, posts: &[u64]) -> Result<BTreeMap<u64, Vector>> {
    posts.iter().map(|&id| Ok((id, store.embed(Namespace::Post, id)?))).collect()
}

/// S@10 of `lists` over `posts`, as a fraction.
fn score(lists: &BTreeMap<u64, RankedList>, posts: &[u64], gold: &PairSet) -> Result<f64> {
    let preds = PredictionSet::from_ranked(posts.iter().map(|p| &lists[p]));
    eval::success_at_k(&preds, gold, EVAL_K)
}

fn submission(views: &[View], finals: &[BTreeMap<u64, RankedList>]) -> Result<PredictionSet> {
    let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (view, lists) in views.iter().zip(finals) {
        for &p in &view.submit_posts {
            let ids: Vec<u64> = lists[&p].ids().into_iter().take(EVAL_K).collect();
            if let Some(prev) = out.insert(p, ids) {
                if prev != out[&p] {
                    return Err(Error::Validation(format!("post {p} appears in several views with different predictions")));
                }
            }
        }
    }
    PredictionSet::new(out)
}

fn with_threads<T: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match cfg.threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<(Inputs, String)> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let inputs = Inputs::load(&cfg.paths)?;
    Ok((inputs, hash))
}

/// Stage 1 only: per-view S@10 of the top-10 retrieved candidates. The
/// report has one row, labelled after the embedder.
pub fn run_retrieval_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (inputs, hash) = prepare(cfg)?;
    with_threads(cfg, || retrieval_only(cfg, &inputs, hash))
}

fn retrieval_only(cfg: &ExperimentConfig, inputs: &Inputs, hash: String) -> Result<RunOutcome> {
    let views = views(cfg, &inputs.split)?;
    let mut run = Run::new(cfg, inputs, hash)?;
    let mut per_language = BTreeMap::new();
    let mut finals = Vec::new();
    for view in &views {
        let lists = run.stage1(view)?;
        let t = Instant::now();
        let s = score(&lists, &view.eval_posts, &inputs.pairs).map_err(|e| e.in_stage("eval"))?;
        run.manifest.add_time("eval", t);
        per_language.insert(view.name.clone(), s * 100.0);
        finals.push(lists);
    }
    let mut report = EvaluationReport::new(cfg.track);
    report.rows.push(ReportRow::new(cfg.embedder.label(), per_language)?);
    let predictions = submission(&views, &finals)?;
    run.write_outputs(&report, &predictions)?;
    Ok(RunOutcome {
        report,
        manifest: run.manifest,
        run_dir: run.dir,
        predictions,
    })
}

/// All three stages. Report rows: one per re-ranker, then [`VOTING_ROW`].
/// Delegates to [`run_retrieval_experiment`] when `retrieval_only` is set.
pub fn run_full_pipeline(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if cfg.retrieval_only {
        return run_retrieval_experiment(cfg);
    }
    let (inputs, hash) = prepare(cfg)?;
    with_threads(cfg, || full(cfg, &inputs, hash))
}

/// [`run_full_pipeline`] restricted to the crosslingual track: one shared
/// pool, a single Avg column in the report.
pub fn crosslingual_mode(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if cfg.track != Track::Crosslingual {
        return Err(Error::Config("crosslingual mode requires track = \"crosslingual\"".into()));
    }
    run_full_pipeline(cfg)
}

fn full(cfg: &ExperimentConfig, inputs: &Inputs, hash: String) -> Result<RunOutcome> {
    let views = views(cfg, &inputs.split)?;
    let mut run = Run::new(cfg, inputs, hash)?;

    let mut stage1 = Vec::with_capacity(views.len());
    for view in &views {
        stage1.push(run.stage1(view)?);
    }

    // Score files are shared across views; load each once.
    let mut tables = BTreeMap::new();
    for spec in &cfg.rerankers {
        if let RerankerKind::ScoreFile { path } = &spec.kind {
            let t = Instant::now();
            let (table, bad) = reranker::load_scores(open(path)?, &spec.model_name).map_err(|e| e.in_stage("rerank"))?;
            for e in &bad {
                warn!("{}: skipped score row: {e}", spec.model_name);
            }
            run.manifest.add_time("rerank", t);
            tables.insert(spec.model_name.clone(), table);
        }
    }

    // per_view[v][model] = re-ranked lists.
    let mut per_view: Vec<ModelPredictions> = vec![BTreeMap::new(); views.len()];
    for spec in &cfg.rerankers {
        for (vi, view) in views.iter().enumerate() {
            let lists = match &spec.kind {
                RerankerKind::ScoreFile { .. } => run.stage2(spec, &tables[&spec.model_name], view, &stage1[vi])?,
                RerankerKind::LexicalBaseline => {
                    let scorer = run.lexical_scorer(spec, view, &stage1[vi]);
                    run.stage2(spec, &scorer, view, &stage1[vi])?
                }
            };
            per_view[vi].insert(spec.model_name.clone(), lists);
        }
    }

    let t = Instant::now();
    let mut report = EvaluationReport::new(cfg.track);
    let mut weight_scores = BTreeMap::new();
    for spec in &cfg.rerankers {
        let mut per_language = BTreeMap::new();
        let mut for_weights = BTreeMap::new();
        for (vi, view) in views.iter().enumerate() {
            let lists = &per_view[vi][&spec.model_name];
            let s = score(lists, &view.eval_posts, &inputs.pairs).map_err(|e| e.in_stage("eval"))?;
            per_language.insert(view.name.clone(), s * 100.0);
            let w = if view.weight_posts == view.eval_posts {
                s
            } else {
                score(lists, &view.weight_posts, &inputs.pairs).map_err(|e| e.in_stage("eval"))?
            };
            for_weights.insert(view.name.clone(), w);
        }
        report.rows.push(ReportRow::new(spec.model_name.clone(), per_language)?);
        weight_scores.insert(spec.model_name.clone(), eval::macro_average(&for_weights)?);
    }
    run.manifest.add_time("eval", t);

    let weights = resolve_weights(cfg, weight_scores).map_err(|e| e.in_stage("fuse"))?;
    run.manifest.weights = weights.clone();

    let mut finals = Vec::with_capacity(views.len());
    let mut voting = BTreeMap::new();
    for (vi, view) in views.iter().enumerate() {
        let t = Instant::now();
        let fused = fusion::fuse_run(&per_view[vi], &weights, &cfg.fusion).map_err(|e| e.in_stage("fuse"))?;
        run.manifest.add_time("fuse", t);
        let rel = PathBuf::from("stage3").join(format!("{}.jsonl", view.name));
        let bytes = candidates_bytes(fused.values())?;
        run.artifact(format!("stage3/{}", view.name), &rel, &bytes)?;
        let s = score(&fused, &view.eval_posts, &inputs.pairs).map_err(|e| e.in_stage("eval"))?;
        voting.insert(view.name.clone(), s * 100.0);
        finals.push(fused);
    }
    report.rows.push(ReportRow::new(VOTING_ROW, voting)?);

    let predictions = submission(&views, &finals)?;
    run.write_outputs(&report, &predictions)?;
    Ok(RunOutcome {
        report,
        manifest: run.manifest,
        run_dir: run.dir,
        predictions,
    })
}

/// Model weights from the configured source. Under proportional weighting
/// an all-zero score vector falls back to uniform weights.
fn resolve_weights(cfg: &ExperimentConfig, measured: BTreeMap<String, f64>) -> Result<Vec<ModelWeight>> {
    let scores = match &cfg.weights {
        WeightSource::Dev | WeightSource::Recompute => measured,
        WeightSource::External { scores } => {
            let mut picked = BTreeMap::new();
            for name in measured.keys() {
                let s = scores
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("external weights lack model `{name}`")))?;
                picked.insert(name.clone(), *s);
            }
            picked
        }
    };
    let all_zero = scores.values().all(|&s| s == 0.0);
    if all_zero && cfg.fusion.weighting == Weighting::Proportional {
        warn!("every model scored zero; fusing with uniform weights");
        let n = scores.len() as f64;
        return Ok(scores
            .into_iter()
            .map(|(model_name, s)| ModelWeight {
                model_name,
                dev_s_at_10: s,
                weight: 1.0 / n,
            })
            .collect());
    }
    fusion::compute_weights(&scores, cfg.fusion.weighting)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_names_are_safe() {
        assert_eq!(dir_name("mul-e5/large v2"), "mul-e5_large_v2");
        assert_eq!(dir_name("bge.ft"), "bge.ft");
    }
}
