use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use claimstage::corpus::{self, CompositionPlan, Composer, NormalizedRecord};
use claimstage::embedder::{
    BaselineVectorizer, BaselineVectorizerConfig, EmbeddingStore, Namespace, Provenance, RemoteConfig, RemoteEmbedder,
};
use claimstage::eval::{self, EvaluationReport, PredictionSet, ReportRow, Track};
use claimstage::fusion::{self, FusionSpec, ModelPredictions, VoteScheme, Weighting};
use claimstage::pipeline::{self, EmbedderSpec, ExperimentConfig, Inputs, RunOutcome};
use claimstage::reranker::{self, MissingScorePolicy};
use claimstage::retriever::{self, RankedList};
use claimstage::{Error, Result};

/// Staged fact-checked claim retrieval: retrieve, re-rank, fuse, evaluate.
#[derive(Parser)]
#[command(name = "claimstage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the shared-task CSVs and write normalized JSON Lines.
    Ingest(IngestArgs),
    /// Embed every post and fact-check into an embedding file.
    Embed(EmbedArgs),
    /// Stage 1 only: retrieve top-K candidates and report their S@10.
    Retrieve(RunArgs),
    /// Re-rank a candidate file with an external score file.
    Rerank(RerankArgs),
    /// Weighted voting over several re-ranked candidate files.
    Fuse(FuseArgs),
    /// Score a submission file against gold pairs.
    Eval(EvalArgs),
    /// Run every stage from a config file.
    Run(RunArgs),
}

/// Config file plus command-line overrides.
#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Composition plan: O, T, OT or OTV.
    #[arg(long)]
    plan: Option<CompositionPlan>,
    /// Stage-1 candidate count.
    #[arg(long)]
    k: Option<usize>,
    /// Re-ranked list length, applied to every re-ranker.
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, value_parser = parse_track)]
    track: Option<Track>,
    /// Output root; runs land in `<out>/runs/<config hash>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Reuse persisted stage-1 candidates.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Config whose `paths` section names the inputs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fact_checks: Option<PathBuf>,
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Normalized JSON Lines output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    plan: Option<CompositionPlan>,
    #[arg(long, value_parser = parse_track)]
    track: Option<Track>,
    /// Baseline only: hash buckets, written densely. Must be a power of two.
    #[arg(long)]
    hash_dim: Option<usize>,
    /// Embedding file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerankArgs {
    /// Candidate JSON Lines from stage 1.
    #[arg(long)]
    candidates: PathBuf,
    /// `post_id<TAB>fact_check_id<TAB>score` file.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = reranker::DEFAULT_TOP_N)]
    top_n: usize,
    /// Keep the stage-1 score for candidates missing from the score file.
    #[arg(long)]
    fallback: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// `model=path` re-ranked candidate file; repeat per model.
    #[arg(long = "input", value_parser = parse_assignment, required = true)]
    inputs: Vec<(String, String)>,
    /// `model=s` dev S@10 in [0, 1]; omitted models get equal weight.
    #[arg(long = "weight", value_parser = parse_assignment)]
    weights: Vec<(String, String)>,
    /// borda, rrf or approval.
    #[arg(long, default_value = "borda")]
    scheme: String,
    #[arg(long, default_value_t = fusion::DEFAULT_WINDOW)]
    top_n: usize,
    /// Submission JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Submission JSON: `{"<post_id>": [fact_check_id, ...]}`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Task split; with it, results are broken down per language.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long, value_parser = parse_track, default_value = "monolingual")]
    track: Track,
    #[arg(long, default_value_t = eval::DEFAULT_K)]
    k: usize,
    /// Write the report JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_track(s: &str) -> std::result::Result<Track, String> {
    match s.to_ascii_lowercase().as_str() {
        "monolingual" | "mono" => Ok(Track::Monolingual),
        "crosslingual" | "cross" => Ok(Track::Crosslingual),
        _ => Err(format!("unknown track `{s}`")),
    }
}

fn parse_assignment(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| format!("expected model=value, got `{s}`"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(p) = args.plan {
        cfg.plan = Some(p);
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(n) = args.top_n {
        for r in &mut cfg.rerankers {
            r.top_n = n;
        }
    }
    if let Some(t) = args.track {
        cfg.track = t;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.resume |= args.resume;
    Ok(cfg)
}

fn print_outcome(run: &RunOutcome) {
    print!("{}", run.report.render_text());
    println!("run directory: {}", run.run_dir.display());
}

fn cmd_run(args: &RunArgs, retrieval_only: bool) -> Result<()> {
    let cfg = load_config(args)?;
    let run = if retrieval_only {
        pipeline::run_retrieval_experiment(&cfg)?
    } else if cfg.track == Track::Crosslingual {
        pipeline::crosslingual_mode(&cfg)?
    } else {
        pipeline::run_full_pipeline(&cfg)?
    };
    print_outcome(&run);
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let (fc_path, post_path) = match (&args.config, &args.fact_checks, &args.posts) {
        (_, Some(f), Some(p)) => (f.clone(), p.clone()),
        (Some(c), None, None) => {
            let cfg = ExperimentConfig::load(c)?;
            (cfg.paths.fact_checks, cfg.paths.posts)
        }
        _ => return Err(Error::Config("pass --config, or both --fact-checks and --posts".into())),
    };
    let fcs = corpus::parse_fact_checks(open(&fc_path)?)?;
    let posts = corpus::parse_posts(open(&post_path)?)?;
    for e in fcs.rejected.iter().chain(&posts.rejected) {
        log::warn!("skipped malformed row: {e}");
    }
    let records: Vec<NormalizedRecord> = posts
        .records
        .iter()
        .cloned()
        .map(NormalizedRecord::Post)
        .chain(fcs.records.iter().cloned().map(NormalizedRecord::FactCheck))
        .collect();
    let mut out = create(&args.out)?;
    corpus::write_jsonl(&mut out, &records)?;
    out.flush().map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    println!(
        "posts: {} of {} rows ({} rejected, {} empty)",
        posts.records.len(),
        posts.data_rows,
        posts.rejected.len(),
        posts.flagged.len()
    );
    println!(
        "fact-checks: {} of {} rows ({} rejected)",
        fcs.records.len(),
        fcs.data_rows,
        fcs.rejected.len()
    );
    Ok(())
}

fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(p) = args.plan {
        cfg.plan = Some(p);
    }
    if let Some(t) = args.track {
        cfg.track = t;
    }
    let inputs = Inputs::load(&cfg.paths)?;
    let composer = Composer::new(cfg.plan()).strict(cfg.strict_plan);
    let records: Vec<(Namespace, u64, String)> = inputs
        .corpus
        .fact_checks
        .values()
        .map(|f| (Namespace::FactCheck, f.fact_check_id, composer.fact_check(f)))
        .chain(inputs.corpus.posts.values().map(|p| (Namespace::Post, p.post_id, composer.post(p))))
        .collect();
    let store = match &cfg.embedder {
        EmbedderSpec::Baseline(bc) => {
            let bc = BaselineVectorizerConfig {
                hash_dim: args.hash_dim.unwrap_or(bc.hash_dim),
                ..*bc
            };
            bc.validate()?;
            let docs: Vec<&str> = records
                .iter()
                .filter(|(ns, _, _)| *ns == Namespace::FactCheck)
                .map(|(_, _, t)| t.as_str())
                .collect();
            let vz = BaselineVectorizer::fit(bc, &docs)?;
            let mut store = EmbeddingStore::new(vz.dim(), Provenance::Baseline)?;
            for (ns, id, text) in &records {
                store.insert(*ns, *id, vz.embed(text).to_dense())?;
            }
            store
        }
        EmbedderSpec::Remote(rc) => RemoteEmbedder::new(RemoteConfig::clone(rc).with_env_override())?.embed_records(&records)?,
        EmbedderSpec::File { path } => {
            return Err(Error::Config(format!("embedder already reads vectors from {}", path.display())))
        }
    };
    store.save(&args.out)?;
    println!("wrote {} vectors of dim {} to {}", store.len(), store.dim(), args.out.display());
    Ok(())
}

fn cmd_rerank(args: &RerankArgs) -> Result<()> {
    let cands = retriever::read_candidates(open(&args.candidates)?)?;
    let (table, bad) = reranker::load_scores(open(&args.scores)?, &args.model)?;
    for e in &bad {
        log::warn!("skipped score row: {e}");
    }
    let policy = if args.fallback {
        MissingScorePolicy::Fallback
    } else {
        MissingScorePolicy::Fail
    };
    let mut lists = Vec::with_capacity(cands.len());
    let mut fallbacks = 0;
    for list in cands.values() {
        let r = reranker::rerank(list, &table, args.top_n, policy).map_err(|e| e.in_stage("rerank"))?;
        fallbacks += r.fallbacks;
        lists.push(r.list);
    }
    let mut out = create(&args.out)?;
    retriever::write_candidates(&mut out, &lists)?;
    println!("re-ranked {} posts ({fallbacks} fallbacks)", lists.len());
    Ok(())
}

fn cmd_fuse(args: &FuseArgs) -> Result<()> {
    let scheme = match args.scheme.to_ascii_lowercase().as_str() {
        "borda" => VoteScheme::Borda,
        "rrf" => VoteScheme::Rrf { k: fusion::DEFAULT_RRF_K },
        "approval" => VoteScheme::Approval,
        s => return Err(Error::Config(format!("unknown scheme `{s}`"))),
    };
    let spec = FusionSpec {
        scheme,
        weighting: Weighting::Proportional,
        window: args.top_n,
    };
    let mut per_model: ModelPredictions = BTreeMap::new();
    for (model, path) in &args.inputs {
        let lists: BTreeMap<u64, RankedList> = retriever::read_candidates(open(Path::new(path))?)?
            .into_iter()
            .map(|(p, l)| (p, l.truncated(args.top_n)))
            .collect();
        if per_model.insert(model.clone(), lists).is_some() {
            return Err(Error::Config(format!("model `{model}` given twice")));
        }
    }
    let mut scores = BTreeMap::new();
    for (model, value) in &args.weights {
        if !per_model.contains_key(model) {
            return Err(Error::Config(format!("weight for unknown model `{model}`")));
        }
        let s: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("weight `{value}` for `{model}` is not a number")))?;
        scores.insert(model.clone(), s);
    }
    if scores.is_empty() {
        scores = per_model.keys().map(|m| (m.clone(), 1.0)).collect();
    } else if scores.len() != per_model.len() {
        return Err(Error::Config("give a weight for every model or for none".into()));
    }
    let weights = fusion::compute_weights(&scores, spec.weighting)?;
    let fused = fusion::fuse_run(&per_model, &weights, &spec).map_err(|e| e.in_stage("fuse"))?;
    let preds = PredictionSet::from_ranked(fused.values());
    let mut out = create(&args.out)?;
    out.write_all(preds.to_submission_json()?.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    for w in &weights {
        println!("{}\tweight {:.4}", w.model_name, w.weight);
    }
    println!("fused {} posts", preds.len());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let preds = PredictionSet::from_submission_json(open(&args.predictions)?)?;
    let (pairs, bad) = corpus::parse_pairs(open(&args.pairs)?)?;
    for e in &bad {
        log::warn!("skipped pair row: {e}");
    }
    let mut per_language = BTreeMap::new();
    match &args.tasks {
        None => {
            per_language.insert("all".to_string(), eval::success_at_k(&preds, &pairs, args.k)? * 100.0);
        }
        Some(tasks) => {
            let split = corpus::parse_tasks(open(tasks)?)?;
            let views: Vec<(String, &corpus::TaskEntry)> = match args.track {
                Track::Crosslingual => vec![(corpus::CROSSLINGUAL.to_string(), split.entry(corpus::CROSSLINGUAL)?)],
                Track::Monolingual => split.monolingual.iter().map(|(k, v)| (k.clone(), v)).collect(),
            };
            for (lang, entry) in views {
                let posts = entry.posts_dev.iter().chain(&entry.posts_test).copied().collect();
                let subset = preds.restrict(&posts);
                if !subset.is_empty() {
                    per_language.insert(lang, eval::success_at_k(&subset, &pairs, args.k)? * 100.0);
                }
            }
            if per_language.is_empty() {
                return Err(Error::Validation("no predicted post belongs to the task split".into()));
            }
        }
    }
    let mut report = EvaluationReport::new(args.track);
    let label = args
        .predictions
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "predictions".into());
    report.rows.push(ReportRow::new(label, per_language)?);
    print!("{}", report.render_text());
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json()?).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Retrieve(a) => cmd_run(a, true),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a, false),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
