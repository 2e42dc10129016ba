mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use litsearch::bm25::{Bm25Params, Index};
use litsearch::corpus::{load_qa_dataset, write_qa_dataset, CorpusStore, QASample};
use litsearch::datagen::{run_pipeline, FixtureLlm, HttpLlm, LlmClient, PipelineConfig, PromptSet};
use litsearch::eval::{
    dump_traces, run_eval, split_report, ConstantPolicy, EvalConfig, EvalMode, EvalReport, ExtractivePolicy, SplitKey,
};
use litsearch::grpo::{PolicyCheckpoint, TabularSoftmaxPolicy};
use litsearch::protocol::RetrievedDoc;
use litsearch::retrieval::{HttpRetriever, Limits, RetrievalError, Retriever, RunningService, SearchEngine};
use litsearch::rollout::toy::{toy_policy, train_toy, PlantedEnv, ToyAgent};
use litsearch::rollout::{run_group, HttpPolicyClient, PolicyClient};

use config::{FileConfig, PolicyKind};

/// Literature-search agent toolkit: corpus, BM25 service, data generation,
/// rollouts, toy GRPO training and evaluation.
#[derive(Parser)]
#[command(name = "litsearch", version)]
struct Cli {
    /// TOML config file. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus store operations.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// BM25 index operations.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Serve `/retrieve` and `/health` over HTTP in the foreground.
    Serve(ServeArgs),
    /// QA dataset generation.
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// Roll out one group of episodes for a single question.
    Rollout(RolloutArgs),
    /// Train the tabular toy agent with GRPO on a planted environment.
    TrainToy(TrainToyArgs),
    /// Evaluate a policy on a QA dataset.
    Eval(EvalArgs),
    /// Print accuracy tables for a saved eval report.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Validate a line-delimited corpus file and write a canonical store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Build a BM25 index from a corpus file or store.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Prebuilt index; built in memory from the corpus when omitted.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, env = "LITSEARCH_BIND")]
    bind: Option<String>,
    #[arg(long)]
    default_topk: Option<usize>,
    #[arg(long)]
    max_topk: Option<usize>,
    #[arg(long)]
    max_batch: Option<usize>,
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Generate, filter and paraphrase QA pairs from sampled abstracts.
    Run(DatagenRunArgs),
    /// Write a synthetic planted-answer corpus and dataset.
    Planted {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        planted: usize,
        #[arg(long, default_value_t = 150)]
        distractors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DatagenRunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_abstracts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paraphrase_fraction: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Recorded completions (JSONL) to play back instead of calling a model.
    #[arg(long, conflicts_with = "llm_endpoint")]
    fixture: Option<PathBuf>,
    #[arg(long, env = "LITSEARCH_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    #[arg(long, env = "LITSEARCH_LLM_API_KEY", hide_env_values = true)]
    llm_api_key: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieverArgs {
    /// Base URL of a running retrieval service.
    #[arg(long, env = "LITSEARCH_RETRIEVER_URL")]
    retriever_url: Option<String>,
    /// Search this corpus in-process instead of calling a service.
    #[arg(long, conflicts_with = "retriever_url")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    index: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    #[arg(long, env = "LITSEARCH_POLICY_ENDPOINT")]
    policy_endpoint: Option<String>,
    #[arg(long, env = "LITSEARCH_POLICY_API_KEY", hide_env_values = true)]
    policy_api_key: Option<String>,
    #[arg(long)]
    policy_model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Toy checkpoint for `--policy toy`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to the first sample in the file.
    #[arg(long)]
    sample_id: Option<String>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the group as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    retriever: RetrieverArgs,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Seed of the planted environment.
    #[arg(long)]
    env_seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Training report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    mode: Option<EvalModeArg>,
    #[arg(long)]
    dataset: PathBuf,
    /// Documents per retrieval; required for rag and agent.
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Directory for report.json, report.txt and traces/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    retriever: RetrieverArgs,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EvalModeArg {
    Direct,
    Cot,
    Rag,
    Agent,
}

impl From<EvalModeArg> for EvalMode {
    fn from(m: EvalModeArg) -> Self {
        match m {
            EvalModeArg::Direct => EvalMode::Direct,
            EvalModeArg::Cot => EvalMode::Cot,
            EvalModeArg::Rag => EvalMode::Rag,
            EvalModeArg::Agent => EvalMode::Agent,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Split keys to tabulate; both when omitted.
    #[arg(long, value_enum)]
    split: Vec<SplitArg>,
    /// Print split tables as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Category,
    Paraphrased,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn log_resolved<T: Serialize>(command: &str, resolved: &T) {
    match serde_json::to_string(resolved) {
        Ok(json) => log::info!("{command} resolved config: {json}"),
        Err(e) => log::warn!("{command}: cannot serialize resolved config: {e}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref()).context("config")?;
    match cli.command {
        Command::Corpus(CorpusCmd::Ingest { input, out }) => corpus_ingest(&input, &out),
        Command::Index(IndexCmd::Build { corpus, out, k1, b }) => {
            let params = Bm25Params { k1: k1.unwrap_or(file.index.k1), b: b.unwrap_or(file.index.b) };
            index_build(&corpus, &out, params)
        }
        Command::Serve(args) => serve(args, &file),
        Command::Datagen(DatagenCmd::Run(args)) => datagen_run(args, &file),
        Command::Datagen(DatagenCmd::Planted { out, planted, distractors, seed }) => {
            datagen_planted(&out, planted, distractors, seed)
        }
        Command::Rollout(args) => rollout(args, &file),
        Command::TrainToy(args) => train(args, &file),
        Command::Eval(args) => eval(args, &file),
        Command::Report(args) => report(args),
    }
}

fn corpus_ingest(input: &Path, out: &Path) -> Result<()> {
    log_resolved("corpus ingest", &serde_json::json!({ "input": input, "out": out }));
    let store = CorpusStore::ingest(input, out).context("corpus ingest")?;
    println!("ingested {} documents into {} (avgdl {:.3})", store.len(), out.display(), store.handle().avgdl);
    Ok(())
}

fn index_build(corpus: &Path, out: &Path, params: Bm25Params) -> Result<()> {
    log_resolved("index build", &serde_json::json!({ "corpus": corpus, "out": out, "params": params }));
    let store = CorpusStore::open_any(corpus).context("index build: loading corpus")?;
    let index = Index::from_corpus(&store, params).context("index build")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("index build: creating {}", parent.display()))?;
    }
    index.save(out).context("index build: saving")?;
    println!(
        "indexed {} documents, {} terms, avgdl {:.3} -> {}",
        index.doc_count(),
        index.vocabulary_size(),
        index.avgdl(),
        out.display()
    );
    Ok(())
}

fn load_engine(corpus: &Path, index: Option<&Path>, params: Bm25Params, stage: &str) -> Result<SearchEngine> {
    let store = CorpusStore::open_any(corpus).with_context(|| format!("{stage}: loading corpus"))?;
    let index = match index {
        Some(path) => Index::load(path).with_context(|| format!("{stage}: loading index"))?,
        None => Index::from_corpus(&store, params).with_context(|| format!("{stage}: building index"))?,
    };
    SearchEngine::new(index, store).with_context(|| format!("{stage}: index does not match corpus"))
}

fn serve(args: ServeArgs, file: &FileConfig) -> Result<()> {
    let defaults = &file.serve.limits;
    let limits = Limits {
        default_topk: args.default_topk.unwrap_or(defaults.default_topk),
        max_topk: args.max_topk.unwrap_or(defaults.max_topk),
        max_batch: args.max_batch.unwrap_or(defaults.max_batch),
    };
    let bind = args.bind.unwrap_or_else(|| file.serve.bind.clone());
    log_resolved(
        "serve",
        &serde_json::json!({ "corpus": args.corpus, "index": args.index, "bind": bind, "limits": limits }),
    );
    let engine = load_engine(&args.corpus, args.index.as_deref(), file.index, "serve")?;
    let service = RunningService::start(Arc::new(engine), limits, &bind).context("serve")?;
    println!("listening on {}", service.url());
    std::io::stdout().flush().ok();
    service.wait().context("serve")
}

fn datagen_run(args: DatagenRunArgs, file: &FileConfig) -> Result<()> {
    let section = &file.datagen;
    let prompts_dir = args.prompts_dir.or_else(|| section.prompts_dir.clone());
    let prompts = match &prompts_dir {
        Some(dir) => PromptSet::from_dir(dir).context("datagen: loading prompts")?,
        None => PromptSet::default(),
    };
    let config = PipelineConfig {
        paraphrase_fraction: args.paraphrase_fraction.unwrap_or(section.paraphrase_fraction),
        seed: args.seed.unwrap_or(section.seed),
        max_in_flight: args.max_in_flight.unwrap_or(section.max_in_flight),
        filter: section.filter.clone(),
        prompts,
    };
    let n_abstracts = args.n_abstracts.unwrap_or(section.n_abstracts);
    let endpoint = args.llm_endpoint.or_else(|| file.endpoints.llm.clone());
    let model = args.llm_model.unwrap_or_else(|| section.model.clone());
    log_resolved(
        "datagen run",
        &serde_json::json!({
            "corpus": args.corpus, "out": args.out, "n_abstracts": n_abstracts, "pipeline": config,
            "prompts_dir": prompts_dir, "fixture": args.fixture, "llm_endpoint": endpoint, "llm_model": model,
            "llm_api_key": args.llm_api_key.as_ref().map(|_| "<set>"),
        }),
    );

    let llm: Box<dyn LlmClient> = match (&args.fixture, endpoint) {
        (Some(path), _) => Box::new(FixtureLlm::load(path).context("datagen: loading fixture")?),
        (None, Some(endpoint)) => Box::new(
            HttpLlm::new(&endpoint, model, args.llm_api_key, Duration::from_secs(section.timeout_secs))
                .with_temperature(section.temperature),
        ),
        (None, None) => bail!("datagen: no LLM configured (pass --fixture or --llm-endpoint)"),
    };
    let corpus = CorpusStore::open_any(&args.corpus).context("datagen: loading corpus")?;
    let output = run_pipeline(&corpus, n_abstracts, llm.as_ref(), &config).context("datagen")?;
    output.write(&args.out).context("datagen: writing output")?;
    let s = &output.stats;
    println!(
        "abstracts {} (failed {}), candidates {}, accepted {}, paraphrased {}/{} -> {}",
        s.abstracts_sampled,
        s.abstracts_failed,
        s.candidates,
        s.accepted,
        s.paraphrased,
        s.paraphrase_attempted,
        args.out.display()
    );
    Ok(())
}

fn datagen_planted(out: &Path, planted: usize, distractors: usize, seed: u64) -> Result<()> {
    log_resolved(
        "datagen planted",
        &serde_json::json!({ "out": out, "planted": planted, "distractors": distractors, "seed": seed }),
    );
    if planted == 0 {
        bail!("datagen planted: --planted must be positive");
    }
    let env = PlantedEnv::generate(planted, distractors, seed);
    std::fs::create_dir_all(out).with_context(|| format!("datagen planted: creating {}", out.display()))?;
    let mut corpus = String::new();
    for d in env.corpus.documents() {
        corpus += &serde_json::to_string(&serde_json::json!({ "id": d.id, "title": d.title, "text": d.body }))?;
        corpus.push('\n');
    }
    std::fs::write(out.join("corpus.jsonl"), corpus).context("datagen planted: writing corpus")?;
    write_qa_dataset(&out.join("dataset.jsonl"), &env.dataset).context("datagen planted: writing dataset")?;
    println!("{} documents, {} questions -> {}", env.corpus.len(), env.dataset.len(), out.display());
    Ok(())
}

fn build_retriever(args: &RetrieverArgs, file: &FileConfig, stage: &str) -> Result<Box<dyn Retriever>> {
    if let Some(corpus) = &args.corpus {
        return Ok(Box::new(load_engine(corpus, args.index.as_deref(), file.index, stage)?));
    }
    match args.retriever_url.clone().or_else(|| file.endpoints.retriever.clone()) {
        Some(url) => Ok(Box::new(HttpRetriever::new(&url, Duration::from_secs(60)))),
        None => bail!("{stage}: no retriever configured (pass --retriever-url or --corpus)"),
    }
}

enum LoadedPolicy {
    Http(HttpPolicyClient),
    Extractive(ExtractivePolicy),
    Unknown(ConstantPolicy),
    Toy(TabularSoftmaxPolicy),
}

impl LoadedPolicy {
    fn with_client<R>(&self, f: impl FnOnce(&dyn PolicyClient) -> R) -> R {
        match self {
            LoadedPolicy::Http(p) => f(p),
            LoadedPolicy::Extractive(p) => f(p),
            LoadedPolicy::Unknown(p) => f(p),
            LoadedPolicy::Toy(p) => f(&ToyAgent::greedy(p)),
        }
    }
}

#[derive(Serialize)]
struct ResolvedPolicy {
    kind: PolicyKind,
    endpoint: Option<String>,
    model: String,
    temperature: f64,
    checkpoint: Option<PathBuf>,
    api_key: Option<&'static str>,
}

fn resolve_policy(args: PolicyArgs, file: &FileConfig, stage: &str) -> Result<(ResolvedPolicy, LoadedPolicy)> {
    let section = &file.policy;
    let resolved = ResolvedPolicy {
        kind: args.policy.unwrap_or(section.kind),
        endpoint: args.policy_endpoint.or_else(|| file.endpoints.policy.clone()),
        model: args.policy_model.unwrap_or_else(|| section.model.clone()),
        temperature: args.temperature.unwrap_or(section.temperature),
        checkpoint: args.checkpoint.or_else(|| section.checkpoint.clone()),
        api_key: args.policy_api_key.as_ref().map(|_| "<set>"),
    };
    let loaded = match resolved.kind {
        PolicyKind::Http => {
            let Some(endpoint) = &resolved.endpoint else {
                bail!("{stage}: --policy http needs --policy-endpoint");
            };
            LoadedPolicy::Http(
                HttpPolicyClient::new(endpoint, resolved.model.clone(), Duration::from_secs(section.timeout_secs))
                    .with_bearer(args.policy_api_key)
                    .with_temperature(resolved.temperature),
            )
        }
        PolicyKind::Extractive => LoadedPolicy::Extractive(ExtractivePolicy::default()),
        PolicyKind::Unknown => LoadedPolicy::Unknown(ConstantPolicy::new("unknown")),
        PolicyKind::Toy => {
            let Some(path) = &resolved.checkpoint else {
                bail!("{stage}: --policy toy needs --checkpoint");
            };
            LoadedPolicy::Toy(
                PolicyCheckpoint::load(path).with_context(|| format!("{stage}: loading checkpoint"))?.policy,
            )
        }
    };
    Ok((resolved, loaded))
}

fn load_dataset(path: &Path, stage: &str) -> Result<Vec<QASample>> {
    load_qa_dataset(path).with_context(|| format!("{stage}: loading dataset {}", path.display()))
}

fn rollout(args: RolloutArgs, file: &FileConfig) -> Result<()> {
    let mut section = file.rollout.clone();
    if let Some(k) = args.topk {
        section.engine.topk = k;
    }
    section.seed = args.seed.unwrap_or(section.seed);
    section.group_size = args.group_size.unwrap_or(section.group_size);
    let (policy_cfg, policy) = resolve_policy(args.policy, file, "rollout")?;
    log_resolved(
        "rollout",
        &serde_json::json!({
            "dataset": args.dataset, "sample_id": args.sample_id, "rollout": section, "policy": policy_cfg,
            "retriever_url": args.retriever.retriever_url, "corpus": args.retriever.corpus, "index": args.retriever.index,
        }),
    );
    let dataset = load_dataset(&args.dataset, "rollout")?;
    let sample = match &args.sample_id {
        Some(id) => dataset.iter().find(|s| &s.id == id).with_context(|| format!("rollout: no sample `{id}`"))?,
        None => dataset.first().context("rollout: dataset is empty")?,
    };
    let retriever = build_retriever(&args.retriever, file, "rollout")?;
    let group = policy
        .with_client(|p| {
            run_group(p, retriever.as_ref(), sample, section.group_size, &section.engine, section.adv_eps, section.seed)
        })
        .context("rollout")?;
    let json = serde_json::to_string_pretty(&group)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, json + "\n").with_context(|| format!("rollout: writing {}", path.display()))?
        }
        None => println!("{json}"),
    }
    for (i, ep) in group.episodes.iter().enumerate() {
        eprintln!(
            "episode {i}: {} reward {} advantage {:+.4} retrievals {}",
            ep.terminal(),
            ep.reward(),
            group.advantages[i],
            ep.retrievals.len()
        );
    }
    Ok(())
}

fn train(args: TrainToyArgs, file: &FileConfig) -> Result<()> {
    let mut section = file.train_toy.clone();
    section.seed = args.seed.unwrap_or(section.seed);
    section.steps = args.steps.unwrap_or(section.steps);
    section.env_seed = args.env_seed.unwrap_or(section.env_seed);
    if let Some(lr) = args.learning_rate {
        section.train.learning_rate = lr;
    }
    log_resolved(
        "train-toy",
        &serde_json::json!({ "train_toy": section, "out": args.out, "checkpoint": args.checkpoint }),
    );
    let env = PlantedEnv::generate(section.planted, section.distractors, section.env_seed);
    let engine = env.engine();
    let (policy, report) =
        train_toy(toy_policy(section.context_len), &env.dataset, &engine, &section.train, section.steps, section.seed)
            .context("train-toy")?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, json + "\n").with_context(|| format!("train-toy: writing {}", path.display()))?
        }
        None => println!("{json}"),
    }
    if let Some(path) = &args.checkpoint {
        PolicyCheckpoint::new(policy, section.steps as u64, section.seed)
            .save(path)
            .context("train-toy: saving checkpoint")?;
    }
    eprintln!(
        "mean reward {:.4} -> {:.4} over {} steps (first step >= 0.8: {})",
        report.initial_reward,
        report.final_reward,
        report.steps,
        report.first_step_reaching(0.8).map_or_else(|| "never".to_string(), |s| s.to_string())
    );
    Ok(())
}

fn eval(args: EvalArgs, file: &FileConfig) -> Result<()> {
    let section = &file.eval;
    let Some(mode) = args.mode.map(EvalMode::from).or(section.mode) else {
        Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, "eval needs --mode").exit();
    };
    let config = EvalConfig {
        topk: args.topk.or(section.harness.topk),
        max_in_flight: args.max_in_flight.unwrap_or(section.harness.max_in_flight),
        ..section.harness.clone()
    };
    if mode.needs_retrieval() && config.topk.is_none() {
        Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, format!("eval --mode {mode} requires --topk"))
            .exit();
    }
    let seed = args.seed.unwrap_or(section.seed);
    let (policy_cfg, policy) = resolve_policy(args.policy, file, "eval")?;
    log_resolved(
        "eval",
        &serde_json::json!({
            "mode": mode, "seed": seed, "dataset": args.dataset, "out": args.out, "harness": config,
            "policy": policy_cfg, "retriever_url": args.retriever.retriever_url, "corpus": args.retriever.corpus,
            "index": args.retriever.index,
        }),
    );
    let dataset = load_dataset(&args.dataset, "eval")?;
    let retriever: Box<dyn Retriever> =
        if mode.needs_retrieval() { build_retriever(&args.retriever, file, "eval")? } else { Box::new(NoRetriever) };
    let report =
        policy.with_client(|p| run_eval(mode, &dataset, p, retriever.as_ref(), &config, seed)).context("eval")?;
    let text = render_report(&report, &[SplitKey::Category, SplitKey::Paraphrased]);
    print!("{text}");
    if let Some(dir) = &args.out {
        report.save(&dir.join("report.json")).context("eval: saving report")?;
        std::fs::write(dir.join("report.txt"), &text).context("eval: writing report.txt")?;
        let traces = dump_traces(&report, &dir.join("traces")).context("eval: writing traces")?;
        eprintln!("wrote report and {} traces to {}", traces.len(), dir.display());
    }
    Ok(())
}

/// Stand-in for modes that never retrieve.
struct NoRetriever;

impl Retriever for NoRetriever {
    fn retrieve(
        &self,
        _queries: &[String],
        _topk: usize,
    ) -> std::result::Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        Err(RetrievalError::InvalidRequest("no retriever configured for this mode".into()))
    }
}

fn render_report(report: &EvalReport, keys: &[SplitKey]) -> String {
    let mut out = report.render_table();
    for &key in keys {
        out.push('\n');
        out += &split_report(report, key).render();
    }
    out
}

fn report(args: ReportArgs) -> Result<()> {
    log_resolved("report", &serde_json::json!({ "report": args.report, "json": args.json }));
    let report = EvalReport::load(&args.report).context("report: loading")?;
    let keys: Vec<SplitKey> = if args.split.is_empty() {
        vec![SplitKey::Category, SplitKey::Paraphrased]
    } else {
        args.split
            .iter()
            .map(|s| match s {
                SplitArg::Category => SplitKey::Category,
                SplitArg::Paraphrased => SplitKey::Paraphrased,
            })
            .collect()
    };
    if args.json {
        let tables: Vec<_> = keys.iter().map(|&k| split_report(&report, k)).collect();
        println!("{}", serde_json::to_string_pretty(&tables)?);
    } else {
        print!("{}", render_report(&report, &keys));
    }
    Ok(())
}
