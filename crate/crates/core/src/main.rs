use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use textgraph::corpus::{convert_hotpotqa, convert_musique, read_corpus, read_qa, write_jsonl};
use textgraph::embedding::{Embedder, EmbedderSpec, DEFAULT_DIM};
use textgraph::eval::{results_table, run_eval, sweep, usage_table, EvalConfig, EvalProviders, EvalReport};
use textgraph::exec::Exec;
use textgraph::extraction::{build_kb, BuildConfig, QueryEntityCache, QUERY_CACHE_FILE};
use textgraph::kb::{store, KnowledgeBase};
use textgraph::llm::{LlmClient, LlmSpec};
use textgraph::pipeline::{render_result, Pipeline, PipelineConfig};
use textgraph::provider::RemoteSpec;
use textgraph::synthetic;
use textgraph::tokens::TokenLedger;

#[derive(Parser)]
#[command(name = "textgraph", version, about = "Bidirectional text/graph retrieval over a local knowledge base")]
struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk, extract and embed a corpus into a knowledge base directory.
    BuildKb(BuildArgs),
    /// Retrieve (and by default answer) one question.
    Query(QueryArgs),
    /// Evaluate retrieval, and optionally answers, over a QA file.
    Eval(EvalArgs),
    /// Re-run an evaluation for each value of one hyperparameter.
    Sweep(SweepArgs),
    /// Convert MuSiQue or HotpotQA files into corpus and QA files.
    Convert(ConvertArgs),
    /// Write a synthetic corpus with planted two-hop chains and its fixtures.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

/// Remote providers read their auth token from the environment variable
/// named by `--token-env`; it is never written to disk.
#[derive(Args, Clone)]
struct LlmArgs {
    #[arg(long, value_enum, default_value_t = Backend::Mock)]
    llm: Backend,
    /// Mock fixture directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    llm_endpoint: String,
    #[arg(long, default_value = "gpt-4o-mini")]
    llm_model: String,
    #[arg(long, default_value = "TEXTGRAPH_API_TOKEN")]
    token_env: String,
}

impl LlmArgs {
    fn spec(&self, backend: Backend, fixtures: Option<&Path>) -> Result<LlmSpec> {
        Ok(match backend {
            Backend::Mock => {
                let dir = fixtures.context("--fixtures is required with a mock LLM")?;
                LlmSpec::Mock { fixtures: dir.display().to_string() }
            }
            Backend::Remote => LlmSpec::Remote {
                remote: RemoteSpec {
                    endpoint: self.llm_endpoint.clone(),
                    model: self.llm_model.clone(),
                    token_env: self.token_env.clone(),
                },
                temperature: 0.0,
            },
        })
    }

    fn client(&self) -> Result<Arc<dyn LlmClient>> {
        Ok(self.spec(self.llm, self.fixtures.as_deref())?.build()?)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Mock)]
    embedder: Backend,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value = "https://api.openai.com/v1/embeddings")]
    embed_endpoint: String,
    #[arg(long, default_value = "text-embedding-3-small")]
    embed_model: String,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long, default_value_t = textgraph::extraction::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = textgraph::extraction::DEFAULT_OVERLAP)]
    overlap: usize,
    /// Fail the build when fewer chunks than this fraction extract cleanly.
    #[arg(long, default_value_t = 0.9)]
    min_success_ratio: f64,
}

/// Hyperparameter overrides; unset flags keep their defaults.
#[derive(Args, Clone, Default)]
struct Knobs {
    /// Retrieval settings as JSON (such as the one `synth` writes); flags
    /// below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    k_r: Option<usize>,
    #[arg(long)]
    k_o: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    chunk_top_k: Option<usize>,
    #[arg(long)]
    path_top_k: Option<usize>,
    /// Disable graph-vote re-ranking of text chunks.
    #[arg(long)]
    no_rerank: bool,
    /// Disable orphan-entity bridging.
    #[arg(long)]
    no_bridging: bool,
}

impl Knobs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        let floats = [
            ("alpha", self.alpha),
            ("epsilon", self.epsilon),
            ("gamma", self.gamma),
            ("lambda_e", self.lambda_e),
            ("lambda_r", self.lambda_r),
        ];
        let counts = [
            ("k_r", self.k_r),
            ("k_o", self.k_o),
            ("beam_width", self.beam_width),
            ("depth", self.depth),
            ("max_neighbors", self.max_neighbors),
            ("chunk_top_k", self.chunk_top_k),
            ("path_top_k", self.path_top_k),
        ];
        for (name, v) in floats {
            if let Some(v) = v {
                cfg.set_param(name, v)?;
            }
        }
        for (name, v) in counts {
            if let Some(v) = v {
                cfg.set_param(name, v as f64)?;
            }
        }
        cfg.rerank &= !self.no_rerank;
        cfg.bridging &= !self.no_bridging;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    question: String,
    #[command(flatten)]
    llm: LlmArgs,
    #[command(flatten)]
    knobs: Knobs,
    /// Print the consolidated answer prompt.
    #[arg(long)]
    show_context: bool,
    /// Stop after retrieval.
    #[arg(long)]
    no_generate: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    #[command(flatten)]
    knobs: Knobs,
    /// Generate answers (and judge them when a judge is set).
    #[arg(long)]
    generate: bool,
    #[arg(long, value_enum)]
    judge: Option<Backend>,
    /// Fixture directory for a mock judge; defaults to --fixtures.
    #[arg(long)]
    judge_fixtures: Option<PathBuf>,
    /// JSON report path; the text tables go next to it with a .txt extension.
    #[arg(long)]
    report: PathBuf,
    /// Label for the results table row.
    #[arg(long, default_value = "textgraph")]
    label: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    #[command(flatten)]
    knobs: Knobs,
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Optional JSON file receiving every report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Musique,
    Hotpotqa,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving corpus.jsonl and qa.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worlds of each kind; the QA file holds twice this many questions.
    #[arg(long, default_value_t = 25)]
    per_kind: usize,
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// The embedder a knowledge base was built with, recovered from its settings
/// so queries land in the same vector space.
fn kb_embedder(kb: &KnowledgeBase) -> Result<Arc<dyn Embedder>> {
    let spec = kb
        .settings()
        .pointer("/build/embedder")
        .cloned()
        .context("knowledge base settings do not record an embedder")?;
    let spec: EmbedderSpec = serde_json::from_value(spec).context("reading embedder settings")?;
    Ok(spec.build())
}

struct Loaded {
    kb: KnowledgeBase,
    embedder: Arc<dyn Embedder>,
    cache: QueryEntityCache,
    cache_path: PathBuf,
}

fn load_kb(dir: &Path) -> Result<Loaded> {
    let kb = store::load(dir).with_context(|| format!("loading knowledge base {}", dir.display()))?;
    let embedder = kb_embedder(&kb)?;
    let cache_path = dir.join(QUERY_CACHE_FILE);
    let cache = if cache_path.exists() {
        QueryEntityCache::load(&cache_path)?
    } else {
        QueryEntityCache::new()
    };
    Ok(Loaded { kb, embedder, cache, cache_path })
}

fn build(cli: &Cli, args: &BuildArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let embedder_spec = match args.embedder {
        Backend::Mock => EmbedderSpec::Mock { seed: args.embed_seed, dim: args.dim },
        Backend::Remote => EmbedderSpec::Remote {
            remote: RemoteSpec {
                endpoint: args.embed_endpoint.clone(),
                model: args.embed_model.clone(),
                token_env: args.llm.token_env.clone(),
            },
            dim: args.dim,
        },
    };
    let config = BuildConfig {
        window: args.window,
        overlap: args.overlap,
        embedder: embedder_spec.clone(),
        min_success_ratio: args.min_success_ratio,
        exec: exec(cli),
        ..Default::default()
    };
    let llm = args.llm.client()?;
    let embedder = embedder_spec.build();
    let out = build_kb(&corpus, llm.as_ref(), embedder.as_ref(), &config)?;
    store::save(&out.kb, &args.out)?;
    QueryEntityCache::new().save(args.out.join(QUERY_CACHE_FILE))?;
    let r = &out.report;
    println!(
        "built {} from {} documents: {} chunks ({} failed), {} entities, {} relations",
        args.out.display(),
        r.documents,
        r.chunks_total,
        r.failures.len(),
        out.kb.entity_count(),
        out.kb.relation_count(),
    );
    for f in &r.failures {
        eprintln!("warning: {}: {}", f.chunk_id, f.reason);
    }
    for d in &r.diagnostics {
        log::info!("{d}");
    }
    println!(
        "tokens: embedding {}, prompt {}, completion {}",
        r.usage.embedding_tokens, r.usage.llm_prompt_tokens, r.usage.llm_completion_tokens
    );
    Ok(())
}

fn query(args: &QueryArgs) -> Result<()> {
    let config = args.knobs.config()?;
    let loaded = load_kb(&args.kb)?;
    let llm = args.llm.client()?;
    let ledger = TokenLedger::new();
    let pipeline = Pipeline {
        kb: &loaded.kb,
        embedder: loaded.embedder.as_ref(),
        llm: llm.as_ref(),
        cache: &loaded.cache,
        ledger: &ledger,
        config,
    };
    println!("config: {}", serde_json::to_string(&config)?);
    let result = pipeline.retrieve(&args.question)?;
    print!("{}", render_result(&result));
    if args.show_context || !args.no_generate {
        let context = pipeline.consolidate(&result)?;
        if args.show_context {
            println!("--- context");
            println!("{context}");
        }
        if !args.no_generate {
            println!("--- answer");
            println!("{}", pipeline.generate(&context)?);
        }
    }
    let u = ledger.snapshot();
    println!(
        "tokens: embedding {}, prompt {}, completion {}",
        u.embedding_tokens, u.llm_prompt_tokens, u.llm_completion_tokens
    );
    loaded.cache.save(&loaded.cache_path)?;
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let pipeline = args.knobs.config()?;
    let loaded = load_kb(&args.kb)?;
    let items = read_qa(&args.qa)?;
    let llm = args.llm.client()?;
    let judge: Option<Arc<dyn LlmClient>> = match args.judge {
        None => None,
        Some(backend) => {
            let dir = args.judge_fixtures.as_deref().or(args.llm.fixtures.as_deref());
            Some(args.llm.spec(backend, dir)?.build()?)
        }
    };
    if judge.is_some() && !args.generate {
        bail!("--judge needs --generate");
    }
    let providers = EvalProviders {
        embedder: loaded.embedder.as_ref(),
        llm: llm.as_ref(),
        judge: judge.as_deref(),
        cache: &loaded.cache,
    };
    let config = EvalConfig { pipeline, generate: args.generate, exec: exec(cli) };
    let report = run_eval(&loaded.kb, &providers, &items, &config, &args.label)?;
    write_json(&args.report, &report)?;
    let tables = format!("{}\n{}", results_table(&[&report]), usage_table(&[&report]));
    write_text(&args.report.with_extension("txt"), &tables)?;
    println!("config: {}", serde_json::to_string(&pipeline)?);
    print!("{tables}");
    loaded.cache.save(&loaded.cache_path)?;
    Ok(())
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let base = args.knobs.config()?;
    let loaded = load_kb(&args.kb)?;
    let items = read_qa(&args.qa)?;
    let llm = args.llm.client()?;
    let providers = EvalProviders {
        embedder: loaded.embedder.as_ref(),
        llm: llm.as_ref(),
        judge: None,
        cache: &loaded.cache,
    };
    let config = EvalConfig { pipeline: base, generate: false, exec: exec(cli) };
    let reports: Vec<EvalReport> = sweep(&loaded.kb, &providers, &items, &config, &args.param, &args.values)?;
    let refs: Vec<&EvalReport> = reports.iter().collect();
    println!("config: {}", serde_json::to_string(&base)?);
    print!("{}", results_table(&refs));
    if let Some(path) = &args.report {
        write_json(path, &reports)?;
    }
    loaded.cache.save(&loaded.cache_path)?;
    Ok(())
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let converted = match args.format {
        Format::Musique => convert_musique(&args.input)?,
        Format::Hotpotqa => convert_hotpotqa(&args.input)?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_jsonl(args.out.join("corpus.jsonl"), &converted.docs)?;
    write_jsonl(args.out.join("qa.jsonl"), &converted.items)?;
    println!("{} documents, {} questions", converted.docs.len(), converted.items.len());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let set = synthetic::generate(args.seed, args.per_kind);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    set.write_dir(&args.out, &BuildConfig::default())?;
    write_json(&args.out.join("config.json"), &synthetic::ablation_config())?;
    println!(
        "{} documents, {} questions; suggested retrieval settings in config.json",
        set.corpus.len(),
        set.items.len()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::BuildKb(a) => build(&cli, a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(&cli, a),
        Command::Sweep(a) => run_sweep(&cli, a),
        Command::Convert(a) => convert(a),
        Command::Synth(a) => synth(a),
    }
}
