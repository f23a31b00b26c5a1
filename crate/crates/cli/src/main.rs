//! `ctxtrim` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input,
//! 3 attention provider unreachable.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ctxtrim::attention::{AttentionProvider, CacheStats, MockProvider};
use ctxtrim::doc::{read_corpus, BudgetSpec, TokenizedDocument, Tokenizer, WhitespaceTokenizer};
use ctxtrim::embed::{Embedder, StubEmbedder};
use ctxtrim::harness::{
    bench_attention, bench_rag, read_workload, resolve_pools, trim_workload, write_csv, BenchConfig, Method,
    TrimOutput, TrimSettings, WorkloadRecord,
};
use ctxtrim::par::{self, Parallelism};
use ctxtrim::relevance::{compute_relevance_map, RelevanceConfig, Strategy, DEFAULT_CHUNK_SIZE};
use ctxtrim::retrieval::{DEFAULT_CHUNK_LEN, DEFAULT_OVERLAP};
use ctxtrim::synth::{planted_corpus, PlantConfig};
use ctxtrim::table::{format_row_usage, mean_row_usage, score_rows, select_rows, serialize_table, Table, DEFAULT_TOP_K};
use ctxtrim::{Error, SidecarClient};

use config::{FileConfig, UsageError, DEFAULT_BENCH_BUDGETS, DEFAULT_BENCH_TOP_KS, DEFAULT_BUDGET, DEFAULT_SIDECAR_URL};

#[derive(Parser)]
#[command(name = "ctxtrim", version, about = "Budget-constrained context reduction for long documents")]
struct Cli {
    /// TOML settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce documents to a token budget for each question.
    Trim(TrimArgs),
    /// Compare attention selection and chunk retrieval over budget sweeps (CSV).
    Bench(BenchArgs),
    /// Keep the most relevant rows of a JSON table.
    Table(TableArgs),
    /// Build relevance maps for a workload and print provider cache counters.
    CacheStats(CacheStatsArgs),
    /// Write a seeded planted-evidence corpus and workload.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Sidecar,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    sidecar_url: Option<String>,
    /// Tokens per scoring chunk.
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Fixes all randomness and omits wall-clock timings from reports.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    window_ratio: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    smooth_radius: Option<usize>,
    /// raw, fixed or farthest.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct InputArgs {
    /// JSONL of {"doc_id","text"}, or a plain text file.
    #[arg(long)]
    corpus: PathBuf,
    /// JSONL of {"doc_id","question","pool","gold_span"}.
    #[arg(long, conflicts_with = "query", required_unless_present = "query")]
    workload: Option<PathBuf>,
    #[arg(long)]
    query: Option<String>,
    /// Restrict --query to one document.
    #[arg(long, requires = "query")]
    doc_id: Option<String>,
}

#[derive(Args)]
struct TrimArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    select: SelectArgs,
    /// Fraction of document tokens to keep.
    #[arg(long)]
    budget: Option<f64>,
    /// Directory for reduced contexts and report.jsonl; reports go to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// attention (alias sage), rag, or all.
    #[arg(long, default_value = "all")]
    method: String,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    select: SelectArgs,
    /// Budgets to sweep, comma separated.
    #[arg(long = "budget", value_delimiter = ',')]
    budgets: Vec<f64>,
    /// Retrieval depths to sweep, comma separated.
    #[arg(long = "top-k", value_delimiter = ',')]
    top_ks: Vec<usize>,
    #[arg(long)]
    rag_chunk_len: Option<usize>,
    #[arg(long)]
    rag_overlap: Option<usize>,
    /// CSV destination; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// JSON file of {"headers": [...], "rows": [[...], ...]}.
    #[arg(long)]
    table: PathBuf,
    /// Question; repeat to run several against the same table.
    #[arg(long, required = true)]
    query: Vec<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// JSONL destination; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CacheStatsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    doc_len: usize,
    #[arg(long, default_value_t = 100)]
    evidence_len: usize,
    #[arg(long, default_value_t = 0)]
    header_len: usize,
    /// Directory receiving corpus.jsonl and workload.jsonl.
    #[arg(long)]
    out: PathBuf,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_strategy(flag: Option<String>, cfg: &FileConfig) -> Result<Strategy> {
    match flag.or_else(|| cfg.strategy.clone()) {
        Some(s) => Ok(s.parse()?),
        None => Ok(Strategy::default()),
    }
}

fn budget_spec(budget: f64, select: &SelectArgs, cfg: &FileConfig) -> Result<BudgetSpec> {
    Ok(BudgetSpec::new(
        budget,
        pick(select.window_ratio, cfg.window_ratio, BudgetSpec::DEFAULT_WINDOW_RATIO),
        pick(select.stride, cfg.stride, BudgetSpec::DEFAULT_STRIDE),
        pick(select.smooth_radius, cfg.smooth_radius, BudgetSpec::DEFAULT_SMOOTHING_RADIUS),
    )?)
}

enum Backend {
    Mock { provider: MockProvider, embedder: StubEmbedder },
    Sidecar(SidecarClient),
}

impl Backend {
    fn open(args: &ProviderArgs, cfg: &FileConfig) -> Result<Self> {
        let from_file = match cfg.provider.as_deref() {
            Some(s) => Some(ProviderKind::from_str(s, true).map_err(|_| usage(format!("unknown provider {s:?}")))?),
            None => None,
        };
        match pick(args.provider, from_file, ProviderKind::Mock) {
            ProviderKind::Mock => Ok(Backend::Mock {
                provider: MockProvider::new(),
                embedder: StubEmbedder::default(),
            }),
            ProviderKind::Sidecar => {
                let url = pick(args.sidecar_url.clone(), cfg.sidecar_url.clone(), DEFAULT_SIDECAR_URL.to_string());
                let client = SidecarClient::new(url);
                client.healthz()?;
                Ok(Backend::Sidecar(client))
            }
        }
    }

    fn provider(&self) -> &dyn AttentionProvider {
        match self {
            Backend::Mock { provider, .. } => provider,
            Backend::Sidecar(c) => c,
        }
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        match self {
            Backend::Mock { .. } => &WhitespaceTokenizer,
            Backend::Sidecar(c) => c,
        }
    }

    fn embedder(&self) -> &dyn Embedder {
        match self {
            Backend::Mock { embedder, .. } => embedder,
            Backend::Sidecar(c) => c,
        }
    }

    fn cache_stats(&self) -> CacheStats {
        self.provider().cache_stats()
    }
}

fn relevance_config(args: &ProviderArgs, cfg: &FileConfig) -> RelevanceConfig {
    RelevanceConfig {
        chunk_size: pick(args.chunk_size, cfg.chunk_size, DEFAULT_CHUNK_SIZE),
        parallelism: Parallelism::available(),
    }
}

fn input_error(e: io::Error, path: &Path) -> anyhow::Error {
    if e.kind() == io::ErrorKind::InvalidData {
        usage(e.to_string())
    } else {
        anyhow::Error::new(e).context(format!("reading {}", path.display()))
    }
}

fn load_docs(path: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<TokenizedDocument>> {
    let raw = read_corpus(path).map_err(|e| input_error(e, path))?;
    let mut seen = HashSet::new();
    for d in &raw {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(usage(format!("duplicate doc_id {:?} in {}", d.doc_id, path.display())));
        }
    }
    let docs = par::try_map_slice(&raw, Parallelism::available(), |d| {
        TokenizedDocument::from_text(d.doc_id.clone(), d.text.clone(), tokenizer)
    })?;
    Ok(docs)
}

fn load_workload(input: &InputArgs, docs: &[TokenizedDocument]) -> Result<Vec<WorkloadRecord>> {
    let mut records = match (&input.workload, &input.query) {
        (Some(path), _) => read_workload(path).map_err(|e| input_error(e, path))?,
        (None, Some(q)) => docs
            .iter()
            .filter(|d| input.doc_id.as_deref().is_none_or(|id| id == d.doc_id()))
            .map(|d| WorkloadRecord {
                doc_id: d.doc_id().to_string(),
                question: q.clone(),
                gold_answer: None,
                pool: Vec::new(),
                gold_span: None,
            })
            .collect(),
        (None, None) => unreachable!("clap requires --workload or --query"),
    };
    let known: HashSet<&str> = docs.iter().map(|d| d.doc_id()).collect();
    if let Some(id) = &input.doc_id {
        if !known.contains(id.as_str()) {
            return Err(usage(format!("unknown doc_id {id:?}")));
        }
    }
    if let Some(r) = records.iter().find(|r| !known.contains(r.doc_id.as_str())) {
        return Err(usage(format!("workload references unknown doc_id {:?}", r.doc_id)));
    }
    resolve_pools(&mut records);
    Ok(records)
}

/// Writes through a temporary sibling file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn file_stem_for(doc_id: &str) -> String {
    doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn report_lines(outputs: &[TrimOutput]) -> Result<String> {
    let mut s = String::new();
    for o in outputs {
        s.push_str(&serde_json::to_string(&o.report)?);
        s.push('\n');
    }
    Ok(s)
}

fn cmd_trim(args: TrimArgs, cfg: &FileConfig) -> Result<()> {
    let strategy = parse_strategy(args.select.strategy.clone(), cfg)?;
    let budget = budget_spec(pick(args.budget, cfg.budget, DEFAULT_BUDGET), &args.select, cfg)?;
    let seed = args.provider.seed.or(cfg.seed);
    let backend = Backend::open(&args.provider, cfg)?;
    let docs = load_docs(&args.input.corpus, backend.tokenizer())?;
    let workload = load_workload(&args.input, &docs)?;
    let relevance = relevance_config(&args.provider, cfg);
    let settings = TrimSettings {
        budget,
        strategy,
        chunk_size: relevance.chunk_size,
        parallelism: relevance.parallelism,
        record_timing: seed.is_none(),
    };
    let outputs = trim_workload(&docs, &workload, &settings, backend.provider(), backend.embedder())?;

    let Some(dir) = args.out else {
        io::stdout().write_all(report_lines(&outputs)?.as_bytes())?;
        return Ok(());
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut per_doc: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for o in &outputs {
        per_doc.entry(&o.report.doc_id).or_default().push(o.render());
    }
    for (doc_id, sections) in &per_doc {
        let path = dir.join(format!("{}.txt", file_stem_for(doc_id)));
        write_atomic(&path, sections.join("\n\n").as_bytes())?;
    }
    write_atomic(&dir.join("report.jsonl"), report_lines(&outputs)?.as_bytes())?;
    log::info!("wrote {} reduced contexts to {}", outputs.len(), dir.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs, cfg: &FileConfig) -> Result<()> {
    let methods: Vec<Method> = match args.method.to_ascii_lowercase().as_str() {
        "all" => vec![Method::Attention, Method::Rag],
        other => vec![other.parse()?],
    };
    let budgets = if !args.budgets.is_empty() {
        args.budgets.clone()
    } else {
        cfg.budgets.clone().unwrap_or_else(|| DEFAULT_BENCH_BUDGETS.to_vec())
    };
    let top_ks = if !args.top_ks.is_empty() {
        args.top_ks.clone()
    } else {
        cfg.top_ks.clone().unwrap_or_else(|| DEFAULT_BENCH_TOP_KS.to_vec())
    };
    // Validate every budget up front so a bad sweep fails before any work.
    for &b in &budgets {
        budget_spec(b, &args.select, cfg)?;
    }
    let relevance = relevance_config(&args.provider, cfg);
    let bench = BenchConfig {
        budgets,
        top_ks,
        strategy: parse_strategy(args.select.strategy.clone(), cfg)?,
        window_ratio: pick(args.select.window_ratio, cfg.window_ratio, BudgetSpec::DEFAULT_WINDOW_RATIO),
        stride: pick(args.select.stride, cfg.stride, BudgetSpec::DEFAULT_STRIDE),
        smoothing_radius: pick(args.select.smooth_radius, cfg.smooth_radius, BudgetSpec::DEFAULT_SMOOTHING_RADIUS),
        chunk_size: relevance.chunk_size,
        rag_chunk_len: pick(args.rag_chunk_len, cfg.rag_chunk_len, DEFAULT_CHUNK_LEN),
        rag_overlap: pick(args.rag_overlap, cfg.rag_overlap, DEFAULT_OVERLAP),
        parallelism: relevance.parallelism,
    };
    let backend = Backend::open(&args.provider, cfg)?;
    let docs = load_docs(&args.corpus, backend.tokenizer())?;
    let input = InputArgs {
        corpus: args.corpus.clone(),
        workload: Some(args.workload.clone()),
        query: None,
        doc_id: None,
    };
    let workload = load_workload(&input, &docs)?;
    if workload.is_empty() {
        return Err(usage("workload is empty"));
    }

    let mut rows = Vec::new();
    for m in methods {
        match m {
            Method::Attention => rows.extend(bench_attention(&docs, &workload, &bench, backend.provider(), backend.embedder())?),
            Method::Rag => rows.extend(bench_rag(&docs, &workload, &bench, backend.embedder())?),
        }
    }
    if rows.iter().all(|r| r.evidence_recall.is_none()) {
        log::warn!("workload has no usable gold spans or answers; recall column omitted");
    }
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    match args.out {
        Some(path) => write_atomic(&path, &csv),
        None => Ok(io::stdout().write_all(&csv)?),
    }
}

#[derive(Serialize)]
struct TableResult<'a> {
    table_id: &'a str,
    query: &'a str,
    row_indices: Vec<usize>,
    row_usage: f64,
    table: Table,
}

fn cmd_table(args: TableArgs, cfg: &FileConfig) -> Result<()> {
    let k = pick(args.top_k, cfg.top_k, DEFAULT_TOP_K);
    let text = std::fs::read_to_string(&args.table).with_context(|| format!("reading {}", args.table.display()))?;
    let table: Table = serde_json::from_str(&text)
        .map_err(|e| usage(format!("malformed table {}: {e}", args.table.display())))?;
    let table_id = args
        .table
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".into());
    let backend = Backend::open(&args.provider, cfg)?;
    let doc = serialize_table(table_id.clone(), &table, backend.tokenizer())?;
    let relevance = relevance_config(&args.provider, cfg);

    let mut out = String::new();
    let mut usages = Vec::new();
    for q in &args.query {
        let scores = score_rows(&doc, q, backend.provider(), &relevance)?;
        let sel = select_rows(&table, &scores, k)?;
        usages.push(sel.row_usage);
        out.push_str(&serde_json::to_string(&TableResult {
            table_id: &table_id,
            query: q,
            row_indices: sel.row_indices,
            row_usage: sel.row_usage,
            table: sel.table,
        })?);
        out.push('\n');
    }
    backend.provider().clear_document_cache(&table_id);
    match &args.out {
        Some(path) => write_atomic(path, out.as_bytes())?,
        None => io::stdout().write_all(out.as_bytes())?,
    }
    if let Some(mean) = mean_row_usage(&usages) {
        eprintln!("Avg. Row Usage: {}", format_row_usage(mean));
    }
    Ok(())
}

#[derive(Serialize)]
struct CacheReport {
    maps: usize,
    #[serde(flatten)]
    stats: CacheStats,
}

fn cmd_cache_stats(args: CacheStatsArgs, cfg: &FileConfig) -> Result<()> {
    let strategy = parse_strategy(args.strategy.clone(), cfg)?;
    let backend = Backend::open(&args.provider, cfg)?;
    let docs = load_docs(&args.input.corpus, backend.tokenizer())?;
    let workload = load_workload(&args.input, &docs)?;
    let relevance = relevance_config(&args.provider, cfg);
    for r in &workload {
        let doc = docs.iter().find(|d| d.doc_id() == r.doc_id).expect("validated doc_id");
        compute_relevance_map(doc, &r.question, strategy, &r.pool, backend.provider(), backend.embedder(), &relevance)?;
    }
    let report = CacheReport {
        maps: workload.len(),
        stats: backend.cache_stats(),
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.doc_len < args.header_len + args.evidence_len || args.evidence_len == 0 {
        return Err(usage("--doc-len must cover --header-len plus a non-empty --evidence-len"));
    }
    let cfg = PlantConfig {
        doc_len: args.doc_len,
        evidence_len: args.evidence_len,
        header_len: args.header_len,
        ..PlantConfig::default()
    };
    let corpus = planted_corpus(args.seed, args.count, &cfg);
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut docs = String::new();
    let mut work = String::new();
    for p in &corpus {
        docs.push_str(&serde_json::to_string(&p.raw())?);
        docs.push('\n');
        work.push_str(&serde_json::to_string(&p.workload_record())?);
        work.push('\n');
    }
    write_atomic(&args.out.join("corpus.jsonl"), docs.as_bytes())?;
    write_atomic(&args.out.join("workload.jsonl"), work.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Trim(a) => cmd_trim(a, &cfg),
        Command::Bench(a) => cmd_bench(a, &cfg),
        Command::Table(a) => cmd_table(a, &cfg),
        Command::CacheStats(a) => cmd_cache_stats(a, &cfg),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::ProviderUnavailable(_) => 3,
                Error::InvalidBudget(_)
                | Error::InvalidParameter(_)
                | Error::InvalidQuery(_)
                | Error::InvalidChunk { .. }
                | Error::RaggedTable { .. }
                | Error::EmptyDocument
                | Error::InvalidDocument(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
