//! Workload-level orchestration: trim reports and the method comparison bench.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionProvider;
use crate::doc::{span_char_extents, BudgetSpec, TokenSpan, TokenizedDocument};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::relevance::{compute_relevance_map, RelevanceConfig, Strategy, DEFAULT_CHUNK_SIZE};
use crate::retrieval::{build_chunk_index, retrieve_topk, DEFAULT_CHUNK_LEN, DEFAULT_OVERLAP};
use crate::select::{reduce_context, SpanSelection};

/// One question about one corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub doc_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pool: Vec<String>,
    /// Evidence as a half-open token interval `[start, end]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_span: Option<[usize; 2]>,
}

impl WorkloadRecord {
    pub fn gold(&self) -> Option<TokenSpan> {
        self.gold_span
            .filter(|[s, e]| s < e)
            .map(|[s, e]| TokenSpan::new(s, e))
    }

    /// Evidence tokens in `doc`: the explicit span if given, otherwise the
    /// tokens overlapping the first occurrence of the gold answer.
    pub fn gold_in(&self, doc: &TokenizedDocument) -> Option<TokenSpan> {
        if let Some(span) = self.gold() {
            return (span.end <= doc.len()).then_some(span);
        }
        locate_answer(doc, self.gold_answer.as_deref()?.trim())
    }
}

/// Tokens overlapping the first occurrence of `answer` in the source text.
pub fn locate_answer(doc: &TokenizedDocument, answer: &str) -> Option<TokenSpan> {
    if answer.is_empty() {
        return None;
    }
    let text = doc.source_text();
    let byte = text.find(answer)?;
    let lo = text[..byte].chars().count();
    let hi = lo + answer.chars().count();
    let spans = doc.char_spans();
    let start = spans.partition_point(|s| s.end <= lo);
    let end = spans.partition_point(|s| s.start < hi);
    (start < end).then(|| TokenSpan::new(start, end))
}

pub fn read_workload(path: &Path) -> io::Result<Vec<WorkloadRecord>> {
    let file = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?);
    }
    Ok(out)
}

/// Fills empty pools with the other questions asked about the same document.
pub fn resolve_pools(workload: &mut [WorkloadRecord]) {
    let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in workload.iter() {
        by_doc.entry(r.doc_id.clone()).or_default().push(r.question.clone());
    }
    for r in workload.iter_mut() {
        if r.pool.is_empty() {
            r.pool = by_doc[&r.doc_id]
                .iter()
                .filter(|q| **q != r.question)
                .cloned()
                .collect();
        }
    }
}

/// Groups record indices by document, keeping first-appearance order.
fn group_by_doc(workload: &[WorkloadRecord]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in workload.iter().enumerate() {
        match pos.get(r.doc_id.as_str()) {
            Some(&p) => order[p].1.push(i),
            None => {
                pos.insert(&r.doc_id, order.len());
                order.push((r.doc_id.clone(), vec![i]));
            }
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimSettings {
    pub budget: BudgetSpec,
    pub strategy: Strategy,
    pub chunk_size: usize,
    pub parallelism: Parallelism,
    /// Record wall time in reports; off for byte-reproducible output.
    pub record_timing: bool,
}

impl TrimSettings {
    pub fn new(budget: BudgetSpec, strategy: Strategy) -> Self {
        TrimSettings {
            budget,
            strategy,
            chunk_size: DEFAULT_CHUNK_SIZE,
            parallelism: Parallelism::available(),
            record_timing: true,
        }
    }

    fn relevance_config(&self) -> RelevanceConfig {
        RelevanceConfig {
            chunk_size: self.chunk_size,
            parallelism: self.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpan {
    pub start: usize,
    pub end: usize,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub doc_id: String,
    pub query: String,
    pub strategy: Strategy,
    pub contrast_query: Option<String>,
    pub contrast_fallback: bool,
    pub budget: f64,
    pub doc_tokens: usize,
    pub window_len: usize,
    pub budget_tokens: usize,
    pub selected_tokens: usize,
    pub spans: Vec<ReportSpan>,
    pub cache_hits: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_recall: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

/// A trimmed context and its report.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutput {
    pub report: TrimReport,
    pub selection: SpanSelection,
    pub text: String,
}

impl TrimOutput {
    /// Reduced context preceded by an audit comment line.
    pub fn render(&self) -> String {
        format!(
            "<!-- doc_id={} budget={} strategy={} -->\n{}",
            self.report.doc_id, self.report.budget, self.report.strategy, self.text
        )
    }
}

/// Fraction of `gold` tokens covered by `spans`.
pub fn evidence_recall(spans: &[TokenSpan], gold: TokenSpan) -> f64 {
    let covered: usize = spans
        .iter()
        .map(|s| s.end.min(gold.end).saturating_sub(s.start.max(gold.start)))
        .sum();
    covered as f64 / gold.len() as f64
}

pub fn trim_one(
    doc: &TokenizedDocument,
    record: &WorkloadRecord,
    settings: &TrimSettings,
    provider: &dyn AttentionProvider,
    embedder: &dyn Embedder,
) -> Result<TrimOutput> {
    let started = Instant::now();
    let map = compute_relevance_map(
        doc,
        &record.question,
        settings.strategy,
        &record.pool,
        provider,
        embedder,
        &settings.relevance_config(),
    )?;
    let reduction = reduce_context(doc, &map, &settings.budget, settings.parallelism)?;
    let elapsed = started.elapsed().as_secs_f64() * 1e3;
    let extents = span_char_extents(doc, &reduction.selection.spans)?;
    let spans = reduction
        .selection
        .spans
        .iter()
        .map(|s| {
            let ext = doc.char_extent(*s);
            ReportSpan {
                start: s.start,
                end: s.end,
                char_start: ext.start,
                char_end: ext.end,
            }
        })
        .collect();
    debug_assert!(extents.len() <= reduction.selection.spans.len());
    let report = TrimReport {
        doc_id: doc.doc_id().to_string(),
        query: record.question.clone(),
        strategy: settings.strategy,
        contrast_query: map.contrast_query.clone(),
        contrast_fallback: map.contrast_fallback,
        budget: settings.budget.budget,
        doc_tokens: doc.len(),
        window_len: reduction.window_len,
        budget_tokens: reduction.selection.budget_tokens,
        selected_tokens: reduction.selection.selected_tokens,
        spans,
        cache_hits: map.cache_hits,
        evidence_recall: record
            .gold_in(doc)
            .map(|g| evidence_recall(&reduction.selection.spans, g)),
        wall_time_ms: settings.record_timing.then_some(elapsed),
    };
    Ok(TrimOutput {
        report,
        selection: reduction.selection,
        text: reduction.text,
    })
}

fn find_doc<'a>(docs: &'a [TokenizedDocument], doc_id: &str) -> Result<&'a TokenizedDocument> {
    docs.iter()
        .find(|d| d.doc_id() == doc_id)
        .ok_or_else(|| Error::InvalidParameter(format!("workload references unknown doc_id {doc_id:?}")))
}

/// Trims every record. Documents run concurrently; the questions of one
/// document run in order and its cache is cleared afterwards. Outputs are
/// returned in workload order.
pub fn trim_workload(
    docs: &[TokenizedDocument],
    workload: &[WorkloadRecord],
    settings: &TrimSettings,
    provider: &dyn AttentionProvider,
    embedder: &dyn Embedder,
) -> Result<Vec<TrimOutput>> {
    let groups = group_by_doc(workload);
    let per_doc = par::try_map_slice(&groups, settings.parallelism, |(doc_id, idxs)| {
        let doc = find_doc(docs, doc_id)?;
        let outs = idxs
            .iter()
            .map(|&i| trim_one(doc, &workload[i], settings, provider, embedder).map(|o| (i, o)))
            .collect::<Result<Vec<_>>>();
        provider.clear_document_cache(doc_id);
        outs
    })?;
    let mut flat: Vec<(usize, TrimOutput)> = per_doc.into_iter().flatten().collect();
    flat.sort_by_key(|(i, _)| *i);
    Ok(flat.into_iter().map(|(_, o)| o).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Attention-guided window selection.
    Attention,
    /// Chunk-embedding retrieval.
    Rag,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::Rag => "rag",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" | "sage" => Ok(Method::Attention),
            "rag" => Ok(Method::Rag),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub budgets: Vec<f64>,
    pub top_ks: Vec<usize>,
    pub strategy: Strategy,
    pub window_ratio: f64,
    pub stride: usize,
    pub smoothing_radius: usize,
    pub chunk_size: usize,
    pub rag_chunk_len: usize,
    pub rag_overlap: usize,
    pub parallelism: Parallelism,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            budgets: vec![0.01, 0.05, 0.10],
            top_ks: vec![1, 2, 4],
            strategy: Strategy::default(),
            window_ratio: BudgetSpec::DEFAULT_WINDOW_RATIO,
            stride: BudgetSpec::DEFAULT_STRIDE,
            smoothing_radius: BudgetSpec::DEFAULT_SMOOTHING_RADIUS,
            chunk_size: DEFAULT_CHUNK_SIZE,
            rag_chunk_len: DEFAULT_CHUNK_LEN,
            rag_overlap: DEFAULT_OVERLAP,
            parallelism: Parallelism::available(),
        }
    }
}

/// One CSV row: one method at one budget or depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    /// `b=0.05` or `k=2`.
    pub param: String,
    pub queries: usize,
    pub avg_tokens: f64,
    pub avg_token_fraction: f64,
    pub evidence_recall: Option<f64>,
    pub wall_time_ms: f64,
    pub cache_hits: u64,
}

struct Sample {
    tokens: usize,
    doc_tokens: usize,
    recall: Option<f64>,
    cache_hits: usize,
}

fn aggregate(method: Method, param: String, samples: &[Sample], wall_time_ms: f64) -> BenchRow {
    let n = samples.len().max(1) as f64;
    let recalls: Vec<f64> = samples.iter().filter_map(|s| s.recall).collect();
    BenchRow {
        method,
        param,
        queries: samples.len(),
        avg_tokens: samples.iter().map(|s| s.tokens as f64).sum::<f64>() / n,
        avg_token_fraction: samples
            .iter()
            .map(|s| s.tokens as f64 / s.doc_tokens as f64)
            .sum::<f64>()
            / n,
        evidence_recall: (!recalls.is_empty() && recalls.len() == samples.len())
            .then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
        wall_time_ms,
        cache_hits: samples.iter().map(|s| s.cache_hits as u64).sum(),
    }
}

pub fn bench_attention(
    docs: &[TokenizedDocument],
    workload: &[WorkloadRecord],
    cfg: &BenchConfig,
    provider: &dyn AttentionProvider,
    embedder: &dyn Embedder,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(cfg.budgets.len());
    for &b in &cfg.budgets {
        let settings = TrimSettings {
            budget: BudgetSpec::new(b, cfg.window_ratio, cfg.stride, cfg.smoothing_radius)?,
            strategy: cfg.strategy,
            chunk_size: cfg.chunk_size,
            parallelism: cfg.parallelism,
            record_timing: false,
        };
        let started = Instant::now();
        let outs = trim_workload(docs, workload, &settings, provider, embedder)?;
        let wall = started.elapsed().as_secs_f64() * 1e3;
        let samples: Vec<Sample> = outs
            .iter()
            .map(|o| Sample {
                tokens: o.report.selected_tokens,
                doc_tokens: o.report.doc_tokens,
                recall: o.report.evidence_recall,
                cache_hits: o.report.cache_hits,
            })
            .collect();
        rows.push(aggregate(Method::Attention, format!("b={b}"), &samples, wall));
    }
    Ok(rows)
}

pub fn bench_rag(
    docs: &[TokenizedDocument],
    workload: &[WorkloadRecord],
    cfg: &BenchConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<BenchRow>> {
    let started = Instant::now();
    let indexes = par::try_map_slice(docs, cfg.parallelism, |d| {
        build_chunk_index(d, cfg.rag_chunk_len, cfg.rag_overlap, embedder, Parallelism::Sequential)
    })?;
    let index_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut rows = Vec::with_capacity(cfg.top_ks.len());
    for &k in &cfg.top_ks {
        let started = Instant::now();
        let samples = par::try_map_slice(workload, cfg.parallelism, |r| {
            let pos = docs
                .iter()
                .position(|d| d.doc_id() == r.doc_id)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown doc_id {:?}", r.doc_id)))?;
            let doc = &docs[pos];
            let got = retrieve_topk(doc, &indexes[pos], &r.question, k, embedder)?;
            Ok(Sample {
                tokens: got.tokens_used,
                doc_tokens: doc.len(),
                recall: r.gold_in(doc).map(|g| evidence_recall(&got.spans, g)),
                cache_hits: 0,
            })
        })?;
        let wall = started.elapsed().as_secs_f64() * 1e3 + index_ms;
        rows.push(aggregate(Method::Rag, format!("k={k}"), &samples, wall));
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "method,param,queries,avg_tokens,avg_token_fraction,evidence_recall,wall_time_ms,cache_hits";

/// Writes bench rows as CSV. When no row has a recall value the column is
/// dropped; a row missing it otherwise leaves the cell empty.
pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> io::Result<()> {
    let with_recall = rows.iter().any(|r| r.evidence_recall.is_some());
    if with_recall {
        writeln!(out, "{CSV_HEADER}")?;
    } else {
        writeln!(out, "{}", CSV_HEADER.replace(",evidence_recall", ""))?;
    }
    for r in rows {
        write!(
            out,
            "{},{},{},{:.2},{:.5},",
            r.method.as_str(),
            r.param,
            r.queries,
            r.avg_tokens,
            r.avg_token_fraction
        )?;
        if with_recall {
            let recall = r.evidence_recall.map(|x| format!("{x:.4}")).unwrap_or_default();
            write!(out, "{recall},")?;
        }
        writeln!(out, "{:.3},{}", r.wall_time_ms, r.cache_hits)?;
    }
    Ok(())
}
