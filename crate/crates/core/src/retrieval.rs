//! Chunk-embedding retrieval baseline.

use serde::{Deserialize, Serialize};

use crate::doc::{spans_to_text, TokenSpan, TokenizedDocument};
use crate::embed::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

pub const DEFAULT_CHUNK_LEN: usize = 256;
pub const DEFAULT_OVERLAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedChunk {
    pub doc_id: String,
    pub span: TokenSpan,
    pub embedding: Vec<f32>,
}

/// Overlapping tiling with stride `chunk_len − overlap`; stops at the first
/// chunk that reaches the end of the document.
pub fn tile(doc_len: usize, chunk_len: usize, overlap: usize) -> Result<Vec<TokenSpan>> {
    if chunk_len == 0 || overlap >= chunk_len {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= overlap ({overlap}) < chunk_len ({chunk_len})"
        )));
    }
    let stride = chunk_len - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < doc_len {
        let end = (start + chunk_len).min(doc_len);
        spans.push(TokenSpan::new(start, end));
        if end == doc_len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

pub fn build_chunk_index(
    doc: &TokenizedDocument,
    chunk_len: usize,
    overlap: usize,
    embedder: &dyn Embedder,
    mode: Parallelism,
) -> Result<Vec<EmbeddedChunk>> {
    let spans = tile(doc.len(), chunk_len, overlap)?;
    par::try_map_slice(&spans, mode, |&span| {
        let ext = doc.char_extent(span);
        let embedding = embedder.embed(doc.char_slice(ext.start, ext.end))?;
        Ok(EmbeddedChunk {
            doc_id: doc.doc_id().to_string(),
            span,
            embedding,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Retrieved chunk intervals in rank order.
    pub retrieved: Vec<TokenSpan>,
    /// Retrieved intervals sorted and merged.
    pub spans: Vec<TokenSpan>,
    pub tokens_used: usize,
    pub text: String,
}

/// Merges sorted intervals that overlap or touch.
pub fn merge_spans(mut spans: Vec<TokenSpan>) -> Vec<TokenSpan> {
    spans.sort();
    let mut out: Vec<TokenSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

/// Cosine top-k among `doc`'s chunks, reassembled in document order.
pub fn retrieve_topk(
    doc: &TokenizedDocument,
    index: &[EmbeddedChunk],
    query: &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Retrieval> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let own: Vec<&EmbeddedChunk> = index.iter().filter(|c| c.doc_id == doc.doc_id()).collect();
    if own.is_empty() {
        return Err(Error::EmptyIndex(doc.doc_id().to_string()));
    }
    let q = embedder.embed(query)?;
    let mut scored: Vec<(f64, TokenSpan)> = own
        .iter()
        .map(|c| (cosine_similarity(&q, &c.embedding), c.span))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.start.cmp(&b.1.start)));
    let retrieved: Vec<TokenSpan> = scored.iter().take(k).map(|(_, s)| *s).collect();
    let spans = merge_spans(retrieved.clone());
    let tokens_used = spans.iter().map(TokenSpan::len).sum();
    let text = spans_to_text(doc, &spans)?;
    Ok(Retrieval {
        retrieved,
        spans,
        tokens_used,
        text,
    })
}
