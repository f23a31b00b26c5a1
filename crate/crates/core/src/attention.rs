//! Per-chunk attention scoring behind a provider trait.
//!
//! A provider runs one prefill over `Context: {chunk} ; Question: {query} ; Answer:`
//! and returns, for every context token, the attention mass it receives summed
//! over query tokens, layers and heads. Encoded chunks are cached per document,
//! keyed by a hash of the chunk's token ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::doc::{Chunk, TokenId, TokenizedDocument, WhitespaceTokenizer};
use crate::error::{Error, Result};

/// Number of whitespace-delimited template tokens around chunk and query:
/// `Context:`, `;`, `Question:`, `;`, `Answer:`.
pub const TEMPLATE_TOKENS: usize = 5;

/// Renders the scoring prompt for a chunk and a query.
pub fn render_prompt(chunk_text: &str, query: &str) -> String {
    format!("Context: {chunk_text} ; Question: {query} ; Answer:")
}

/// 64-bit key identifying an encoded chunk within a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub u64);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

const FNV64_OFFSET: u64 = 14_695_981_039_346_656_037;
const FNV64_PRIME: u64 = 1_099_511_628_211;

/// FNV-1a over the little-endian 4-byte encoding of each token id.
pub fn cache_key(token_ids: &[TokenId]) -> CacheKey {
    let mut hash = FNV64_OFFSET;
    for id in token_ids {
        for b in id.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(FNV64_PRIME);
        }
    }
    CacheKey(hash)
}

/// A query as seen by the providers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    text: String,
    words: Vec<String>,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let words: Vec<String> = WhitespaceTokenizer::words(&text)
            .into_iter()
            .map(str::to_string)
            .collect();
        if words.is_empty() {
            return Err(Error::InvalidQuery("query has no tokens".into()));
        }
        Ok(Query { text, words })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Aggregated attention received by each context token of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawChunkScores {
    pub chunk_index: usize,
    pub scores: Vec<f64>,
    /// T_q as counted by the provider.
    pub query_token_count: usize,
    pub cache_hit: bool,
}

impl RawChunkScores {
    /// Checks length and the attention-mass upper bound.
    pub fn check(&self, chunk_len: usize, layers: usize, heads: usize) -> Result<()> {
        if self.scores.len() != chunk_len {
            return Err(Error::Protocol(format!(
                "provider returned {} scores for a chunk of {chunk_len} tokens",
                self.scores.len()
            )));
        }
        if self.scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Protocol("provider returned a negative or non-finite score".into()));
        }
        let bound = (self.query_token_count * layers * heads) as f64;
        let total: f64 = self.scores.iter().sum();
        if total > bound * (1.0 + 1e-6) + 1e-9 {
            return Err(Error::Protocol(format!(
                "attention mass {total} exceeds bound {bound}"
            )));
        }
        Ok(())
    }
}

/// Counters exposed by caching providers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
    pub documents: usize,
}

/// Runs prefill passes and reports per-context-token attention mass.
pub trait AttentionProvider: Send + Sync {
    fn score_chunk(
        &self,
        doc: &TokenizedDocument,
        chunk: &Chunk,
        query: &Query,
    ) -> Result<RawChunkScores>;

    /// Drops every cached chunk for `doc_id`. Unknown ids are a no-op.
    fn clear_document_cache(&self, doc_id: &str);

    fn cache_stats(&self) -> CacheStats {
        CacheStats::default()
    }
}

type Slot<V> = Arc<OnceLock<Arc<V>>>;

/// Per-document registry of encoded chunks.
///
/// Insertion of a key is atomic: of several concurrent callers for the same
/// `(doc_id, key)` exactly one observes a miss. The value itself is built
/// outside the registry lock.
pub struct ChunkCache<V> {
    docs: Mutex<HashMap<String, HashMap<CacheKey, Slot<V>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<V> Default for ChunkCache<V> {
    fn default() -> Self {
        ChunkCache {
            docs: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }
}

impl<V> ChunkCache<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached value and whether it was already present.
    pub fn get_or_insert_with<F>(&self, doc_id: &str, key: CacheKey, build: F) -> (Arc<V>, bool)
    where
        F: FnOnce() -> V,
    {
        let (slot, hit) = {
            let mut docs = self.docs.lock().expect("chunk cache poisoned");
            let entries = docs.entry(doc_id.to_string()).or_default();
            match entries.get(&key) {
                Some(slot) => (Arc::clone(slot), true),
                None => {
                    let slot: Slot<V> = Arc::new(OnceLock::new());
                    entries.insert(key, Arc::clone(&slot));
                    (slot, false)
                }
            }
        };
        if hit {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        let value = Arc::clone(slot.get_or_init(|| Arc::new(build())));
        (value, hit)
    }

    pub fn clear(&self, doc_id: &str) {
        self.docs.lock().expect("chunk cache poisoned").remove(doc_id);
    }

    pub fn stats(&self) -> CacheStats {
        let docs = self.docs.lock().expect("chunk cache poisoned");
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: docs.values().map(HashMap::len).sum(),
            documents: docs.len(),
        }
    }
}

/// Case-folded comparison form of a token. Surrounding punctuation is
/// stripped so that `"Delta",` and `Delta` compare equal; a token made only
/// of punctuation keeps its folded form.
pub fn fold_token(token: &str) -> String {
    let lower = token.to_lowercase();
    let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        lower
    } else {
        trimmed.to_string()
    }
}

/// Deterministic stand-in for a transformer with one layer and one head.
///
/// Every query token gives weight 1.0 to context tokens equal (after
/// folding) to any query token and 0.1 to the rest, normalized over the
/// chunk. The score of a context token is `T_q` times its normalized weight.
/// Cached entries hold the folded chunk tokens.
pub struct MockProvider {
    cache: ChunkCache<Vec<String>>,
    context_window: Option<usize>,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockProvider {
    pub const MATCH_WEIGHT: f64 = 1.0;
    pub const BACKGROUND_WEIGHT: f64 = 0.1;

    pub fn new() -> Self {
        MockProvider {
            cache: ChunkCache::new(),
            context_window: None,
        }
    }

    /// Limits prompt length (template + chunk + query tokens).
    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window = Some(tokens);
        self
    }
}

impl AttentionProvider for MockProvider {
    fn score_chunk(
        &self,
        doc: &TokenizedDocument,
        chunk: &Chunk,
        query: &Query,
    ) -> Result<RawChunkScores> {
        if chunk.is_empty() || chunk.range.end > doc.len() {
            return Err(Error::InvalidChunk {
                len: chunk.len(),
                default: doc.len(),
            });
        }
        let t_q = query.words().len();
        if let Some(window) = self.context_window {
            let needed = TEMPLATE_TOKENS + chunk.len() + t_q;
            if needed > window {
                return Err(Error::ContextOverflow { needed, window });
            }
        }

        let ids = &doc.tokens()[chunk.range.start..chunk.range.end];
        let (folded, cache_hit) = self.cache.get_or_insert_with(doc.doc_id(), cache_key(ids), || {
            (chunk.range.start..chunk.range.end)
                .map(|t| fold_token(doc.token_text(t)))
                .collect()
        });

        let wanted: HashSet<String> = query.words().iter().map(|w| fold_token(w)).collect();
        let weights: Vec<f64> = folded
            .iter()
            .map(|tok| {
                if wanted.contains(tok) {
                    Self::MATCH_WEIGHT
                } else {
                    Self::BACKGROUND_WEIGHT
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let scale = t_q as f64 / total;
        Ok(RawChunkScores {
            chunk_index: chunk.index,
            scores: weights.iter().map(|w| w * scale).collect(),
            query_token_count: t_q,
            cache_hit,
        })
    }

    fn clear_document_cache(&self, doc_id: &str) {
        self.cache.clear(doc_id);
    }

    fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }
}
