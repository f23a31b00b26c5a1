//! Budget-constrained context reduction for long-document question answering.
//!
//! A document is split into chunks, each chunk is scored against the question
//! by an [`AttentionProvider`], and the per-token scores are normalized into a
//! document-wide relevance map. Fixed-length windows over the smoothed map are
//! then picked greedily until a token budget is spent.

pub mod attention;
pub mod doc;
pub mod embed;
pub mod error;
pub mod harness;
pub mod par;
pub mod relevance;
pub mod retrieval;
pub mod select;
pub mod sidecar;
pub mod synth;
pub mod table;

pub use attention::{AttentionProvider, CacheKey, MockProvider, Query};
pub use doc::{BudgetSpec, RawDocument, TokenSpan, TokenizedDocument, Tokenizer, WhitespaceTokenizer};
pub use embed::{Embedder, StubEmbedder};
pub use error::{Error, Result};
pub use par::Parallelism;
pub use relevance::{compute_relevance_map, RelevanceConfig, RelevanceMap, Strategy};
pub use select::{reduce_context, Reduction, SpanSelection};
pub use sidecar::SidecarClient;
