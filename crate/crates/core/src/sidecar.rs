//! HTTP/JSON client for the attention sidecar service.
//!
//! Endpoints (all `POST` with JSON bodies except `/healthz`):
//!
//! | path              | request                              | response                          |
//! |-------------------|--------------------------------------|-----------------------------------|
//! | `/tokenize`       | `{text}`                             | `{token_ids, char_spans}`         |
//! | `/encode_chunk`   | `{doc_id, token_ids}`                | `{cache_key, cached}`             |
//! | `/attention`      | `{doc_id, cache_key, query_text}`    | `{scores, query_token_count}`     |
//! | `/full_attention` | `{text, query_text}`                 | `{scores, query_token_count}`     |
//! | `/embed`          | `{text}`                             | `{vector, dim}`                   |
//! | `/clear`          | `{doc_id}`                           | `{ok}`                            |
//!
//! HTTP 422 signals a prompt longer than the model's context window; 5xx
//! and transport failures are reported as [`Error::ProviderUnavailable`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionProvider, CacheKey, CacheStats, Query, RawChunkScores};
use crate::doc::{CharSpan, Chunk, Encoding, TokenId, TokenizedDocument, Tokenizer};
use crate::embed::{normalize, Embedder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub token_ids: Vec<TokenId>,
    pub char_spans: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeChunkRequest {
    pub doc_id: String,
    pub token_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeChunkResponse {
    pub cache_key: CacheKey,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRequest {
    pub doc_id: String,
    pub cache_key: CacheKey,
    pub query_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullAttentionRequest {
    pub text: String,
    pub query_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResponse {
    pub scores: Vec<f64>,
    pub query_token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearRequest {
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearResponse {
    pub ok: bool,
}

/// Optional body of a 422 response.
#[derive(Debug, Default, Deserialize)]
struct OverflowBody {
    #[serde(default)]
    needed: usize,
    #[serde(default)]
    window: usize,
}

pub struct SidecarClient {
    base_url: String,
    agent: ureq::Agent,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl SidecarClient {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        SidecarClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| Error::ProviderUnavailable(format!("{path}: {e}")))?;
        Self::decode(path, resp)
    }

    fn decode<Resp: DeserializeOwned>(path: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<Resp> {
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<Resp>()
                .map_err(|e| Error::Protocol(format!("{path}: bad response body: {e}"))),
            422 => {
                let body: OverflowBody = resp.body_mut().read_json().unwrap_or_default();
                Err(Error::ContextOverflow {
                    needed: body.needed,
                    window: body.window,
                })
            }
            500..=599 => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(Error::ProviderUnavailable(format!("{path}: HTTP {status}: {text}")))
            }
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(Error::Protocol(format!("{path}: HTTP {status}: {text}")))
            }
        }
    }

    pub fn healthz(&self) -> Result<()> {
        let resp = self
            .agent
            .get(&self.url("/healthz"))
            .call()
            .map_err(|e| Error::ProviderUnavailable(format!("/healthz: {e}")))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(Error::ProviderUnavailable(format!(
                "/healthz: HTTP {}",
                resp.status().as_u16()
            )))
        }
    }

    pub fn encode_chunk(&self, doc_id: &str, token_ids: &[TokenId]) -> Result<EncodeChunkResponse> {
        self.post(
            "/encode_chunk",
            &EncodeChunkRequest {
                doc_id: doc_id.to_string(),
                token_ids: token_ids.to_vec(),
            },
        )
    }

    pub fn attention(&self, doc_id: &str, key: CacheKey, query_text: &str) -> Result<AttentionResponse> {
        self.post(
            "/attention",
            &AttentionRequest {
                doc_id: doc_id.to_string(),
                cache_key: key,
                query_text: query_text.to_string(),
            },
        )
    }

    /// Uncached single-pass attention over `text`; the reference for cache equivalence.
    pub fn full_attention(&self, text: &str, query_text: &str) -> Result<AttentionResponse> {
        self.post(
            "/full_attention",
            &FullAttentionRequest {
                text: text.to_string(),
                query_text: query_text.to_string(),
            },
        )
    }

    pub fn clear(&self, doc_id: &str) -> Result<()> {
        let resp: ClearResponse = self.post(
            "/clear",
            &ClearRequest {
                doc_id: doc_id.to_string(),
            },
        )?;
        if resp.ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("/clear refused for {doc_id:?}")))
        }
    }
}

impl Tokenizer for SidecarClient {
    fn tokenize(&self, text: &str) -> Result<Encoding> {
        let resp: TokenizeResponse = self.post(
            "/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        if resp.token_ids.len() != resp.char_spans.len() {
            return Err(Error::Protocol(format!(
                "/tokenize returned {} ids and {} spans",
                resp.token_ids.len(),
                resp.char_spans.len()
            )));
        }
        Ok(Encoding {
            ids: resp.token_ids,
            char_spans: resp
                .char_spans
                .into_iter()
                .map(|[s, e]| CharSpan::new(s, e))
                .collect(),
        })
    }
}

impl Embedder for SidecarClient {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let resp: EmbedResponse = self.post(
            "/embed",
            &EmbedRequest {
                text: text.to_string(),
            },
        )?;
        if resp.vector.len() != resp.dim || resp.dim == 0 {
            return Err(Error::Protocol(format!(
                "/embed returned {} values for dim {}",
                resp.vector.len(),
                resp.dim
            )));
        }
        Ok(normalize(resp.vector))
    }
}

impl AttentionProvider for SidecarClient {
    fn score_chunk(
        &self,
        doc: &TokenizedDocument,
        chunk: &Chunk,
        query: &Query,
    ) -> Result<RawChunkScores> {
        let ids = &doc.tokens()[chunk.range.start..chunk.range.end];
        let encoded = self.encode_chunk(doc.doc_id(), ids)?;
        let counter = if encoded.cached { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        let resp = self.attention(doc.doc_id(), encoded.cache_key, query.text())?;
        let raw = RawChunkScores {
            chunk_index: chunk.index,
            scores: resp.scores,
            query_token_count: resp.query_token_count,
            cache_hit: encoded.cached,
        };
        if raw.scores.len() != chunk.len() {
            return Err(Error::Protocol(format!(
                "/attention returned {} scores for a chunk of {} tokens",
                raw.scores.len(),
                chunk.len()
            )));
        }
        if raw.query_token_count == 0 {
            return Err(Error::Protocol("/attention reported zero query tokens".into()));
        }
        if raw.scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Protocol("/attention returned a negative or non-finite score".into()));
        }
        Ok(raw)
    }

    fn clear_document_cache(&self, doc_id: &str) {
        if let Err(e) = self.clear(doc_id) {
            log::warn!("failed to clear sidecar cache for {doc_id:?}: {e}");
        }
    }

    fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            ..CacheStats::default()
        }
    }
}
