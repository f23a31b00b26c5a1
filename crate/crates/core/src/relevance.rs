//! Turns per-chunk attention into a document-wide relevance map.
//!
//! Stages, in order: per-chunk scoring, chunk-length normalization
//! (`s · T_i / T_default`), concatenation in chunk order, division by the
//! query token count, and for the differential strategies subtraction of a
//! contrast query's map computed the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionProvider, Query, RawChunkScores};
use crate::doc::{chunk_document, Chunk, TokenizedDocument};
use crate::embed::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Contrast query shared by every document under [`Strategy::FixedContrast`].
pub const FIXED_CONTRAST_QUERY: &str = "Please repeat the context.";

pub const DEFAULT_CHUNK_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Target query only.
    Raw,
    /// Subtract the map of [`FIXED_CONTRAST_QUERY`].
    FixedContrast,
    /// Subtract the map of the pool query farthest from the target in embedding space.
    #[default]
    Farthest,
}

impl Strategy {
    pub fn is_differential(self) -> bool {
        self != Strategy::Raw
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Raw => "raw",
            Strategy::FixedContrast => "fixed",
            Strategy::Farthest => "farthest",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Strategy::Raw),
            "fixed" | "fixed_contrast" | "fixed-contrast" => Ok(Strategy::FixedContrast),
            "farthest" => Ok(Strategy::Farthest),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Chunk-length normalization: `score · T_i / T_default`.
pub fn normalize_chunk_scores(raw: &RawChunkScores, chunk_size: usize) -> Result<Vec<f64>> {
    let len = raw.scores.len();
    if len == 0 || len > chunk_size {
        return Err(Error::InvalidChunk {
            len,
            default: chunk_size,
        });
    }
    let factor = len as f64 / chunk_size as f64;
    Ok(raw.scores.iter().map(|s| s * factor).collect())
}

/// Concatenates chunk-local vectors in chunk order.
pub fn reconstruct_document_scores(chunks: &[Chunk], per_chunk: &[Vec<f64>]) -> Result<Vec<f64>> {
    if chunks.len() != per_chunk.len() {
        return Err(Error::PartitionMismatch(format!(
            "{} chunks but {} score vectors",
            chunks.len(),
            per_chunk.len()
        )));
    }
    let mut out = Vec::with_capacity(chunks.last().map(|c| c.range.end).unwrap_or(0));
    for (chunk, scores) in chunks.iter().zip(per_chunk) {
        if chunk.range.start != out.len() || scores.len() != chunk.len() {
            return Err(Error::PartitionMismatch(format!(
                "chunk {} expects {} scores at offset {}, got {} at offset {}",
                chunk.index,
                chunk.len(),
                chunk.range.start,
                scores.len(),
                out.len()
            )));
        }
        out.extend_from_slice(scores);
    }
    Ok(out)
}

/// Per-query-token average: `S / T_q`.
pub fn normalize_by_query_length(scores: &[f64], query_tokens: usize) -> Result<Vec<f64>> {
    if query_tokens == 0 {
        return Err(Error::InvalidQuery("query token count is zero".into()));
    }
    let t_q = query_tokens as f64;
    Ok(scores.iter().map(|s| s / t_q).collect())
}

/// Elementwise `target − contrast`.
pub fn differential_scores(target: &[f64], contrast: &[f64]) -> Result<Vec<f64>> {
    if target.len() != contrast.len() {
        return Err(Error::PartitionMismatch(format!(
            "target map has {} entries, contrast map {}",
            target.len(),
            contrast.len()
        )));
    }
    Ok(target.iter().zip(contrast).map(|(t, c)| t - c).collect())
}

/// Outcome of contrast-query selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastChoice {
    pub query: String,
    /// True when the farthest strategy had no usable pool and used the fixed query.
    pub fallback: bool,
    /// Cosine distance from the target, for farthest selections.
    pub distance: Option<f64>,
}

impl ContrastChoice {
    fn fixed(fallback: bool) -> Self {
        ContrastChoice {
            query: FIXED_CONTRAST_QUERY.to_string(),
            fallback,
            distance: None,
        }
    }
}

// Distances closer than this are treated as tied.
const DISTANCE_TIE_EPS: f64 = 1e-12;

pub fn select_contrast_query(
    target: &str,
    pool: &[String],
    strategy: Strategy,
    embedder: &dyn Embedder,
) -> Result<ContrastChoice> {
    match strategy {
        Strategy::Raw => Err(Error::InvalidParameter(
            "raw strategy has no contrast query".into(),
        )),
        Strategy::FixedContrast => Ok(ContrastChoice::fixed(false)),
        Strategy::Farthest => {
            let mut candidates: Vec<&str> = pool
                .iter()
                .map(String::as_str)
                .filter(|q| *q != target && !q.trim().is_empty())
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            if candidates.is_empty() {
                return Ok(ContrastChoice::fixed(true));
            }
            let target_vec = embedder.embed(target)?;
            let mut best: Option<(&str, f64)> = None;
            // Candidates are sorted, so keeping the first of a tie keeps the smallest text.
            for cand in candidates {
                let d = 1.0 - cosine_similarity(&target_vec, &embedder.embed(cand)?);
                match best {
                    Some((_, bd)) if d <= bd + DISTANCE_TIE_EPS => {}
                    _ => best = Some((cand, d)),
                }
            }
            let (query, distance) = best.expect("non-empty candidates");
            Ok(ContrastChoice {
                query: query.to_string(),
                fallback: false,
                distance: Some(distance),
            })
        }
    }
}

/// Query-normalized document map for a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMap {
    pub scores: Vec<f64>,
    pub query_tokens: usize,
    pub cache_hits: usize,
}

/// Places per-chunk results by `chunk_index`, normalizes, concatenates and
/// divides by `T_q`. The arrival order of `raws` does not matter.
pub fn assemble_query_map(
    chunks: &[Chunk],
    mut raws: Vec<RawChunkScores>,
    chunk_size: usize,
) -> Result<QueryMap> {
    raws.sort_by_key(|r| r.chunk_index);
    if raws.is_empty()
        || raws.len() != chunks.len()
        || raws.iter().zip(chunks).any(|(r, c)| r.chunk_index != c.index)
    {
        return Err(Error::PartitionMismatch(
            "chunk results do not cover the partition exactly once".into(),
        ));
    }
    let query_tokens = raws[0].query_token_count;
    if raws.iter().any(|r| r.query_token_count != query_tokens) {
        return Err(Error::Protocol("query token count differs between chunks".into()));
    }
    let per_chunk = raws
        .iter()
        .map(|r| normalize_chunk_scores(r, chunk_size))
        .collect::<Result<Vec<_>>>()?;
    let doc_scores = reconstruct_document_scores(chunks, &per_chunk)?;
    Ok(QueryMap {
        scores: normalize_by_query_length(&doc_scores, query_tokens)?,
        query_tokens,
        cache_hits: raws.iter().filter(|r| r.cache_hit).count(),
    })
}

/// Scores every chunk for `query` and assembles the normalized document map.
pub fn query_map(
    doc: &TokenizedDocument,
    chunks: &[Chunk],
    query: &Query,
    provider: &dyn AttentionProvider,
    config: &RelevanceConfig,
) -> Result<QueryMap> {
    let raws = par::try_map_slice(chunks, config.parallelism, |c| {
        provider.score_chunk(doc, c, query)
    })?;
    assemble_query_map(chunks, raws, config.chunk_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelevanceConfig {
    /// T_default.
    pub chunk_size: usize,
    pub parallelism: Parallelism,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            parallelism: Parallelism::available(),
        }
    }
}

/// Document-wide relevance scores for one target query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub doc_id: String,
    pub scores: Vec<f64>,
    pub strategy: Strategy,
    pub query: String,
    pub contrast_query: Option<String>,
    pub contrast_fallback: bool,
    /// Chunk scorings served from the provider cache while building this map.
    pub cache_hits: usize,
}

impl RelevanceMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Index of the first maximum.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.scores)
    }

    /// For differential maps, the same difference read from the contrast
    /// query's side: `S̄(q⁻) − S̄(q)`.
    pub fn contrast_view(&self) -> Option<Vec<f64>> {
        self.strategy
            .is_differential()
            .then(|| self.scores.iter().map(|s| -s).collect())
    }
}

pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Full relevance computation for `query` over `doc`.
///
/// `pool` holds other questions about the same document; it is only read by
/// [`Strategy::Farthest`].
pub fn compute_relevance_map(
    doc: &TokenizedDocument,
    query: &str,
    strategy: Strategy,
    pool: &[String],
    provider: &dyn AttentionProvider,
    embedder: &dyn Embedder,
    config: &RelevanceConfig,
) -> Result<RelevanceMap> {
    let chunks = chunk_document(doc, config.chunk_size)?;
    let target = query_map(doc, &chunks, &Query::new(query)?, provider, config)?;

    if !strategy.is_differential() {
        return Ok(RelevanceMap {
            doc_id: doc.doc_id().to_string(),
            scores: target.scores,
            strategy,
            query: query.to_string(),
            contrast_query: None,
            contrast_fallback: false,
            cache_hits: target.cache_hits,
        });
    }

    let choice = select_contrast_query(query, pool, strategy, embedder)?;
    let contrast = query_map(doc, &chunks, &Query::new(&choice.query)?, provider, config)?;
    Ok(RelevanceMap {
        doc_id: doc.doc_id().to_string(),
        scores: differential_scores(&target.scores, &contrast.scores)?,
        strategy,
        query: query.to_string(),
        contrast_query: Some(choice.query),
        contrast_fallback: choice.fallback,
        cache_hits: target.cache_hits + contrast.cache_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::MockProvider;
    use crate::doc::{TokenSpan, WhitespaceTokenizer};
    use crate::embed::StubEmbedder;
    use std::collections::HashMap;

    fn raw(scores: Vec<f64>) -> RawChunkScores {
        RawChunkScores {
            chunk_index: 0,
            scores,
            query_token_count: 1,
            cache_hit: false,
        }
    }

    fn doc(text: &str) -> TokenizedDocument {
        TokenizedDocument::from_text("d", text, &WhitespaceTokenizer).unwrap()
    }

    /// Embeds each known text as a fixed vector.
    struct TableEmbedder(HashMap<String, Vec<f32>>);

    impl Embedder for TableEmbedder {
        fn embed(&self, text: &str) -> Result<Vec<f32>> {
            Ok(self.0[text].clone())
        }
    }

    #[test]
    fn chunk_length_normalization() {
        let mut r = raw(vec![0.5; 512]);
        let out = normalize_chunk_scores(&r, 1024).unwrap();
        assert!(out.iter().all(|&x| x == 0.25));

        r.scores = vec![0.3, 0.7, 1.1];
        assert_eq!(normalize_chunk_scores(&r, 3).unwrap(), r.scores);

        let out = normalize_chunk_scores(&raw(vec![1.2]), 1024).unwrap();
        assert!((out[0] - 1.2 / 1024.0).abs() < 1e-15);

        let too_long = raw(vec![1.0; 5]);
        assert_eq!(
            normalize_chunk_scores(&too_long, 4),
            Err(Error::InvalidChunk { len: 5, default: 4 })
        );
    }

    #[test]
    fn reconstruction_is_ordered_concat() {
        let chunks = crate::doc::partition(3, 2).unwrap();
        assert_eq!(
            reconstruct_document_scores(&chunks, &[vec![1.0, 2.0], vec![3.0]]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let chunks = crate::doc::partition(3, 1).unwrap();
        assert_eq!(
            reconstruct_document_scores(&chunks, &[vec![3.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![3.0, 1.0, 2.0]
        );
        let single = crate::doc::partition(2, 8).unwrap();
        assert_eq!(
            reconstruct_document_scores(&single, &[vec![4.0, 5.0]]).unwrap(),
            vec![4.0, 5.0]
        );
        let chunks = crate::doc::partition(3, 2).unwrap();
        assert!(matches!(
            reconstruct_document_scores(&chunks, &[vec![1.0], vec![3.0]]),
            Err(Error::PartitionMismatch(_))
        ));
        assert!(matches!(
            reconstruct_document_scores(&chunks, &[vec![1.0, 2.0]]),
            Err(Error::PartitionMismatch(_))
        ));
    }

    #[test]
    fn query_length_normalization() {
        assert_eq!(normalize_by_query_length(&[2.0, 4.0], 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(normalize_by_query_length(&[2.0, 4.0], 1).unwrap(), vec![2.0, 4.0]);
        assert!(matches!(
            normalize_by_query_length(&[1.0], 0),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn query_normalization_cancels_query_length() {
        let d = doc("a b c");
        let chunks = chunk_document(&d, 1024).unwrap();
        let p = MockProvider::new();
        let cfg = RelevanceConfig::default();
        let one = query_map(&d, &chunks, &Query::new("b").unwrap(), &p, &cfg).unwrap();
        let two = query_map(&d, &chunks, &Query::new("b d").unwrap(), &p, &cfg).unwrap();
        for (a, b) in one.scores.iter().zip(&two.scores) {
            assert!((a - b).abs() < 1e-15);
        }
        // Single chunk of 3 tokens with T_default 1024 scales by 3/1024.
        let expect = [0.1 / 1.2, 1.0 / 1.2, 0.1 / 1.2].map(|x| x * 3.0 / 1024.0);
        for (a, e) in one.scores.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn differential_arithmetic() {
        let out = differential_scores(&[1.0, 0.2], &[0.4, 0.2]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        assert_eq!(differential_scores(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), vec![0.0, 0.0]);
        assert!(differential_scores(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shared_tokens_lose_differential_mass() {
        // Token "x" matches both queries, token "y" only the target.
        let fixtures = [
            "x y z w",
            "w w x y y z",
            "z z z z x w y",
            "x x x y w w w w w",
            "y w z x z w z w",
        ];
        let p = MockProvider::new();
        let cfg = RelevanceConfig::default();
        for text in fixtures {
            let d = doc(text);
            let chunks = chunk_document(&d, 1024).unwrap();
            let t = query_map(&d, &chunks, &Query::new("x y").unwrap(), &p, &cfg).unwrap();
            let c = query_map(&d, &chunks, &Query::new("x").unwrap(), &p, &cfg).unwrap();
            let diff = differential_scores(&t.scores, &c.scores).unwrap();
            let words: Vec<&str> = text.split(' ').collect();
            let xs = words.iter().position(|w| *w == "x").unwrap();
            let ys = words.iter().position(|w| *w == "y").unwrap();
            assert!(diff[xs] < diff[ys], "{text}: {diff:?}");
        }
    }

    #[test]
    fn fixed_contrast_text() {
        let c = select_contrast_query("q", &[], Strategy::FixedContrast, &StubEmbedder::default())
            .unwrap();
        assert_eq!(c.query, "Please repeat the context.");
        assert!(!c.fallback);
    }

    #[test]
    fn degenerate_pool_falls_back() {
        let e = StubEmbedder::default();
        let c = select_contrast_query("q", &["q".into()], Strategy::Farthest, &e).unwrap();
        assert_eq!(c.query, FIXED_CONTRAST_QUERY);
        assert!(c.fallback);
        let c = select_contrast_query("q", &[], Strategy::Farthest, &e).unwrap();
        assert!(c.fallback);
        assert!(select_contrast_query("q", &[], Strategy::Raw, &e).is_err());
    }

    #[test]
    fn farthest_tie_breaks_lexicographically() {
        // Unit vectors at angle θ from the target have cosine distance 1 − cos θ.
        let at_distance = |d: f64| -> Vec<f32> {
            let c = 1.0 - d;
            let s = (1.0 - c * c).sqrt();
            vec![c as f32, s as f32]
        };
        let mut table = HashMap::new();
        table.insert("target".to_string(), vec![1.0f32, 0.0]);
        table.insert("near".to_string(), at_distance(0.1));
        table.insert("zeta far".to_string(), at_distance(0.7));
        table.insert("alpha far".to_string(), at_distance(0.7));
        let e = TableEmbedder(table);
        let pool: Vec<String> = vec!["near".into(), "zeta far".into(), "alpha far".into()];
        let c = select_contrast_query("target", &pool, Strategy::Farthest, &e).unwrap();
        assert_eq!(c.query, "alpha far");
        assert!((c.distance.unwrap() - 0.7).abs() < 1e-6);
        assert!(!c.fallback);
    }

    #[test]
    fn raw_map_peaks_at_match() {
        let d = doc("a b c d");
        let m = compute_relevance_map(
            &d,
            "b",
            Strategy::Raw,
            &[],
            &MockProvider::new(),
            &StubEmbedder::default(),
            &RelevanceConfig::default(),
        )
        .unwrap();
        assert_eq!(m.argmax(), Some(1));
        assert!(m.scores.iter().all(|s| *s >= 0.0));
        assert_eq!(m.contrast_view(), None);
    }

    #[test]
    fn fixed_contrast_keeps_argmax() {
        let d = doc("a b c d");
        let m = compute_relevance_map(
            &d,
            "b",
            Strategy::FixedContrast,
            &[],
            &MockProvider::new(),
            &StubEmbedder::default(),
            &RelevanceConfig::default(),
        )
        .unwrap();
        assert_eq!(m.argmax(), Some(1));
        assert_eq!(m.contrast_query.as_deref(), Some(FIXED_CONTRAST_QUERY));
        let neg = m.contrast_view().unwrap();
        assert_eq!(neg[1], -m.scores[1]);
    }

    #[test]
    fn short_last_chunk_is_deflated() {
        let chunks = crate::doc::partition(6, 4).unwrap();
        let raws = vec![
            RawChunkScores { chunk_index: 0, scores: vec![0.3; 4], query_token_count: 1, cache_hit: false },
            RawChunkScores { chunk_index: 1, scores: vec![0.3; 2], query_token_count: 1, cache_hit: false },
        ];
        let m = assemble_query_map(&chunks, raws, 4).unwrap();
        assert_eq!(m.scores[..4], [0.3; 4]);
        assert_eq!(m.scores[4..], [0.15; 2]);
    }

    #[test]
    fn softmax_inflation_is_removed() {
        // Background-only text: the mock spreads unit mass over 4 then 2 tokens.
        let text = ["w"; 6].join(" ");
        let d = doc(&text);
        let cfg = RelevanceConfig {
            chunk_size: 4,
            ..RelevanceConfig::default()
        };
        let chunks = chunk_document(&d, 4).unwrap();
        assert_eq!(chunks[1].range, TokenSpan::new(4, 6));
        let p = MockProvider::new();
        let q = Query::new("q").unwrap();
        assert_eq!(p.score_chunk(&d, &chunks[1], &q).unwrap().scores, vec![0.5, 0.5]);
        let m = query_map(&d, &chunks, &q, &p, &cfg).unwrap();
        assert!(m.scores.iter().all(|s| (s - 0.25).abs() < 1e-15), "{:?}", m.scores);
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let text = "a b c d e f g h i j";
        let d = doc(text);
        let chunks = chunk_document(&d, 3).unwrap();
        let p = MockProvider::new();
        let q = Query::new("c h").unwrap();
        let mut raws: Vec<_> = chunks.iter().map(|c| p.score_chunk(&d, c, &q).unwrap()).collect();
        let forward = assemble_query_map(&chunks, raws.clone(), 3).unwrap();
        raws.reverse();
        let backward = assemble_query_map(&chunks, raws, 3).unwrap();
        assert_eq!(forward.scores, backward.scores);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("fixed".parse::<Strategy>().unwrap(), Strategy::FixedContrast);
        assert_eq!("Farthest".parse::<Strategy>().unwrap(), Strategy::Farthest);
        assert!("nope".parse::<Strategy>().is_err());
        assert_eq!(Strategy::default(), Strategy::Farthest);
    }
}
