//! Documents, token coordinates, chunk partitioning and span reassembly.
//!
//! Every score vector in the crate is indexed by token position in a
//! [`TokenizedDocument`]. Character spans are counted in Unicode scalar
//! values (not bytes) so that offsets reported by an external tokenizer can
//! be used unchanged.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Separator inserted between non-adjacent spans in a reduced context.
pub const ELISION: &str = "\n[...]\n";

/// Half-open interval of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.start <= idx && idx < self.end
    }

    /// True when the two intervals overlap or share a boundary.
    pub fn touches(&self, other: &TokenSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Half-open interval of character (Unicode scalar) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }
}

/// Output of a tokenizer: ids plus the character span each id covers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    pub char_spans: Vec<CharSpan>,
}

/// Anything that can turn text into token ids with character offsets.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Encoding>;
}

/// Splits on whitespace; each distinct word maps to one id (32-bit FNV-1a of its bytes).
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl WhitespaceTokenizer {
    pub fn word_id(word: &str) -> TokenId {
        let mut hash: u32 = 0x811c_9dc5;
        for b in word.bytes() {
            hash ^= b as u32;
            hash = hash.wrapping_mul(0x0100_0193);
        }
        hash
    }

    /// Words of `text` in order, without offsets.
    pub fn words(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Result<Encoding> {
        let mut enc = Encoding::default();
        let mut word_start: Option<usize> = None;
        let mut byte_start = 0;
        let mut char_idx = 0;
        for (byte_idx, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(start) = word_start.take() {
                    enc.ids.push(Self::word_id(&text[byte_start..byte_idx]));
                    enc.char_spans.push(CharSpan::new(start, char_idx));
                }
            } else if word_start.is_none() {
                word_start = Some(char_idx);
                byte_start = byte_idx;
            }
            char_idx += 1;
        }
        if let Some(start) = word_start {
            enc.ids.push(Self::word_id(&text[byte_start..]));
            enc.char_spans.push(CharSpan::new(start, char_idx));
        }
        Ok(enc)
    }
}

/// A document together with its tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    doc_id: String,
    tokens: Vec<TokenId>,
    char_spans: Vec<CharSpan>,
    source_text: String,
    // Byte offset of every char index, plus one trailing entry for text.len().
    char_to_byte: Vec<usize>,
}

impl TokenizedDocument {
    /// Builds a document from an existing tokenization, checking every invariant.
    pub fn new(
        doc_id: impl Into<String>,
        source_text: impl Into<String>,
        tokens: Vec<TokenId>,
        char_spans: Vec<CharSpan>,
    ) -> Result<Self> {
        let source_text = source_text.into();
        if tokens.is_empty() {
            return Err(Error::EmptyDocument);
        }
        if tokens.len() != char_spans.len() {
            return Err(Error::InvalidDocument(format!(
                "{} tokens but {} character spans",
                tokens.len(),
                char_spans.len()
            )));
        }
        let mut char_to_byte: Vec<usize> = source_text.char_indices().map(|(b, _)| b).collect();
        let n_chars = char_to_byte.len();
        char_to_byte.push(source_text.len());

        let mut prev_end = 0;
        for (i, span) in char_spans.iter().enumerate() {
            if span.start > span.end || span.end > n_chars {
                return Err(Error::InvalidDocument(format!(
                    "token {i} span [{}, {}) outside text of {n_chars} chars",
                    span.start, span.end
                )));
            }
            if span.start < prev_end {
                return Err(Error::InvalidDocument(format!(
                    "token {i} span [{}, {}) overlaps its predecessor",
                    span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(TokenizedDocument {
            doc_id: doc_id.into(),
            tokens,
            char_spans,
            source_text,
            char_to_byte,
        })
    }

    pub fn from_text(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self> {
        let text = text.into();
        let enc = tokenizer.tokenize(&text)?;
        Self::new(doc_id, text, enc.ids, enc.char_spans)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn char_spans(&self) -> &[CharSpan] {
        &self.char_spans
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// Number of tokens, T_D.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of characters in the source text.
    pub fn char_len(&self) -> usize {
        self.char_to_byte.len() - 1
    }

    /// Surface string of token `idx`.
    pub fn token_text(&self, idx: usize) -> &str {
        let span = self.char_spans[idx];
        self.char_slice(span.start, span.end)
    }

    /// Substring between two character offsets.
    pub fn char_slice(&self, start: usize, end: usize) -> &str {
        &self.source_text[self.char_to_byte[start]..self.char_to_byte[end]]
    }

    /// Character interval emitted for a token span. A span touching the
    /// first or last token absorbs leading or trailing text.
    pub fn char_extent(&self, span: TokenSpan) -> CharSpan {
        let start = if span.start == 0 {
            0
        } else {
            self.char_spans[span.start].start
        };
        let end = if span.end == self.len() {
            self.char_len()
        } else {
            self.char_spans[span.end - 1].end
        };
        CharSpan::new(start, end)
    }
}

/// One contiguous piece of the chunk partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub range: TokenSpan,
}

impl Chunk {
    /// T_i.
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Partitions `0..total` into consecutive chunks of `chunk_size` (last may be shorter).
pub fn partition(total: usize, chunk_size: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 {
        return Err(Error::InvalidParameter("chunk size must be at least 1".into()));
    }
    if total == 0 {
        return Err(Error::EmptyDocument);
    }
    Ok((0..total)
        .step_by(chunk_size)
        .enumerate()
        .map(|(index, start)| Chunk {
            index,
            range: TokenSpan::new(start, (start + chunk_size).min(total)),
        })
        .collect())
}

pub fn chunk_document(doc: &TokenizedDocument, chunk_size: usize) -> Result<Vec<Chunk>> {
    partition(doc.len(), chunk_size)
}

/// `ceil(fraction * n)` computed so that decimal fractions such as 0.07
/// do not pick up a spurious extra unit from binary rounding.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Budget and selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Fraction of document tokens to retain, in (0, 1].
    pub budget: f64,
    /// Base window ratio, in (0, 1].
    pub window_ratio: f64,
    pub stride: usize,
    pub smoothing_radius: usize,
}

impl BudgetSpec {
    pub const DEFAULT_WINDOW_RATIO: f64 = 0.02;
    pub const DEFAULT_STRIDE: usize = 1;
    pub const DEFAULT_SMOOTHING_RADIUS: usize = 2;

    pub fn new(budget: f64, window_ratio: f64, stride: usize, smoothing_radius: usize) -> Result<Self> {
        let spec = BudgetSpec {
            budget,
            window_ratio,
            stride,
            smoothing_radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Budget `b` with default window ratio, stride and smoothing.
    pub fn with_budget(budget: f64) -> Result<Self> {
        Self::new(
            budget,
            Self::DEFAULT_WINDOW_RATIO,
            Self::DEFAULT_STRIDE,
            Self::DEFAULT_SMOOTHING_RADIUS,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::InvalidBudget(format!("budget {} not in (0, 1]", self.budget)));
        }
        if !(self.window_ratio > 0.0 && self.window_ratio <= 1.0) {
            return Err(Error::InvalidBudget(format!(
                "window ratio {} not in (0, 1]",
                self.window_ratio
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidBudget("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Hard token cap ⌈b·T_D⌉.
    pub fn budget_tokens(&self, doc_len: usize) -> usize {
        ceil_fraction(self.budget, doc_len)
    }
}

fn check_spans(doc_len: usize, spans: &[TokenSpan]) -> Result<()> {
    let mut prev_end = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.end > doc_len || span.start >= span.end {
            return Err(Error::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len: doc_len,
            });
        }
        if i > 0 && span.start < prev_end {
            return Err(Error::UnsortedSpans);
        }
        prev_end = span.end;
    }
    Ok(())
}

/// Merges spans that share a boundary. Input must already be sorted and disjoint.
pub(crate) fn coalesce_adjacent(spans: &[TokenSpan]) -> Vec<TokenSpan> {
    let mut out: Vec<TokenSpan> = Vec::with_capacity(spans.len());
    for span in spans {
        match out.last_mut() {
            Some(last) if last.end == span.start => last.end = span.end,
            _ => out.push(*span),
        }
    }
    out
}

/// Character extents of the text emitted for `spans`, after joining adjacent spans.
pub fn span_char_extents(doc: &TokenizedDocument, spans: &[TokenSpan]) -> Result<Vec<CharSpan>> {
    check_spans(doc.len(), spans)?;
    Ok(coalesce_adjacent(spans)
        .into_iter()
        .map(|s| doc.char_extent(s))
        .collect())
}

/// Reassembles the source text under `spans` in document order, marking gaps with [`ELISION`].
pub fn spans_to_text(doc: &TokenizedDocument, spans: &[TokenSpan]) -> Result<String> {
    let extents = span_char_extents(doc, spans)?;
    let mut out = String::new();
    for (i, ext) in extents.iter().enumerate() {
        if i > 0 {
            out.push_str(ELISION);
        }
        out.push_str(doc.char_slice(ext.start, ext.end));
    }
    Ok(out)
}

/// One entry of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
}

/// Reads a corpus: JSONL of `{"doc_id", "text"}` objects when the file ends
/// in `.jsonl`, otherwise the whole file is one document named after its stem.
pub fn read_corpus(path: &Path) -> std::io::Result<Vec<RawDocument>> {
    let is_jsonl = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("jsonl"))
        .unwrap_or(false);
    if !is_jsonl {
        let text = std::fs::read_to_string(path)?;
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "doc".to_string());
        return Ok(vec![RawDocument { doc_id, text }]);
    }
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut docs = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> TokenizedDocument {
        TokenizedDocument::from_text("d", text, &WhitespaceTokenizer).unwrap()
    }

    #[test]
    fn partition_lengths() {
        let lens: Vec<usize> = partition(2500, 1024).unwrap().iter().map(Chunk::len).collect();
        assert_eq!(lens, vec![1024, 1024, 452]);
        let lens: Vec<usize> = partition(1000, 1024).unwrap().iter().map(Chunk::len).collect();
        assert_eq!(lens, vec![1000]);
        assert_eq!(partition(0, 1024), Err(Error::EmptyDocument));
        assert!(partition(10, 0).is_err());
    }

    #[test]
    fn empty_text_is_empty_document() {
        let err = TokenizedDocument::from_text("d", "   \n", &WhitespaceTokenizer).unwrap_err();
        assert_eq!(err, Error::EmptyDocument);
    }

    #[test]
    fn whitespace_tokenizer_offsets_are_chars() {
        let d = doc("  héllo wörld\tx ");
        assert_eq!(d.len(), 3);
        assert_eq!(d.token_text(0), "héllo");
        assert_eq!(d.token_text(1), "wörld");
        assert_eq!(d.token_text(2), "x");
        assert_eq!(d.char_spans()[1], CharSpan::new(8, 13));
        assert_eq!(d.tokens()[0], WhitespaceTokenizer::word_id("héllo"));
    }

    #[test]
    fn rejects_overlapping_spans() {
        let err = TokenizedDocument::new(
            "d",
            "abcdef",
            vec![1, 2],
            vec![CharSpan::new(0, 3), CharSpan::new(2, 4)],
        );
        assert!(matches!(err, Err(Error::InvalidDocument(_))));
        let err = TokenizedDocument::new("d", "abc", vec![1], vec![CharSpan::new(0, 9)]);
        assert!(matches!(err, Err(Error::InvalidDocument(_))));
    }

    #[test]
    fn full_span_round_trips() {
        let text = "  The quick\nbrown fox.  ";
        let d = doc(text);
        assert_eq!(spans_to_text(&d, &[TokenSpan::new(0, d.len())]).unwrap(), text);
    }

    #[test]
    fn gap_gets_separator() {
        let d = doc("a b c d e f");
        let out = spans_to_text(&d, &[TokenSpan::new(1, 2), TokenSpan::new(4, 5)]).unwrap();
        assert_eq!(out, "b\n[...]\ne");
    }

    #[test]
    fn adjacent_spans_join() {
        let d = doc("t0 t1 t2 t3 t4 t5 t6 t7");
        let out = spans_to_text(&d, &[TokenSpan::new(0, 3), TokenSpan::new(3, 6)]).unwrap();
        assert_eq!(out, "t0 t1 t2 t3 t4 t5");
    }

    #[test]
    fn span_errors() {
        let d = doc("a b c");
        assert!(matches!(
            spans_to_text(&d, &[TokenSpan::new(2, 4)]),
            Err(Error::SpanOutOfRange { .. })
        ));
        assert_eq!(
            spans_to_text(&d, &[TokenSpan::new(1, 3), TokenSpan::new(0, 1)]),
            Err(Error::UnsortedSpans)
        );
    }

    #[test]
    fn budget_ceiling_is_decimal_exact() {
        assert_eq!(ceil_fraction(0.07, 100), 7);
        assert_eq!(ceil_fraction(0.1, 2000), 200);
        assert_eq!(ceil_fraction(0.001, 100), 1);
        assert_eq!(ceil_fraction(0.015, 1000), 15);
        assert_eq!(ceil_fraction(0.0151, 1000), 16);
        assert!(BudgetSpec::with_budget(0.0).is_err());
        assert!(BudgetSpec::with_budget(1.5).is_err());
        assert!(BudgetSpec::new(0.1, 0.02, 0, 2).is_err());
    }

    proptest! {
        #[test]
        fn partition_property(total in 1usize..20_000, size in 1usize..3000) {
            let chunks = partition(total, size).unwrap();
            let mut expect_start = 0;
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.index, i);
                prop_assert_eq!(c.range.start, expect_start);
                if i + 1 < chunks.len() {
                    prop_assert_eq!(c.len(), size);
                } else {
                    prop_assert!(!c.is_empty() && c.len() <= size);
                }
                expect_start = c.range.end;
            }
            prop_assert_eq!(expect_start, total);
        }

        #[test]
        fn output_covers_selected_chars(
            words in proptest::collection::vec("[a-zé]{1,6}", 1..40),
            picks in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let text = words.join(" ");
            let d = doc(&text);
            let mut spans = Vec::new();
            let mut i = 0;
            while i < d.len() {
                if picks[i] {
                    let start = i;
                    while i < d.len() && picks[i] { i += 1; }
                    spans.push(TokenSpan::new(start, i));
                } else {
                    i += 1;
                }
            }
            let out = spans_to_text(&d, &spans).unwrap();
            for s in &spans {
                for t in s.start..s.end {
                    prop_assert!(out.contains(d.token_text(t)));
                }
            }
        }
    }
}
