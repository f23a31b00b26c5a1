//! Budgeted window selection over a relevance map.
//!
//! Scores are smoothed with a centered moving average, every window of
//! length `L` is scored by its mean, and windows are taken greedily in rank
//! order. Windows that overlap or touch an existing span merge into it. When
//! a window would overflow the budget, the newly added tokens farthest from
//! the window's peak are dropped and selection stops.

use serde::{Deserialize, Serialize};

use crate::doc::{ceil_fraction, spans_to_text, BudgetSpec, TokenSpan, TokenizedDocument};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::relevance::RelevanceMap;

/// Ordered, disjoint token spans chosen under a budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSelection {
    pub spans: Vec<TokenSpan>,
    pub budget_tokens: usize,
    pub selected_tokens: usize,
}

impl SpanSelection {
    /// Whether `idx` lies in a selected span.
    pub fn covers(&self, idx: usize) -> bool {
        let i = self.spans.partition_point(|s| s.end <= idx);
        self.spans.get(i).is_some_and(|s| s.contains(idx))
    }

    /// Number of tokens of `span` that are selected.
    pub fn overlap_with(&self, span: TokenSpan) -> usize {
        self.spans
            .iter()
            .map(|s| s.end.min(span.end).saturating_sub(s.start.max(span.start)))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub start: usize,
    pub len: usize,
    /// Mean smoothed relevance over the window.
    pub score: f64,
    /// Position of the first maximum smoothed score inside the window.
    pub peak: usize,
}

impl ScoredWindow {
    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.start, self.start + self.len)
    }
}

/// Centered moving average over `[t − radius, t + radius]`, shrunk at the edges.
pub fn smooth(scores: &[f64], radius: usize, mode: Parallelism) -> Vec<f64> {
    if radius == 0 || scores.is_empty() {
        return scores.to_vec();
    }
    let n = scores.len();
    par::map_range(n, mode, |t| {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(n - 1);
        scores[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    })
}

/// Window length: `⌈b·T_D⌉` when `b < w`, otherwise `⌈w·T_D⌉`; at least 1.
pub fn window_length(budget: f64, window_ratio: f64, doc_len: usize) -> usize {
    let fraction = if budget < window_ratio {
        budget
    } else {
        window_ratio
    };
    ceil_fraction(fraction, doc_len).max(1)
}

/// Window starts `0, stride, 2·stride, …` plus one window ending at `doc_len`.
pub fn window_starts(doc_len: usize, len: usize, stride: usize) -> Vec<usize> {
    if len >= doc_len {
        return vec![0];
    }
    let last = doc_len - len;
    let mut starts: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Scores every window and sorts by score descending, earlier start first on ties.
pub fn rank_windows(
    scores: &[f64],
    len: usize,
    stride: usize,
    mode: Parallelism,
) -> Result<Vec<ScoredWindow>> {
    if scores.is_empty() {
        return Err(Error::EmptyDocument);
    }
    if len == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "window length and stride must be at least 1".into(),
        ));
    }
    let len = len.min(scores.len());
    let starts = window_starts(scores.len(), len, stride);
    let mut windows = par::map_slice(&starts, mode, |&start| {
        let slice = &scores[start..start + len];
        let mut peak = 0;
        for (i, s) in slice.iter().enumerate() {
            if *s > slice[peak] {
                peak = i;
            }
        }
        ScoredWindow {
            start,
            len,
            score: slice.iter().sum::<f64>() / len as f64,
            peak: start + peak,
        }
    });
    windows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)));
    Ok(windows)
}

/// Adds `[start, end)` to a sorted, disjoint span list, merging anything it touches.
fn insert_merge(spans: &mut Vec<TokenSpan>, start: usize, end: usize) {
    let first = spans.partition_point(|s| s.end < start);
    let last = spans.partition_point(|s| s.start <= end);
    if first >= last {
        spans.insert(first, TokenSpan::new(start, end));
        return;
    }
    let merged = TokenSpan::new(start.min(spans[first].start), end.max(spans[last - 1].end));
    spans.splice(first..last, std::iter::once(merged));
}

/// Sub-intervals of `window` not covered by `spans`.
fn uncovered(spans: &[TokenSpan], window: TokenSpan) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut cursor = window.start;
    let first = spans.partition_point(|s| s.end <= window.start);
    for s in &spans[first..] {
        if s.start >= window.end {
            break;
        }
        if s.start > cursor {
            out.push(TokenSpan::new(cursor, s.start));
        }
        cursor = cursor.max(s.end);
    }
    if cursor < window.end {
        out.push(TokenSpan::new(cursor, window.end));
    }
    out
}

/// Keeps `keep` of the positions in `segments`, repeatedly dropping whichever
/// outer position is farther from `peak` (the later one on ties).
fn trim_toward_peak(segments: &[TokenSpan], keep: usize, peak: usize) -> Vec<TokenSpan> {
    let positions: Vec<usize> = segments.iter().flat_map(|s| s.start..s.end).collect();
    let (mut lo, mut hi) = (0, positions.len());
    while hi - lo > keep {
        let left = peak.abs_diff(positions[lo]);
        let right = peak.abs_diff(positions[hi - 1]);
        if left > right {
            lo += 1;
        } else {
            hi -= 1;
        }
    }
    let mut out: Vec<TokenSpan> = Vec::new();
    for &p in &positions[lo..hi] {
        match out.last_mut() {
            Some(last) if last.end == p => last.end = p + 1,
            _ => out.push(TokenSpan::new(p, p + 1)),
        }
    }
    out
}

/// Greedy budgeted selection over ranked windows.
pub fn select_spans(
    ranked: &[ScoredWindow],
    budget_tokens: usize,
    doc_len: usize,
) -> Result<SpanSelection> {
    if ranked.is_empty() {
        return Err(Error::EmptySelection);
    }
    if budget_tokens == 0 {
        return Err(Error::InvalidBudget("budget must cover at least one token".into()));
    }
    let cap = budget_tokens.min(doc_len);
    let mut spans: Vec<TokenSpan> = Vec::new();
    let mut selected = 0usize;

    for w in ranked {
        if selected >= cap {
            break;
        }
        let window = w.span();
        if window.end > doc_len {
            return Err(Error::SpanOutOfRange {
                start: window.start,
                end: window.end,
                len: doc_len,
            });
        }
        let fresh = uncovered(&spans, window);
        let added: usize = fresh.iter().map(TokenSpan::len).sum();
        if added == 0 {
            continue;
        }
        let remaining = cap - selected;
        if added <= remaining {
            insert_merge(&mut spans, window.start, window.end);
            selected += added;
        } else {
            for seg in trim_toward_peak(&fresh, remaining, w.peak) {
                insert_merge(&mut spans, seg.start, seg.end);
            }
            selected += remaining;
            break;
        }
    }
    Ok(SpanSelection {
        spans,
        budget_tokens,
        selected_tokens: selected,
    })
}

/// Selection plus the reduced context it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub selection: SpanSelection,
    pub window_len: usize,
    pub text: String,
}

/// smooth → window length → rank → select → reassemble.
pub fn reduce_context(
    doc: &TokenizedDocument,
    map: &RelevanceMap,
    budget: &BudgetSpec,
    mode: Parallelism,
) -> Result<Reduction> {
    budget.validate()?;
    if map.len() != doc.len() {
        return Err(Error::PartitionMismatch(format!(
            "relevance map has {} entries for a document of {} tokens",
            map.len(),
            doc.len()
        )));
    }
    let smoothed = smooth(&map.scores, budget.smoothing_radius, mode);
    let window_len = window_length(budget.budget, budget.window_ratio, doc.len());
    let ranked = rank_windows(&smoothed, window_len, budget.stride, mode)?;
    let selection = select_spans(&ranked, budget.budget_tokens(doc.len()), doc.len())?;
    let text = spans_to_text(doc, &selection.spans)?;
    Ok(Reduction {
        selection,
        window_len,
        text,
    })
}
