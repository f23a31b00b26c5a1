//! Row-level reduction for semi-structured tables.
//!
//! A table is serialized to JSON text with one row object per line, the
//! relevance map is computed over that text, and each row is scored by the
//! mean relevance of its tokens. The top-k rows are re-emitted in their
//! original order together with every header.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionProvider;
use crate::doc::{TokenSpan, TokenizedDocument, Tokenizer};
use crate::embed::StubEmbedder;
use crate::error::{Error, Result};
use crate::relevance::{compute_relevance_map, RelevanceConfig, Strategy};

pub const DEFAULT_TOP_K: usize = 4;

/// Table input format: `{"headers": [...], "rows": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn validate(&self) -> Result<()> {
        for (row, cells) in self.rows.iter().enumerate() {
            if cells.len() != self.headers.len() {
                return Err(Error::RaggedTable {
                    row,
                    got: cells.len(),
                    expected: self.headers.len(),
                });
            }
        }
        Ok(())
    }
}

/// A table with its canonical serialization and per-row token ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDocument {
    pub table_id: String,
    pub table: Table,
    pub document: TokenizedDocument,
    pub row_token_ranges: Vec<TokenSpan>,
}

impl TableDocument {
    pub fn serialized_text(&self) -> &str {
        self.document.source_text()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Canonical text and the character range of each row line.
pub fn render_table(table: &Table) -> Result<(String, Vec<(usize, usize)>)> {
    table.validate()?;
    let headers: Vec<String> = table.headers.iter().map(|h| json_str(h)).collect();
    let mut text = format!("{{\"headers\": [{}], \"rows\": [", headers.join(", "));
    let mut chars = text.chars().count();
    let mut ranges = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        text.push('\n');
        chars += 1;
        let fields: Vec<String> = headers
            .iter()
            .zip(row)
            .map(|(h, cell)| format!("{h}: {}", json_str(cell)))
            .collect();
        let mut line = format!("{{{}}}", fields.join(", "));
        if i + 1 < table.rows.len() {
            line.push(',');
        }
        let len = line.chars().count();
        ranges.push((chars, chars + len));
        text.push_str(&line);
        chars += len;
    }
    if !table.rows.is_empty() {
        text.push('\n');
    }
    text.push_str("]}");
    Ok((text, ranges))
}

/// Serializes and tokenizes `table`; a token belongs to the row whose line contains its first character.
pub fn serialize_table(
    table_id: impl Into<String>,
    table: &Table,
    tokenizer: &dyn Tokenizer,
) -> Result<TableDocument> {
    let table_id = table_id.into();
    let (text, char_ranges) = render_table(table)?;
    let document = TokenizedDocument::from_text(table_id.clone(), text, tokenizer)?;
    let starts: Vec<usize> = document.char_spans().iter().map(|s| s.start).collect();
    let row_token_ranges = char_ranges
        .iter()
        .map(|&(lo, hi)| TokenSpan::new(starts.partition_point(|&s| s < lo), starts.partition_point(|&s| s < hi)))
        .collect();
    Ok(TableDocument {
        table_id,
        table: table.clone(),
        document,
        row_token_ranges,
    })
}

/// Mean of `scores` over each row range; a row without tokens scores 0.
pub fn row_means(scores: &[f64], ranges: &[TokenSpan]) -> Vec<f64> {
    ranges
        .iter()
        .map(|r| {
            if r.is_empty() {
                0.0
            } else {
                scores[r.start..r.end].iter().sum::<f64>() / r.len() as f64
            }
        })
        .collect()
}

/// Per-row relevance from the raw-strategy map over the serialized table.
pub fn score_rows(
    table: &TableDocument,
    query: &str,
    provider: &dyn AttentionProvider,
    config: &RelevanceConfig,
) -> Result<Vec<f64>> {
    let map = compute_relevance_map(
        &table.document,
        query,
        Strategy::Raw,
        &[],
        provider,
        &StubEmbedder::default(),
        config,
    )?;
    Ok(row_means(&map.scores, &table.row_token_ranges))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSelection {
    /// Headers plus the kept rows in original order.
    pub table: Table,
    pub row_indices: Vec<usize>,
    /// Kept rows over total rows.
    pub row_usage: f64,
}

/// Keeps the `k` best rows (smaller index wins ties), in original order.
pub fn select_rows(table: &Table, scores: &[f64], k: usize) -> Result<RowSelection> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if scores.len() != table.rows.len() {
        return Err(Error::PartitionMismatch(format!(
            "{} row scores for {} rows",
            scores.len(),
            table.rows.len()
        )));
    }
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    let total = table.rows.len();
    Ok(RowSelection {
        table: Table {
            headers: table.headers.clone(),
            rows: order.iter().map(|&i| table.rows[i].clone()).collect(),
        },
        row_usage: if total == 0 {
            1.0
        } else {
            order.len() as f64 / total as f64
        },
        row_indices: order,
    })
}

/// Row usage as a two-decimal fraction, e.g. `0.40`.
pub fn format_row_usage(usage: f64) -> String {
    format!("{usage:.2}")
}

/// Row usage as a whole percentage, e.g. `51%`.
pub fn format_row_usage_percent(usage: f64) -> String {
    format!("{:.0}%", usage * 100.0)
}

/// Mean row usage over a workload.
pub fn mean_row_usage(usages: &[f64]) -> Option<f64> {
    (!usages.is_empty()).then(|| usages.iter().sum::<f64>() / usages.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::MockProvider;
    use crate::doc::WhitespaceTokenizer;

    fn table(rows: &[&[&str]]) -> Table {
        Table {
            headers: vec!["Airline".into(), "Year".into()],
            rows: rows
                .iter()
                .map(|r| r.iter().map(|c| c.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn two_by_two_ranges() {
        let t = table(&[&["Delta", "2019"], &["United", "2018"]]);
        let doc = serialize_table("t", &t, &WhitespaceTokenizer).unwrap();
        let r = &doc.row_token_ranges;
        assert_eq!(r.len(), 2);
        assert!(!r[0].is_empty() && !r[1].is_empty());
        assert!(r[0].end <= r[1].start);
        assert!(r[1].end <= doc.document.len());
        assert_eq!(doc.document.token_text(r[1].start + 1), "\"United\",");
        let parsed: serde_json::Value = serde_json::from_str(doc.serialized_text()).unwrap();
        assert_eq!(parsed["rows"][1]["Year"], "2018");
    }

    #[test]
    fn headers_only_table() {
        let t = table(&[]);
        let doc = serialize_table("t", &t, &WhitespaceTokenizer).unwrap();
        assert!(doc.row_token_ranges.is_empty());
        assert!(doc.serialized_text().contains("\"Airline\""));
        assert_eq!(doc.serialized_text(), "{\"headers\": [\"Airline\", \"Year\"], \"rows\": []}");
    }

    #[test]
    fn serialization_is_stable() {
        let t = table(&[&["a \"quoted\" name", "1"], &["b", "2"]]);
        let (a, _) = render_table(&t).unwrap();
        let (b, _) = render_table(&t).unwrap();
        assert_eq!(a, b);
        serde_json::from_str::<serde_json::Value>(&a).unwrap();
    }

    #[test]
    fn ragged_rows_rejected() {
        let t = Table {
            headers: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into()]],
        };
        assert_eq!(
            render_table(&t).unwrap_err(),
            Error::RaggedTable { row: 0, got: 1, expected: 2 }
        );
    }

    #[test]
    fn mock_finds_matching_row() {
        let t = table(&[&["Delta", "2019"], &["United", "2018"], &["Alaska", "2017"], &["Spirit", "2016"]]);
        let doc = serialize_table("t", &t, &WhitespaceTokenizer).unwrap();
        let scores = score_rows(&doc, "alaska", &MockProvider::new(), &RelevanceConfig::default()).unwrap();
        let best = crate::relevance::argmax(&scores).unwrap();
        assert_eq!(best, 2);
    }

    #[test]
    fn identical_rows_score_equal() {
        let t = table(&[&["Delta", "2019"], &["Delta", "2019"], &["Delta", "2019"]]);
        let doc = serialize_table("t", &t, &WhitespaceTokenizer).unwrap();
        let scores = score_rows(&doc, "delta", &MockProvider::new(), &RelevanceConfig::default()).unwrap();
        assert!(scores.iter().all(|s| *s == scores[0]));
    }

    #[test]
    fn mean_ignores_row_length() {
        let ranges = [TokenSpan::new(0, 2), TokenSpan::new(2, 9)];
        assert_eq!(row_means(&[0.5; 9], &ranges), vec![0.5, 0.5]);
    }

    #[test]
    fn top_k_in_original_order() {
        let t = table(&[&["a", "1"], &["b", "2"], &["c", "3"]]);
        let sel = select_rows(&t, &[5.0, 1.0, 9.0], 2).unwrap();
        assert_eq!(sel.row_indices, vec![0, 2]);
        assert_eq!(sel.table.rows[0][0], "a");
        assert_eq!(sel.table.rows[1][0], "c");
        assert_eq!(sel.table.headers, t.headers);
        let all = select_rows(&t, &[5.0, 1.0, 9.0], 7).unwrap();
        assert_eq!(all.table, t);
        assert_eq!(all.row_usage, 1.0);
        assert!(select_rows(&t, &[1.0; 3], 0).is_err());
        let tie = select_rows(&t, &[1.0; 3], 2).unwrap();
        assert_eq!(tie.row_indices, vec![0, 1]);
    }

    #[test]
    fn usage_formatting() {
        assert_eq!(format_row_usage(0.4), "0.40");
        assert_eq!(format_row_usage_percent(0.51), "51%");
        assert_eq!(mean_row_usage(&[0.4, 1.0]), Some(0.7));
        assert_eq!(mean_row_usage(&[]), None);
        assert_eq!(DEFAULT_TOP_K, 4);
    }
}
