//! Seeded synthetic documents with a known evidence region.
//!
//! Filler words look like `f1234` and never match a question word. The
//! evidence region mixes filler with per-document keywords that also appear
//! in the question. An optional header at the start of the document repeats
//! words that occur both in the question and in the fixed contrast query.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::TokenSpan;
use crate::harness::WorkloadRecord;
use crate::doc::RawDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub doc_len: usize,
    pub evidence_len: usize,
    /// Probability that an evidence token is a keyword.
    pub keyword_density: f64,
    pub keywords: usize,
    /// Length of the shared-vocabulary header at the start (0 for none).
    pub header_len: usize,
    pub filler_vocab: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            doc_len: 2000,
            evidence_len: 100,
            keyword_density: 0.5,
            keywords: 4,
            header_len: 0,
            filler_vocab: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDoc {
    pub doc_id: String,
    pub text: String,
    pub question: String,
    pub evidence: TokenSpan,
    pub header: Option<TokenSpan>,
}

impl PlantedDoc {
    pub fn raw(&self) -> RawDocument {
        RawDocument {
            doc_id: self.doc_id.clone(),
            text: self.text.clone(),
        }
    }

    pub fn workload_record(&self) -> WorkloadRecord {
        WorkloadRecord {
            doc_id: self.doc_id.clone(),
            question: self.question.clone(),
            gold_answer: None,
            pool: Vec::new(),
            gold_span: Some([self.evidence.start, self.evidence.end]),
        }
    }
}

const HEADER_WORDS: [&str; 2] = ["the", "context"];

/// Builds one document; identical `(seed, config)` give identical output.
pub fn planted_document(seed: u64, doc_id: impl Into<String>, cfg: &PlantConfig) -> PlantedDoc {
    assert!(cfg.doc_len >= cfg.header_len + cfg.evidence_len, "document too short for its plants");
    assert!(cfg.keywords >= 1 && cfg.evidence_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keywords: Vec<String> = (0..cfg.keywords)
        .map(|_| format!("kw{}", rng.random_range(0..1_000_000u32)))
        .collect();
    let question = if cfg.header_len > 0 {
        format!("What does the context say about {} ?", keywords.join(" "))
    } else {
        format!("Which passage mentions {} ?", keywords.join(" "))
    };

    let ev_start = rng.random_range(cfg.header_len..=cfg.doc_len - cfg.evidence_len);
    let evidence = TokenSpan::new(ev_start, ev_start + cfg.evidence_len);
    let mut words: Vec<String> = Vec::with_capacity(cfg.doc_len);
    for t in 0..cfg.doc_len {
        let word = if t < cfg.header_len {
            HEADER_WORDS[t % HEADER_WORDS.len()].to_string()
        } else if evidence.contains(t) && rng.random_bool(cfg.keyword_density) {
            keywords[rng.random_range(0..keywords.len())].clone()
        } else {
            format!("f{}", rng.random_range(0..cfg.filler_vocab))
        };
        words.push(word);
    }
    let mut text = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push(if i % 17 == 0 { '\n' } else { ' ' });
        }
        text.push_str(w);
    }
    PlantedDoc {
        doc_id: doc_id.into(),
        text,
        question,
        evidence,
        header: (cfg.header_len > 0).then(|| TokenSpan::new(0, cfg.header_len)),
    }
}

/// `count` documents seeded from `seed, seed + 1, …`.
pub fn planted_corpus(seed: u64, count: usize, cfg: &PlantConfig) -> Vec<PlantedDoc> {
    (0..count)
        .map(|i| planted_document(seed.wrapping_add(i as u64), format!("synth-{i:04}"), cfg))
        .collect()
}
