//! Sidecar client against an in-process fake server speaking the same wire format.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use ctxtrim::attention::{cache_key, AttentionProvider};
use ctxtrim::doc::{TokenId, TokenizedDocument, Tokenizer, WhitespaceTokenizer};
use ctxtrim::embed::{Embedder, StubEmbedder};
use ctxtrim::relevance::{compute_relevance_map, RelevanceConfig, Strategy};
use ctxtrim::{Error, SidecarClient};

#[derive(Default)]
struct State {
    // doc_id -> cache key -> token ids
    chunks: HashMap<String, HashMap<u64, Vec<TokenId>>>,
}

fn ids(text: &str) -> Vec<TokenId> {
    WhitespaceTokenizer::words(text).iter().map(|w| WhitespaceTokenizer::word_id(w)).collect()
}

/// Query-matching tokens weigh 1.0, others 0.1; normalized and scaled by T_q.
fn fake_scores(context: &[TokenId], query_text: &str) -> Value {
    let q = ids(query_text);
    let wanted: HashSet<TokenId> = q.iter().copied().collect();
    let w: Vec<f64> = context.iter().map(|t| if wanted.contains(t) { 1.0 } else { 0.1 }).collect();
    let total: f64 = w.iter().sum();
    let scores: Vec<f64> = w.iter().map(|x| x / total * q.len() as f64).collect();
    json!({"scores": scores, "query_token_count": q.len()})
}

fn handle(state: &Mutex<State>, path: &str, body: &Value) -> (u16, Value) {
    let query = body["query_text"].as_str().unwrap_or_default();
    if query.contains("OVERFLOW") {
        return (422, json!({"needed": 9000, "window": 8192}));
    }
    if query.contains("BOOM") {
        return (500, json!({"error": "model crashed"}));
    }
    let mut st = state.lock().unwrap();
    match path {
        "/healthz" => (200, json!({"ok": true})),
        "/tokenize" => {
            let enc = WhitespaceTokenizer.tokenize(body["text"].as_str().unwrap()).unwrap();
            let spans: Vec<[usize; 2]> = enc.char_spans.iter().map(|s| [s.start, s.end]).collect();
            (200, json!({"token_ids": enc.ids, "char_spans": spans}))
        }
        "/encode_chunk" => {
            let doc = body["doc_id"].as_str().unwrap().to_string();
            let toks: Vec<TokenId> = serde_json::from_value(body["token_ids"].clone()).unwrap();
            let key = cache_key(&toks).0;
            let entry = st.chunks.entry(doc).or_default();
            let cached = entry.contains_key(&key);
            entry.insert(key, toks);
            (200, json!({"cache_key": key, "cached": cached}))
        }
        "/attention" => {
            let doc = body["doc_id"].as_str().unwrap();
            let key = body["cache_key"].as_u64().unwrap();
            match st.chunks.get(doc).and_then(|m| m.get(&key)) {
                Some(toks) => (200, fake_scores(toks, query)),
                None => (404, json!({"error": "unknown cache key"})),
            }
        }
        "/full_attention" => (200, fake_scores(&ids(body["text"].as_str().unwrap()), query)),
        "/embed" => {
            let v = StubEmbedder::new(64).embed(body["text"].as_str().unwrap()).unwrap();
            (200, json!({"vector": v, "dim": v.len()}))
        }
        "/clear" => {
            st.chunks.remove(body["doc_id"].as_str().unwrap());
            (200, json!({"ok": true}))
        }
        _ => (404, json!({"error": "no such route"})),
    }
}

fn serve(stream: TcpStream, state: &Mutex<State>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut content_length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap() };
    let (status, payload) = handle(state, &path, &body);
    let payload = payload.to_string();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
}

fn start_server() -> (String, Arc<Mutex<State>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let state = Arc::new(Mutex::new(State::default()));
    let shared = state.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let st = shared.clone();
            thread::spawn(move || serve(stream, &st));
        }
    });
    (url, state)
}

const TEXT: &str = "alpha beta gamma delta\nepsilon zeta eta theta iota kappa";

#[test]
fn health_tokenize_and_embed() {
    let (url, _) = start_server();
    let client = SidecarClient::new(format!("{url}/"));
    assert_eq!(client.base_url(), url);
    client.healthz().unwrap();
    let doc = TokenizedDocument::from_text("d", TEXT, &client).unwrap();
    assert_eq!(doc.len(), 10);
    assert_eq!(doc.token_text(4), "epsilon");
    let v = client.embed("alpha beta").unwrap();
    assert_eq!(v.len(), 64);
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
}

#[test]
fn cached_chunks_match_full_attention() {
    let (url, _) = start_server();
    let client = SidecarClient::new(url);
    let doc = TokenizedDocument::from_text("d", TEXT, &client).unwrap();
    let config = RelevanceConfig { chunk_size: 16, ..RelevanceConfig::default() };
    let embedder = StubEmbedder::default();

    let cold = compute_relevance_map(&doc, "gamma theta", Strategy::Raw, &[], &client, &embedder, &config).unwrap();
    assert_eq!(cold.cache_hits, 0);
    let warm = compute_relevance_map(&doc, "gamma theta", Strategy::Raw, &[], &client, &embedder, &config).unwrap();
    assert_eq!(warm.cache_hits, 1);
    assert_eq!(cold.scores, warm.scores);
    let stats = client.cache_stats();
    assert_eq!((stats.hits, stats.misses), (1, 1));

    // Single chunk covering the document and T_default = T_i: the map is the
    // full-attention vector divided by the query length.
    let config = RelevanceConfig { chunk_size: doc.len(), ..config };
    let map = compute_relevance_map(&doc, "gamma theta", Strategy::Raw, &[], &client, &embedder, &config).unwrap();
    let full = client.full_attention(TEXT, "gamma theta").unwrap();
    for (a, b) in map.scores.iter().zip(&full.scores) {
        assert!((a - b / full.query_token_count as f64).abs() <= 1e-12);
    }
    assert_eq!(map.argmax(), Some(2));
}

#[test]
fn clearing_drops_cache_entries() {
    let (url, state) = start_server();
    let client = SidecarClient::new(url);
    let doc = TokenizedDocument::from_text("d", TEXT, &client).unwrap();
    let config = RelevanceConfig { chunk_size: 4, ..RelevanceConfig::default() };
    let embedder = StubEmbedder::default();
    compute_relevance_map(&doc, "beta", Strategy::Raw, &[], &client, &embedder, &config).unwrap();
    assert_eq!(state.lock().unwrap().chunks["d"].len(), 3);
    client.clear_document_cache("d");
    assert!(!state.lock().unwrap().chunks.contains_key("d"));
    let again = compute_relevance_map(&doc, "beta", Strategy::Raw, &[], &client, &embedder, &config).unwrap();
    assert_eq!(again.cache_hits, 0);
}

#[test]
fn error_statuses_map_to_errors() {
    let (url, _) = start_server();
    let client = SidecarClient::new(url);
    let doc = TokenizedDocument::from_text("d", TEXT, &WhitespaceTokenizer).unwrap();
    let config = RelevanceConfig::default();
    let embedder = StubEmbedder::default();
    let err = compute_relevance_map(&doc, "OVERFLOW", Strategy::Raw, &[], &client, &embedder, &config).unwrap_err();
    assert_eq!(err, Error::ContextOverflow { needed: 9000, window: 8192 });
    let err = compute_relevance_map(&doc, "BOOM", Strategy::Raw, &[], &client, &embedder, &config).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err:?}");
    let err = client.attention("nope", ctxtrim::CacheKey(7), "x").unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
}

#[test]
fn unreachable_sidecar_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let client = SidecarClient::new(format!("http://127.0.0.1:{port}"));
    assert!(matches!(client.healthz(), Err(Error::ProviderUnavailable(_))));
    assert!(matches!(client.tokenize("a b"), Err(Error::ProviderUnavailable(_))));
}
