//! A small OpenAI-compatible HTTP server for tests and offline demos.
//!
//! Answers are deterministic functions of the request (prompt, temperature,
//! seed), so fresh runs against the mock are reproducible. Faults can be
//! injected: rate limiting, permanent failure, missing logprobs, strict
//! parameter validation and added latency. The server records how many
//! requests were in flight at once.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::correctness::tokenize;

const VOCAB: &[&str] = &[
    "Paris",
    "London",
    "Berlin",
    "the",
    "river",
    "Nile",
    "Amazon",
    "Mount",
    "Everest",
    "1969",
    "1492",
    "Einstein",
    "Curie",
    "Newton",
    "blue",
    "whale",
    "oxygen",
    "gold",
    "Jupiter",
    "Mars",
    "Shakespeare",
    "Tolstoy",
    "Greta",
    "and",
    "Tony",
    "Rome",
    "Tokyo",
    "Andes",
    "Guiana",
    "Highlands",
];

#[derive(Debug, Clone, Default)]
pub struct MockBehavior {
    /// The first N requests (server-wide) answer 429.
    pub rate_limit_first: u32,
    /// Every request answers this status.
    pub always_fail: Option<u16>,
    /// Completion requests whose prompt contains this text answer 500.
    pub fail_prompt_containing: Option<String>,
    pub omit_logprobs: bool,
    /// Reject requests carrying `top_k` with a 400.
    pub reject_top_k: bool,
    pub latency: Duration,
    /// Embedding dimension; 16 when zero.
    pub embedding_dim: usize,
}

#[derive(Debug, Default)]
pub struct MockStats {
    pub requests: AtomicUsize,
    pub completions: AtomicUsize,
    pub embeddings: AtomicUsize,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    /// Authorization header of every request, in arrival order.
    pub auth_headers: Mutex<Vec<String>>,
    /// Parsed request bodies, in arrival order.
    pub bodies: Mutex<Vec<Value>>,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

struct Shared {
    behavior: MockBehavior,
    stats: Arc<MockStats>,
    rate_limited: AtomicU32,
}

impl MockServer {
    pub fn start(behavior: MockBehavior) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", behavior)
    }

    pub fn bind(addr: &str, behavior: MockBehavior) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(MockStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            behavior,
            stats: stats.clone(),
            rate_limited: AtomicU32::new(0),
        });
        let stop_flag = stop.clone();
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let shared = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &shared) {
                        log::debug!("mock connection error: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stats,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    /// Blocks until the server is stopped from elsewhere (used by the CLI).
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct Request {
    method: String,
    path: String,
    auth: String,
    body: Vec<u8>,
}

fn read_request(stream: &TcpStream) -> io::Result<Option<Request>> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut len = 0usize;
    let mut auth = String::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((name, value)) = h.split_once(':') {
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => len = value.parse().unwrap_or(0),
                "authorization" => auth = value.to_string(),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    Ok(Some(Request {
        method,
        path,
        auth,
        body,
    }))
}

fn write_response(mut stream: &TcpStream, status: u16, body: &Value) -> io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let body = body.to_string();
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let Some(req) = read_request(&stream)? else {
        return Ok(());
    };
    let stats = &shared.stats;
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    stats
        .auth_headers
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push(req.auth.clone());
    let body: Value = serde_json::from_slice(&req.body).unwrap_or(Value::Null);
    stats
        .bodies
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push(body.clone());

    if !shared.behavior.latency.is_zero() {
        thread::sleep(shared.behavior.latency);
    }
    let (status, resp) = respond(shared, &req, &body);
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    write_response(&stream, status, &resp)
}

fn error_body(msg: &str) -> Value {
    json!({"error": {"message": msg, "type": "mock_error"}})
}

fn respond(shared: &Shared, req: &Request, body: &Value) -> (u16, Value) {
    let b = &shared.behavior;
    if let Some(status) = b.always_fail {
        return (status, error_body("configured failure"));
    }
    if shared.rate_limited.fetch_add(1, Ordering::SeqCst) < b.rate_limit_first {
        return (429, error_body("rate limited"));
    }
    if req.method != "POST" {
        return (404, error_body("not found"));
    }
    match req.path.as_str() {
        "/v1/completions" | "/v1/chat/completions" => {
            shared.stats.completions.fetch_add(1, Ordering::SeqCst);
            let chat = req.path.ends_with("chat/completions");
            let prompt = if chat {
                body.pointer("/messages/0/content").and_then(Value::as_str)
            } else {
                body.get("prompt").and_then(Value::as_str)
            };
            let Some(prompt) = prompt else {
                return (400, error_body("missing prompt"));
            };
            if b.reject_top_k && body.get("top_k").is_some() {
                return (400, error_body("Unrecognized request argument supplied: top_k"));
            }
            if let Some(bad) = &b.fail_prompt_containing {
                if prompt.contains(bad.as_str()) {
                    return (500, error_body("configured prompt failure"));
                }
            }
            let temperature = body.get("temperature").and_then(Value::as_f64).unwrap_or(1.0);
            let seed = body.get("seed").and_then(Value::as_u64);
            let (text, tokens) = mock_answer(prompt, temperature, seed);
            (200, completion_response(&text, &tokens, chat, b.omit_logprobs))
        }
        "/v1/embeddings" => {
            shared.stats.embeddings.fetch_add(1, Ordering::SeqCst);
            let input = body.get("input").and_then(Value::as_str).unwrap_or_default();
            let dim = if b.embedding_dim == 0 { 16 } else { b.embedding_dim };
            let emb = mock_embedding(input, dim);
            (
                200,
                json!({"object": "list", "model": body.get("model"),
                       "data": [{"object": "embedding", "index": 0, "embedding": emb}]}),
            )
        }
        _ => (404, error_body("not found")),
    }
}

fn completion_response(text: &str, tokens: &[(String, f64)], chat: bool, omit_logprobs: bool) -> Value {
    let mut choice = if chat {
        json!({"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"})
    } else {
        json!({"index": 0, "text": text, "finish_reason": "stop"})
    };
    if !omit_logprobs {
        choice["logprobs"] = if chat {
            json!({"content": tokens.iter().map(|(t, lp)| json!({"token": t, "logprob": lp})).collect::<Vec<_>>()})
        } else {
            json!({
                "tokens": tokens.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>(),
                "token_logprobs": tokens.iter().map(|(_, lp)| *lp).collect::<Vec<_>>(),
            })
        };
    }
    json!({"id": "mock-cmpl", "object": if chat { "chat.completion" } else { "text_completion" },
           "model": "mock", "choices": [choice], "system_fingerprint": "mock-1"})
}

fn stable_hash(material: &str) -> u64 {
    let d = Sha256::digest(material.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn words_for(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.gen_range(2..=4);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect()
}

/// The mock's greedy answer to a prompt.
pub fn greedy_answer(prompt: &str) -> String {
    mock_answer(prompt, 0.0, None).0
}

/// Deterministic answer text and per-token logprobs. Greedy answers depend
/// only on the prompt; sampled ones repeat the greedy answer about half the
/// time.
pub fn mock_answer(prompt: &str, temperature: f64, seed: Option<u64>) -> (String, Vec<(String, f64)>) {
    let mut base = ChaCha8Rng::seed_from_u64(stable_hash(prompt));
    let greedy_words = words_for(&mut base);
    let confident = base.gen_bool(0.5);
    let words = if temperature > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&format!("{prompt}\u{0}{seed:?}\u{0}{temperature}")));
        if confident || rng.gen_bool(0.4) {
            greedy_words
        } else {
            words_for(&mut rng)
        }
    } else {
        greedy_words
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&format!("{words:?}{seed:?}")));
    let low_span = if confident {
        None
    } else {
        Some(rng.gen_range(0..words.len()))
    };
    let tokens: Vec<(String, f64)> = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let token = if i == 0 { w.to_string() } else { format!(" {w}") };
            let lp = if Some(i) == low_span {
                -rng.gen_range(1.5..3.0)
            } else {
                -rng.gen_range(0.005..0.15)
            };
            (token, lp)
        })
        .collect();
    let text = words.join(" ");
    (text, tokens)
}

/// Hashed bag-of-words embedding, L2-normalized, so texts sharing words are
/// close in cosine.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 0.05;
    for tok in tokenize(text) {
        let h = stable_hash(&tok);
        v[(h % dim as u64) as usize] += 1.0;
        v[((h >> 32) % dim as u64) as usize] += 0.5;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}
