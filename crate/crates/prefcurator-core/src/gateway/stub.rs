//! Instrumented in-process stub of the scoring service, for contract tests
//! and local smoke runs. Speaks just enough HTTP/1.1 for the gateway client.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::hashing::{stable_hash, unit_from_hash};

type RewardFn = dyn Fn(&str, &str) -> f64 + Send + Sync;

/// What the stub does with each request.
pub struct StubBehavior {
    /// Reward per (prompt, response).
    pub reward: Arc<RewardFn>,
    /// Return HTTP 500 for this many attempts of each distinct body.
    pub fail_first_attempts: u32,
    /// Fixed per-request think time.
    pub processing_delay: Duration,
    /// Add a body-hash-dependent delay so chunk completion order is
    /// scrambled relative to dispatch order.
    pub scramble_completion: bool,
    /// Respond with these exact bytes instead of a well-formed response.
    pub raw_response_body: Option<String>,
}

impl Default for StubBehavior {
    fn default() -> Self {
        Self {
            reward: Arc::new(|_, _| 1.5),
            fail_first_attempts: 0,
            processing_delay: Duration::from_millis(2),
            scramble_completion: false,
            raw_response_body: None,
        }
    }
}

#[derive(Default)]
struct StubState {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    total_requests: AtomicUsize,
    /// body hash -> attempt count; retries of identical bytes share a slot.
    attempts: Mutex<HashMap<u64, u32>>,
    bearer_tokens: Mutex<Vec<Option<String>>>,
    bad_paths: AtomicUsize,
}

/// A running stub server. Dropping it stops the listener.
pub struct StubServer {
    addr: std::net::SocketAddr,
    state: Arc<StubState>,
    stop: Arc<AtomicBool>,
    acceptor: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(behavior: StubBehavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(StubState::default());
        let stop = Arc::new(AtomicBool::new(false));
        let behavior = Arc::new(behavior);

        let acceptor = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let state = Arc::clone(&state);
                    let behavior = Arc::clone(&behavior);
                    std::thread::spawn(move || handle_connection(stream, &state, &behavior));
                }
            })
        };

        Self {
            addr,
            state,
            stop,
            acceptor: Some(acceptor),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// High-water mark of concurrent in-flight requests.
    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn total_requests(&self) -> usize {
        self.state.total_requests.load(Ordering::SeqCst)
    }

    /// Number of distinct request bodies seen.
    pub fn distinct_bodies(&self) -> usize {
        self.state.attempts.lock().unwrap().len()
    }

    pub fn bearer_tokens(&self) -> Vec<Option<String>> {
        self.state.bearer_tokens.lock().unwrap().clone()
    }

    pub fn bad_path_requests(&self) -> usize {
        self.state.bad_paths.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, state: &StubState, behavior: &StubBehavior) {
    let in_flight = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(in_flight, Ordering::SeqCst);
    state.total_requests.fetch_add(1, Ordering::SeqCst);

    let result = serve_request(stream, state, behavior);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    let _ = result;
}

fn serve_request(
    mut stream: TcpStream,
    state: &StubState,
    behavior: &StubBehavior,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;

    let mut content_length = 0usize;
    let mut bearer = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            } else if name == "authorization" {
                bearer = value.strip_prefix("Bearer ").map(str::to_string);
            }
        }
    }
    state.bearer_tokens.lock().unwrap().push(bearer);

    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    if !request_line.starts_with("POST /v1/score ") {
        state.bad_paths.fetch_add(1, Ordering::SeqCst);
        return write_response(&mut stream, 404, "");
    }

    let body_hash = stable_hash(&[body.as_str().into()]);
    let attempt = {
        let mut attempts = state.attempts.lock().unwrap();
        let slot = attempts.entry(body_hash).or_insert(0);
        *slot += 1;
        *slot
    };

    std::thread::sleep(behavior.processing_delay);
    if behavior.scramble_completion {
        let extra = (unit_from_hash(body_hash) * 40.0) as u64;
        std::thread::sleep(Duration::from_millis(extra));
    }

    if attempt <= behavior.fail_first_attempts {
        return write_response(&mut stream, 500, "");
    }

    if let Some(raw) = &behavior.raw_response_body {
        return write_response(&mut stream, 200, raw);
    }

    // Echo one reward per item, positionally aligned.
    let parsed: serde_json::Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(_) => return write_response(&mut stream, 400, ""),
    };
    let items = parsed["items"].as_array().cloned().unwrap_or_default();
    let rewards: Vec<f64> = items
        .iter()
        .map(|item| {
            let prompt = item["prompt"].as_str().unwrap_or("");
            let response = item["response"].as_str().unwrap_or("");
            (behavior.reward)(prompt, response)
        })
        .collect();
    let response_body =
        serde_json::to_string(&serde_json::json!({ "rewards": rewards })).unwrap();
    write_response(&mut stream, 200, &response_body)
}

fn write_response(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        _ => "Internal Server Error",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\n\
         content-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}
