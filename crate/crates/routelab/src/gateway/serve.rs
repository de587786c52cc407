//! Minimal threaded HTTP serve mode for the gateway.
//!
//! `POST /route {"text": ..., "user": ...}` routes and executes one query;
//! `GET /stats` reports the strong-fraction per user. The implementation
//! is a small hand-rolled HTTP/1.1 loop over `std::net`, enough for local
//! experiments and tests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::json;

use super::{execute, Decision, ModelBackend, RouterConfig};
use crate::error::{Error, Result};
use crate::textcore::Vocab;

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Bind address, e.g. `127.0.0.1:8080`; port 0 picks a free port.
    pub addr: String,
    /// Optional JSONL transcript log, one transcript per line.
    pub transcript_log: Option<PathBuf>,
}

struct ServerState {
    config: RouterConfig,
    vocab: Vocab,
    backends: BTreeMap<String, ModelBackend>,
    /// user -> (strong, total)
    stats: Mutex<BTreeMap<String, (u64, u64)>>,
    log: Option<Mutex<std::fs::File>>,
}

/// Handle to a running server; dropping it without `shutdown` leaves the
/// server thread running for the life of the process.
pub struct ServeHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // nudge the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Start serving in a background thread.
pub fn serve(
    config: RouterConfig,
    vocab: Vocab,
    backends: BTreeMap<String, ModelBackend>,
    options: ServeOptions,
) -> Result<ServeHandle> {
    config.validate()?;
    let listener = TcpListener::bind(&options.addr)
        .map_err(|e| Error::io(options.addr.clone(), e))?;
    let addr = listener.local_addr().map_err(|e| Error::io(options.addr.clone(), e))?;
    let log = match &options.transcript_log {
        Some(path) => Some(Mutex::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?,
        )),
        None => None,
    };
    let state = Arc::new(ServerState {
        config,
        vocab,
        backends,
        stats: Mutex::new(BTreeMap::new()),
        log,
    });
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let join = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            if let Ok(stream) = stream {
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &state);
                });
            }
        }
    });
    Ok(ServeHandle {
        addr,
        stop,
        join: Some(join),
    })
}

fn handle_connection(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let (status, payload) = match (method.as_str(), path.as_str()) {
        ("POST", "/route") => handle_route(&body, state),
        ("GET", "/stats") => handle_stats(state),
        _ => (404, json!({"error": "not found"})),
    };
    respond(stream, status, &payload)
}

#[derive(Deserialize)]
struct RouteRequest {
    text: String,
    #[serde(default)]
    user: Option<String>,
}

fn handle_route(body: &[u8], state: &ServerState) -> (u16, serde_json::Value) {
    let request: RouteRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return (400, json!({"error": format!("bad request: {e}")})),
    };
    let query = state.vocab.tokenize(&request.text);
    let user = request.user.as_deref().unwrap_or("anonymous");
    match execute(&state.config, &state.backends, &state.vocab, &query, Some(user)) {
        Ok((transcript, response)) => {
            {
                let mut stats = state.stats.lock().unwrap();
                let entry = stats.entry(user.to_string()).or_insert((0, 0));
                entry.1 += 1;
                if transcript.decision == Decision::Strong {
                    entry.0 += 1;
                }
            }
            if let Some(log) = &state.log {
                let mut file = log.lock().unwrap();
                if let Ok(line) = serde_json::to_string(&transcript) {
                    let _ = writeln!(file, "{line}");
                }
            }
            (
                200,
                json!({
                    "decision": transcript.decision,
                    "score": transcript.score,
                    "response": response,
                }),
            )
        }
        Err(e) => (502, json!({"error": e.to_string()})),
    }
}

fn handle_stats(state: &ServerState) -> (u16, serde_json::Value) {
    let stats = state.stats.lock().unwrap();
    let fractions: BTreeMap<String, f64> = stats
        .iter()
        .map(|(user, &(strong, total))| (user.clone(), strong as f64 / total as f64))
        .collect();
    (200, json!(fractions))
}

fn respond(mut stream: TcpStream, status: u16, payload: &serde_json::Value) -> std::io::Result<()> {
    let body = payload.to_string();
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{body}",
        body.len()
    )
}
