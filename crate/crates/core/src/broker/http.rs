//! Minimal HTTP/1.1 query surface over the broker core.
//!
//! Three GET routes, JSON in, JSON out, `Connection: close`:
//!
//! ```text
//! /devices                                  -> [{"device":..,"online":..,"last_seen_ms":..}]
//! /devices/{id}/pins/{n}/latest             -> {"pin":..,"value":..,"updated_at_ms":..,"stale":..}
//! /devices/{id}/pins/{n}/history?from=&to=  -> [{"ts":..,"value":..}]
//! ```
//!
//! `from`/`to` default to the full range; 404 covers unknown values and
//! routes, 400 covers bad ranges and unparsable parameters.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;

use crate::clock::Clock;

use super::{BrokerCore, BrokerError};

const POLL_INTERVAL: Duration = Duration::from_millis(100);
const MAX_REQUEST_BYTES: usize = 8192;

/// A running HTTP listener; same lifecycle as
/// [`BrokerServer`](super::BrokerServer).
pub struct HttpServer {
    local_addr: std::net::SocketAddr,
    accept_thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn start(
        listen_address: &str,
        core: Arc<Mutex<BrokerCore>>,
        clock: Arc<dyn Clock>,
        shutdown: Arc<AtomicBool>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen_address)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        log::info!("event=listening proto=http addr={local_addr}");

        let accept_thread = std::thread::spawn(move || {
            let mut workers: Vec<JoinHandle<()>> = Vec::new();
            while !shutdown.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _peer)) => {
                        let core = Arc::clone(&core);
                        let clock = Arc::clone(&clock);
                        workers.push(std::thread::spawn(move || serve_request(stream, core, clock)));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(POLL_INTERVAL);
                    }
                    Err(e) => {
                        log::warn!("event=http_accept_failed error={e}");
                        std::thread::sleep(POLL_INTERVAL);
                    }
                }
                workers.retain(|h| !h.is_finished());
            }
            for handle in workers {
                let _ = handle.join();
            }
        });

        Ok(Self { local_addr, accept_thread: Some(accept_thread) })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn join(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_request(mut stream: TcpStream, core: Arc<Mutex<BrokerCore>>, clock: Arc<dyn Clock>) {
    if stream.set_read_timeout(Some(Duration::from_secs(5))).is_err() {
        return;
    }
    let Some(request_line) = read_request_head(&mut stream) else {
        return;
    };
    let mut parts = request_line.split_whitespace();
    let (method, target) = match (parts.next(), parts.next()) {
        (Some(m), Some(t)) => (m, t),
        _ => {
            respond(&mut stream, 400, &json!({"error": "malformed request"}));
            return;
        }
    };
    if method != "GET" {
        respond(&mut stream, 405, &json!({"error": "method not allowed"}));
        return;
    }
    let (status, body) = route(target, &core, clock.now_ms());
    respond(&mut stream, status, &body);
}

/// Reads up to the blank line ending the header block; returns the request
/// line. GET requests carry no body, so nothing else is needed.
fn read_request_head(stream: &mut TcpStream) -> Option<String> {
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while head.len() < MAX_REQUEST_BYTES {
        match stream.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {
                head.push(byte[0]);
                if head.ends_with(b"\r\n\r\n") || head.ends_with(b"\n\n") {
                    break;
                }
            }
            Err(_) => return None,
        }
    }
    let text = String::from_utf8_lossy(&head);
    text.lines().next().map(str::to_string)
}

fn route(target: &str, core: &Mutex<BrokerCore>, now_ms: u64) -> (u16, serde_json::Value) {
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (target, None),
    };
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let core = core.lock().expect("broker core lock poisoned");

    match segments.as_slice() {
        ["devices"] => {
            let listed: Vec<_> = core
                .list_devices(now_ms)
                .into_iter()
                .map(|d| json!({"device": d.device_id, "online": d.online, "last_seen_ms": d.last_seen_ms}))
                .collect();
            (200, serde_json::Value::Array(listed))
        }
        ["devices", device, "pins", pin, "latest"] => {
            let Ok(pin) = pin.parse::<u8>() else {
                return (400, json!({"error": "pin must be 0..=255"}));
            };
            match core.get_latest(device, pin, now_ms) {
                Ok(latest) => (
                    200,
                    json!({
                        "pin": latest.pin,
                        "value": latest.value,
                        "updated_at_ms": latest.updated_at_ms,
                        "stale": latest.stale,
                    }),
                ),
                Err(BrokerError::NotFound) => (404, json!({"error": "not found"})),
                Err(e) => (500, json!({"error": e.to_string()})),
            }
        }
        ["devices", device, "pins", pin, "history"] => {
            let Ok(pin) = pin.parse::<u8>() else {
                return (400, json!({"error": "pin must be 0..=255"}));
            };
            let (from_ms, to_ms) = match parse_window(query) {
                Ok(window) => window,
                Err(msg) => return (400, json!({"error": msg})),
            };
            match core.get_history(device, pin, from_ms, to_ms) {
                Ok(entries) => {
                    let rows: Vec<_> =
                        entries.iter().map(|e| json!({"ts": e.ts, "value": e.value})).collect();
                    (200, serde_json::Value::Array(rows))
                }
                Err(BrokerError::BadRange { .. }) => (400, json!({"error": "bad range: from > to"})),
                Err(e) => (500, json!({"error": e.to_string()})),
            }
        }
        _ => (404, json!({"error": "not found"})),
    }
}

fn parse_window(query: Option<&str>) -> Result<(u64, u64), String> {
    let mut from_ms = 0u64;
    let mut to_ms = u64::MAX;
    for pair in query.unwrap_or("").split('&').filter(|s| !s.is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| format!("bad query pair {pair:?}"))?;
        let parsed: u64 = value.parse().map_err(|_| format!("bad {key} value {value:?}"))?;
        match key {
            "from" => from_ms = parsed,
            "to" => to_ms = parsed,
            _ => return Err(format!("unknown query key {key:?}")),
        }
    }
    Ok((from_ms, to_ms))
}

fn respond(stream: &mut TcpStream, status: u16, body: &serde_json::Value) {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    };
    let payload = body.to_string();
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        payload.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}
