//! TCP front end for device sessions.
//!
//! One thread per connection; each connection owns its decode buffer and
//! takes the core lock once per message. Framing errors drop the
//! connection without a response.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::clock::Clock;
use crate::protocol::{StreamDecoder, encode_message};

use super::{BrokerCore, DeviceSession, SessionVerdict};

const POLL_INTERVAL: Duration = Duration::from_millis(100);

/// A running device-side listener. Raise the shutdown flag and `join` to
/// stop it; session threads notice within one poll interval.
pub struct BrokerServer {
    local_addr: std::net::SocketAddr,
    accept_thread: Option<JoinHandle<()>>,
    shutdown: Arc<AtomicBool>,
}

impl BrokerServer {
    /// Binds `listen_address` and starts accepting device connections.
    pub fn start(
        listen_address: &str,
        core: Arc<Mutex<BrokerCore>>,
        clock: Arc<dyn Clock>,
        shutdown: Arc<AtomicBool>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen_address)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        log::info!("event=listening proto=device addr={local_addr}");

        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || {
            let mut sessions: Vec<JoinHandle<()>> = Vec::new();
            while !accept_shutdown.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::debug!("event=session_opened peer={peer}");
                        let core = Arc::clone(&core);
                        let clock = Arc::clone(&clock);
                        let shutdown = Arc::clone(&accept_shutdown);
                        sessions.push(std::thread::spawn(move || {
                            serve_session(stream, core, clock, shutdown);
                        }));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(POLL_INTERVAL);
                    }
                    Err(e) => {
                        log::warn!("event=accept_failed error={e}");
                        std::thread::sleep(POLL_INTERVAL);
                    }
                }
                sessions.retain(|h| !h.is_finished());
            }
            for handle in sessions {
                let _ = handle.join();
            }
        });

        Ok(Self { local_addr, accept_thread: Some(accept_thread), shutdown })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    /// Waits for the accept loop and every session thread to finish.
    pub fn join(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_session(
    mut stream: TcpStream,
    core: Arc<Mutex<BrokerCore>>,
    clock: Arc<dyn Clock>,
    shutdown: Arc<AtomicBool>,
) {
    if stream.set_read_timeout(Some(POLL_INTERVAL)).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let mut session = DeviceSession::new();
    let mut decoder = StreamDecoder::new();
    let mut buf = [0u8; 4096];

    while !shutdown.load(Ordering::Relaxed) {
        let n = match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                continue;
            }
            Err(_) => break,
        };
        decoder.feed(&buf[..n]);
        loop {
            let msg = match decoder.next_message() {
                Ok(Some(msg)) => msg,
                Ok(None) => break,
                Err(e) => {
                    log::warn!("event=framing_error error={e}");
                    return;
                }
            };
            let now_ms = clock.now_ms();
            let (responses, verdict) = {
                let mut core = core.lock().expect("broker core lock poisoned");
                core.handle_message(&mut session, &msg, now_ms)
            };
            for response in &responses {
                let bytes = encode_message(response).expect("broker builds valid responses");
                if stream.write_all(&bytes).is_err() {
                    return;
                }
            }
            if verdict == SessionVerdict::Disconnect {
                let _ = stream.flush();
                return;
            }
        }
    }
}
