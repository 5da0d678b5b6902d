//! Drives the device state machine against a transport and a clock.
//!
//! The loop computes the machine's next wake time, blocks on the socket at
//! most that long (a virtual clock shrinks the real block to a poll), and
//! feeds ticks, received messages and connection changes back into
//! [`step`](super::step).

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::clock::Clock;
use crate::protocol::{Command, StreamDecoder, encode_message};
use crate::sensor::{SensorError, SensorState, decode_frame, encode_frame};

use super::{
    DeviceAction, DeviceConfig, DeviceError, DeviceEvent, DeviceState, FailureReason, Phase,
    next_wake, step,
};

/// How long to wait for an auth response before treating the connection
/// as dead (real milliseconds).
const AUTH_WAIT_MS: u64 = 10_000;
/// Cap on any single socket block so shutdown stays responsive.
const MAX_BLOCK_MS: u64 = 500;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

/// Outcome of one receive attempt.
#[derive(Debug)]
pub enum Recv {
    Data(Vec<u8>),
    Timeout,
    Closed,
}

/// Byte transport to the broker. One instance per device; `open` may be
/// called again after a close to reconnect.
pub trait Transport {
    fn open(&mut self) -> io::Result<()>;
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn recv(&mut self, max_wait: Duration) -> io::Result<Recv>;
    fn close(&mut self);
}

/// TCP transport used by real device runs.
#[derive(Debug)]
pub struct TcpTransport {
    address: String,
    stream: Option<TcpStream>,
}

impl TcpTransport {
    pub fn new(address: &str) -> Self {
        Self { address: address.to_string(), stream: None }
    }
}

impl Transport for TcpTransport {
    fn open(&mut self) -> io::Result<()> {
        let addr = self
            .address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing"))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT)?;
        stream.set_nodelay(true)?;
        self.stream = Some(stream);
        Ok(())
    }

    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self.stream.as_mut() {
            Some(stream) => stream.write_all(bytes),
            None => Err(io::Error::new(io::ErrorKind::NotConnected, "transport closed")),
        }
    }

    fn recv(&mut self, max_wait: Duration) -> io::Result<Recv> {
        let Some(stream) = self.stream.as_mut() else {
            return Ok(Recv::Closed);
        };
        stream.set_read_timeout(Some(max_wait.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; 4096];
        match stream.read(&mut buf) {
            Ok(0) => Ok(Recv::Closed),
            Ok(n) => Ok(Recv::Data(buf[..n].to_vec())),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Ok(Recv::Timeout)
            }
            Err(e) => Err(e),
        }
    }

    fn close(&mut self) {
        self.stream = None;
    }
}

/// Counters reported by [`run_device`] when it stops cleanly.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub samples: u64,
    pub publishes: u64,
    pub reconnects: u64,
}

/// Runs one device until the duration elapses (per the given clock) or the
/// stop flag is raised. Only an auth rejection is fatal; every transport
/// failure folds into reconnect-with-backoff.
///
/// Each sample is pushed through the sensor frame codec (encode + decode)
/// before publishing, mirroring the path from part to microcontroller.
pub fn run_device(
    config: &DeviceConfig,
    sensor: &mut SensorState,
    transport: &mut dyn Transport,
    clock: &dyn Clock,
    duration_ms: Option<u64>,
    stop: &AtomicBool,
) -> Result<RunStats, DeviceError> {
    config.validate()?;
    let started = clock.now_ms();
    let mut state = DeviceState::new(config);
    let mut decoder = StreamDecoder::new();
    let mut stats = RunStats::default();
    let mut pending: VecDeque<DeviceEvent> = VecDeque::new();

    let expired = |now: u64| duration_ms.is_some_and(|d| now.saturating_sub(started) >= d);

    loop {
        if stop.load(Ordering::Relaxed) || expired(clock.now_ms()) {
            transport.close();
            return Ok(stats);
        }

        // One event per iteration keeps the stop/duration checks between
        // every transition.
        let Some(event) = pending.pop_front() else {
            wait_for_event(&state, config, transport, clock, &mut decoder, &mut pending, stop);
            continue;
        };

        {
            for action in step(&mut state, config, event) {
                match action {
                    DeviceAction::OpenConnection => {
                        decoder = StreamDecoder::new();
                        match transport.open() {
                            Ok(()) => {
                                log::debug!("device={} event=connected", config.device_id);
                                pending.push_back(DeviceEvent::ConnectionOpened {
                                    now_ms: clock.now_ms(),
                                });
                            }
                            Err(e) => {
                                log::debug!("device={} event=connect_failed error={e}", config.device_id);
                                pending.push_back(DeviceEvent::ConnectionClosed {
                                    now_ms: clock.now_ms(),
                                });
                                stats.reconnects += 1;
                            }
                        }
                    }
                    DeviceAction::Send(msg) => {
                        let is_publish = msg.command == Command::Hardware;
                        let bytes = encode_message(&msg).expect("state machine builds valid messages");
                        match transport.send(&bytes) {
                            Ok(()) => {
                                if is_publish {
                                    stats.publishes += 1;
                                }
                            }
                            Err(e) => {
                                log::debug!("device={} event=send_failed error={e}", config.device_id);
                                transport.close();
                                pending.push_back(DeviceEvent::ConnectionClosed {
                                    now_ms: clock.now_ms(),
                                });
                                stats.reconnects += 1;
                            }
                        }
                    }
                    DeviceAction::CloseConnection => transport.close(),
                    DeviceAction::ScheduleRetry { delay_ms } => {
                        log::debug!("device={} event=retry_scheduled delay_ms={delay_ms}", config.device_id);
                    }
                    DeviceAction::TakeSample => match sensor.sample(clock.now_ms()) {
                        Ok(reading) => {
                            let frame = encode_frame(&reading)?;
                            let reading = decode_frame(&frame, reading.timestamp_ms)?;
                            stats.samples += 1;
                            pending.push_back(DeviceEvent::SampleTaken {
                                now_ms: clock.now_ms(),
                                reading,
                            });
                        }
                        Err(SensorError::TooSoon { wait_ms }) => {
                            log::debug!("device={} event=sample_too_soon wait_ms={wait_ms}", config.device_id);
                        }
                        Err(e) => return Err(e.into()),
                    },
                    DeviceAction::Fail(FailureReason::AuthRejected) => {
                        transport.close();
                        return Err(DeviceError::AuthRejected);
                    }
                }
            }
        }
    }
}

/// Blocks until something happens: the next self-scheduled tick comes due,
/// bytes arrive, or the connection drops. Pushes the resulting events.
///
/// The socket is only polled in phases that own a live connection; while
/// disconnected the wait is a plain sleep until the retry deadline.
fn wait_for_event(
    state: &DeviceState,
    config: &DeviceConfig,
    transport: &mut dyn Transport,
    clock: &dyn Clock,
    decoder: &mut StreamDecoder,
    pending: &mut VecDeque<DeviceEvent>,
    stop: &AtomicBool,
) {
    let connected = matches!(state.phase, Phase::Authenticating | Phase::Online);

    let Some(deadline) = next_wake(state, config) else {
        // Waiting on the broker's auth response: no scheduled tick exists,
        // so bound the wait in real time.
        let wait_started = Instant::now();
        while pending.is_empty() && !stop.load(Ordering::Relaxed) {
            if wait_started.elapsed().as_millis() as u64 >= AUTH_WAIT_MS {
                transport.close();
                pending.push_back(DeviceEvent::ConnectionClosed { now_ms: clock.now_ms() });
                return;
            }
            poll_socket(transport, clock, decoder, pending, MAX_BLOCK_MS);
        }
        return;
    };

    while pending.is_empty() && !stop.load(Ordering::Relaxed) {
        let now = clock.now_ms();
        if now >= deadline {
            // Drain the socket once so responses are seen before the tick.
            if connected {
                poll_socket(transport, clock, decoder, pending, 0);
            }
            pending.push_back(DeviceEvent::TimerTick { now_ms: now });
            return;
        }
        let remaining = deadline - now;
        if connected {
            let block = if clock.is_virtual() { 1 } else { remaining.min(MAX_BLOCK_MS) };
            let got_data = poll_socket(transport, clock, decoder, pending, block);
            if pending.is_empty() && !got_data && clock.is_virtual() {
                // quiet socket: virtual time may jump straight to the tick
                clock.sleep_ms(deadline.saturating_sub(clock.now_ms()));
            }
        } else {
            let nap = if clock.is_virtual() { remaining } else { remaining.min(MAX_BLOCK_MS) };
            clock.sleep_ms(nap);
        }
    }
}

fn poll_socket(
    transport: &mut dyn Transport,
    clock: &dyn Clock,
    decoder: &mut StreamDecoder,
    pending: &mut VecDeque<DeviceEvent>,
    block_ms: u64,
) -> bool {
    match transport.recv(Duration::from_millis(block_ms)) {
        Ok(Recv::Data(bytes)) => {
            decoder.feed(&bytes);
            loop {
                match decoder.next_message() {
                    Ok(Some(message)) => pending.push_back(DeviceEvent::MessageReceived {
                        now_ms: clock.now_ms(),
                        message,
                    }),
                    Ok(None) => break,
                    Err(e) => {
                        log::warn!("event=decode_error error={e}");
                        transport.close();
                        pending.push_back(DeviceEvent::ConnectionClosed { now_ms: clock.now_ms() });
                        break;
                    }
                }
            }
            true
        }
        Ok(Recv::Timeout) => false,
        Ok(Recv::Closed) | Err(_) => {
            transport.close();
            pending.push_back(DeviceEvent::ConnectionClosed { now_ms: clock.now_ms() });
            true
        }
    }
}
