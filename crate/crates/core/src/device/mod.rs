//! Emulated device firmware: connect, authenticate, sample, publish,
//! heart-beat, reconnect with backoff.
//!
//! All behaviour lives in [`step`], a pure transition function from
//! `(state, event)` to `(state', actions)`. It performs no I/O and draws
//! randomness only from the seeded generator inside [`DeviceState`], so
//! replaying a recorded event sequence reproduces the identical action
//! sequence. [`runtime`] drives the machine against real sockets and a
//! clock.

pub mod runtime;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Command, ProtocolMessage, StatusCode};
use crate::sensor::{MIN_SAMPLE_INTERVAL_MS, Reading};

pub use runtime::{Recv, RunStats, TcpTransport, Transport, run_device};

/// Virtual pin carrying temperature values.
pub const TEMPERATURE_PIN: u8 = 0;
/// Virtual pin carrying humidity values.
pub const HUMIDITY_PIN: u8 = 1;

pub const DEFAULT_SAMPLE_INTERVAL_MS: u64 = 2000;
pub const DEFAULT_HEARTBEAT_INTERVAL_MS: u64 = 10_000;
pub const DEFAULT_BACKOFF_BASE_MS: u64 = 1000;
pub const DEFAULT_BACKOFF_CAP_MS: u64 = 32_000;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("broker rejected the auth token")]
    AuthRejected,
    #[error("invalid device config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sensor(#[from] crate::sensor::SensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub device_id: String,
    pub auth_token: String,
    pub broker_address: String,
    #[serde(default = "default_sample_interval")]
    pub sample_interval_ms: u64,
    #[serde(default = "default_heartbeat_interval")]
    pub heartbeat_interval_ms: u64,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap")]
    pub backoff_cap_ms: u64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_sample_interval() -> u64 {
    DEFAULT_SAMPLE_INTERVAL_MS
}
fn default_heartbeat_interval() -> u64 {
    DEFAULT_HEARTBEAT_INTERVAL_MS
}
fn default_backoff_base() -> u64 {
    DEFAULT_BACKOFF_BASE_MS
}
fn default_backoff_cap() -> u64 {
    DEFAULT_BACKOFF_CAP_MS
}

impl DeviceConfig {
    pub fn new(device_id: &str, auth_token: &str, broker_address: &str) -> Self {
        Self {
            device_id: device_id.to_string(),
            auth_token: auth_token.to_string(),
            broker_address: broker_address.to_string(),
            sample_interval_ms: DEFAULT_SAMPLE_INTERVAL_MS,
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            backoff_base_ms: DEFAULT_BACKOFF_BASE_MS,
            backoff_cap_ms: DEFAULT_BACKOFF_CAP_MS,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.device_id.is_empty() {
            return Err(DeviceError::InvalidConfig("device_id must not be empty".into()));
        }
        if self.auth_token.is_empty() {
            return Err(DeviceError::InvalidConfig("auth_token must not be empty".into()));
        }
        if self.sample_interval_ms < MIN_SAMPLE_INTERVAL_MS {
            return Err(DeviceError::InvalidConfig(format!(
                "sample_interval_ms must be >= {MIN_SAMPLE_INTERVAL_MS}"
            )));
        }
        if self.backoff_base_ms == 0 || self.backoff_base_ms > self.backoff_cap_ms {
            return Err(DeviceError::InvalidConfig(
                "backoff_base_ms must be in 1..=backoff_cap_ms".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Disconnected,
    Connecting,
    Authenticating,
    Online,
}

/// Mutable firmware state. Message ids count up from 1 and wrap
/// 65535 -> 1; zero is reserved. `last_heartbeat_ms` tracks the last
/// outbound message of any kind, since any traffic proves liveness.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub phase: Phase,
    pub next_message_id: u16,
    pub consecutive_failures: u32,
    pub pending_auth_id: Option<u16>,
    pub last_publish_ms: Option<u64>,
    pub last_heartbeat_ms: Option<u64>,
    pub retry_at_ms: Option<u64>,
    rng: ChaCha8Rng,
}

impl DeviceState {
    pub fn new(config: &DeviceConfig) -> Self {
        Self {
            phase: Phase::Disconnected,
            next_message_id: 1,
            consecutive_failures: 0,
            pending_auth_id: None,
            last_publish_ms: None,
            last_heartbeat_ms: None,
            retry_at_ms: None,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        }
    }

    fn take_message_id(&mut self) -> u16 {
        let id = self.next_message_id;
        self.next_message_id = if id == u16::MAX { 1 } else { id + 1 };
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceEvent {
    TimerTick { now_ms: u64 },
    ConnectionOpened { now_ms: u64 },
    ConnectionClosed { now_ms: u64 },
    MessageReceived { now_ms: u64, message: ProtocolMessage },
    /// Runtime reply to a `TakeSample` action, carrying the reading.
    SampleTaken { now_ms: u64, reading: Reading },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    AuthRejected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceAction {
    OpenConnection,
    Send(ProtocolMessage),
    CloseConnection,
    ScheduleRetry { delay_ms: u64 },
    TakeSample,
    /// Terminal condition; the runtime stops the device.
    Fail(FailureReason),
}

/// Capped exponential backoff with seeded jitter.
///
/// `min(base * 2^(failures-1), cap)` plus a uniform draw from
/// `[0, 10%]` of that value (integer milliseconds).
pub fn next_backoff<R: Rng>(consecutive_failures: u32, config: &DeviceConfig, rng: &mut R) -> u64 {
    let exponent = consecutive_failures.saturating_sub(1).min(63);
    let delay = config
        .backoff_base_ms
        .saturating_mul(1u64.checked_shl(exponent).unwrap_or(u64::MAX))
        .min(config.backoff_cap_ms);
    let jitter_cap = delay / 10;
    let jitter = if jitter_cap > 0 { rng.random_range(0..=jitter_cap) } else { 0 };
    delay + jitter
}

/// Absolute time of the next self-scheduled event, if the machine has one.
///
/// `None` while waiting on I/O (connecting or authenticating). A return of
/// `Some(0)` means "due immediately".
pub fn next_wake(state: &DeviceState, config: &DeviceConfig) -> Option<u64> {
    match state.phase {
        Phase::Disconnected => Some(state.retry_at_ms.unwrap_or(0)),
        Phase::Connecting | Phase::Authenticating => None,
        Phase::Online => {
            let sample_due = state.last_publish_ms.map_or(0, |t| t + config.sample_interval_ms);
            let heartbeat_due =
                state.last_heartbeat_ms.map_or(0, |t| t + config.heartbeat_interval_ms);
            Some(sample_due.min(heartbeat_due))
        }
    }
}

/// Advances the machine by one event. Pure: the only effects are the
/// returned actions and the updated state.
pub fn step(state: &mut DeviceState, config: &DeviceConfig, event: DeviceEvent) -> Vec<DeviceAction> {
    match event {
        DeviceEvent::TimerTick { now_ms } => on_tick(state, config, now_ms),
        DeviceEvent::ConnectionOpened { now_ms } => on_opened(state, config, now_ms),
        DeviceEvent::ConnectionClosed { now_ms } => on_closed(state, config, now_ms),
        DeviceEvent::MessageReceived { message, .. } => on_message(state, message),
        DeviceEvent::SampleTaken { now_ms, reading } => on_sample(state, now_ms, reading),
    }
}

fn on_tick(state: &mut DeviceState, config: &DeviceConfig, now_ms: u64) -> Vec<DeviceAction> {
    match state.phase {
        Phase::Disconnected => {
            if state.retry_at_ms.is_some_and(|t| now_ms < t) {
                return Vec::new();
            }
            state.phase = Phase::Connecting;
            state.retry_at_ms = None;
            vec![DeviceAction::OpenConnection]
        }
        Phase::Connecting | Phase::Authenticating => Vec::new(),
        Phase::Online => {
            let sample_due = state
                .last_publish_ms
                .is_none_or(|t| now_ms.saturating_sub(t) >= config.sample_interval_ms);
            if sample_due {
                state.last_publish_ms = Some(now_ms);
                return vec![DeviceAction::TakeSample];
            }
            let heartbeat_due = state
                .last_heartbeat_ms
                .is_none_or(|t| now_ms.saturating_sub(t) >= config.heartbeat_interval_ms);
            if heartbeat_due {
                state.last_heartbeat_ms = Some(now_ms);
                let id = state.take_message_id();
                return vec![DeviceAction::Send(ProtocolMessage::ping(id))];
            }
            Vec::new()
        }
    }
}

fn on_opened(state: &mut DeviceState, config: &DeviceConfig, now_ms: u64) -> Vec<DeviceAction> {
    if state.phase != Phase::Connecting {
        return Vec::new();
    }
    let id = state.take_message_id();
    state.phase = Phase::Authenticating;
    state.pending_auth_id = Some(id);
    state.last_heartbeat_ms = Some(now_ms);
    vec![DeviceAction::Send(ProtocolMessage::login(id, &config.auth_token))]
}

fn on_closed(state: &mut DeviceState, config: &DeviceConfig, now_ms: u64) -> Vec<DeviceAction> {
    if state.phase == Phase::Disconnected {
        return Vec::new();
    }
    state.phase = Phase::Disconnected;
    state.pending_auth_id = None;
    state.consecutive_failures += 1;
    let delay_ms = next_backoff(state.consecutive_failures, config, &mut state.rng);
    state.retry_at_ms = Some(now_ms + delay_ms);
    vec![DeviceAction::ScheduleRetry { delay_ms }]
}

fn on_message(state: &mut DeviceState, message: ProtocolMessage) -> Vec<DeviceAction> {
    if message.command != Command::Response {
        return Vec::new();
    }
    let Some(status) = message.status() else { return Vec::new() };
    if state.phase == Phase::Authenticating && state.pending_auth_id == Some(message.message_id) {
        return match status {
            StatusCode::Ok => {
                state.phase = Phase::Online;
                state.pending_auth_id = None;
                state.consecutive_failures = 0;
                Vec::new()
            }
            StatusCode::InvalidToken => {
                state.phase = Phase::Disconnected;
                state.pending_auth_id = None;
                vec![DeviceAction::CloseConnection, DeviceAction::Fail(FailureReason::AuthRejected)]
            }
            _ => Vec::new(),
        };
    }
    // unsolicited responses (e.g. ping acks) need no reaction
    Vec::new()
}

fn on_sample(state: &mut DeviceState, now_ms: u64, reading: Reading) -> Vec<DeviceAction> {
    if state.phase != Phase::Online {
        return Vec::new();
    }
    state.last_heartbeat_ms = Some(now_ms);
    let temp_id = state.take_message_id();
    let hum_id = state.take_message_id();
    vec![
        DeviceAction::Send(ProtocolMessage::hardware_write(
            temp_id,
            TEMPERATURE_PIN,
            &format_value(reading.temperature_c),
        )),
        DeviceAction::Send(ProtocolMessage::hardware_write(
            hum_id,
            HUMIDITY_PIN,
            &format_value(reading.humidity_rh),
        )),
    ]
}

/// Wire formatting for published values: exactly one fractional digit,
/// leading `-` for negatives (`23.4`, `56.0`, `-10.1`).
pub fn format_value(value: f64) -> String {
    format!("{value:.1}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::encode_hardware_body;

    fn config() -> DeviceConfig {
        DeviceConfig::new("dev-1", "secret", "127.0.0.1:1")
    }

    fn go_online(state: &mut DeviceState, cfg: &DeviceConfig, now: u64) {
        let actions = step(state, cfg, DeviceEvent::TimerTick { now_ms: now });
        assert_eq!(actions, vec![DeviceAction::OpenConnection]);
        let actions = step(state, cfg, DeviceEvent::ConnectionOpened { now_ms: now });
        let auth_id = match &actions[..] {
            [DeviceAction::Send(msg)] if msg.command == Command::Login => msg.message_id,
            other => panic!("expected login send, got {other:?}"),
        };
        let ok = ProtocolMessage::response(auth_id, StatusCode::Ok);
        let actions = step(state, cfg, DeviceEvent::MessageReceived { now_ms: now, message: ok });
        assert!(actions.is_empty());
        assert_eq!(state.phase, Phase::Online);
    }

    #[test]
    fn disconnected_tick_opens_connection() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        let actions = step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        assert_eq!(actions, vec![DeviceAction::OpenConnection]);
        assert_eq!(state.phase, Phase::Connecting);
    }

    #[test]
    fn online_tick_samples_then_publishes_v0_before_v1() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        go_online(&mut state, &cfg, 0);

        let actions = step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 2000 });
        assert_eq!(actions, vec![DeviceAction::TakeSample]);

        let reading = Reading::new(23.4, 56.0, 2000).unwrap();
        let actions = step(&mut state, &cfg, DeviceEvent::SampleTaken { now_ms: 2000, reading });
        let sends: Vec<&ProtocolMessage> = actions
            .iter()
            .map(|a| match a {
                DeviceAction::Send(m) => m,
                other => panic!("expected send, got {other:?}"),
            })
            .collect();
        assert_eq!(sends.len(), 2);
        assert_eq!(sends[0].body, encode_hardware_body(0, "23.4"));
        assert_eq!(sends[1].body, encode_hardware_body(1, "56.0"));
        // ids strictly sequential: login took 1, publishes take 2 and 3
        assert_eq!(sends[0].message_id, 2);
        assert_eq!(sends[1].message_id, 3);
    }

    #[test]
    fn sample_spacing_respects_interval() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        go_online(&mut state, &cfg, 0);
        let mut take_times = Vec::new();
        for now in (0..30_000).step_by(100) {
            let actions = step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: now });
            if actions.contains(&DeviceAction::TakeSample) {
                take_times.push(now);
                let reading = Reading::new(20.0, 50.0, now).unwrap();
                step(&mut state, &cfg, DeviceEvent::SampleTaken { now_ms: now, reading });
            }
        }
        assert!(take_times.len() > 5);
        for pair in take_times.windows(2) {
            assert!(pair[1] - pair[0] >= cfg.sample_interval_ms);
        }
    }

    #[test]
    fn heartbeat_fires_when_idle_but_not_while_publishing() {
        let mut cfg = config();
        cfg.sample_interval_ms = 60_000;
        let mut state = DeviceState::new(&cfg);
        go_online(&mut state, &cfg, 0);
        // first tick publishes immediately (no previous publish)
        let actions = step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        assert_eq!(actions, vec![DeviceAction::TakeSample]);
        let reading = Reading::new(20.0, 50.0, 0).unwrap();
        step(&mut state, &cfg, DeviceEvent::SampleTaken { now_ms: 0, reading });

        // idle until the heartbeat interval elapses
        assert!(step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 9999 }).is_empty());
        let actions = step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 10_000 });
        match &actions[..] {
            [DeviceAction::Send(msg)] => assert_eq!(msg.command, Command::Ping),
            other => panic!("expected ping, got {other:?}"),
        }
    }

    #[test]
    fn invalid_token_is_terminal() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        step(&mut state, &cfg, DeviceEvent::ConnectionOpened { now_ms: 0 });
        let rejected = ProtocolMessage::response(1, StatusCode::InvalidToken);
        let actions =
            step(&mut state, &cfg, DeviceEvent::MessageReceived { now_ms: 0, message: rejected });
        assert_eq!(
            actions,
            vec![DeviceAction::CloseConnection, DeviceAction::Fail(FailureReason::AuthRejected)]
        );
    }

    #[test]
    fn auth_response_with_wrong_id_is_ignored() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        step(&mut state, &cfg, DeviceEvent::ConnectionOpened { now_ms: 0 });
        let stray = ProtocolMessage::response(999, StatusCode::Ok);
        let actions =
            step(&mut state, &cfg, DeviceEvent::MessageReceived { now_ms: 0, message: stray });
        assert!(actions.is_empty());
        assert_eq!(state.phase, Phase::Authenticating);
    }

    /// Rng yielding all zeros: turns the jitter term off.
    struct ZeroRng;

    impl rand::RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0);
        }
    }

    #[test]
    fn backoff_doubles_and_saturates() {
        let cfg = config();
        let mut zero = ZeroRng;
        assert_eq!(next_backoff(1, &cfg, &mut zero), 1000);
        assert_eq!(next_backoff(3, &cfg, &mut zero), 4000);
        assert_eq!(next_backoff(4, &cfg, &mut zero), 8000);
        assert_eq!(next_backoff(10, &cfg, &mut zero), 32_000);
        assert_eq!(next_backoff(63, &cfg, &mut zero), 32_000);

        let mut seeded = ChaCha8Rng::seed_from_u64(1);
        for failures in 1..12 {
            let bare = next_backoff(failures, &cfg, &mut zero);
            let jittered = next_backoff(failures, &cfg, &mut seeded);
            assert!(jittered >= bare && jittered <= bare + bare / 10);
        }
    }

    #[test]
    fn four_closes_schedule_retry_around_8s() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        let mut delay = 0;
        for i in 0..4 {
            step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: i * 100_000 });
            state.phase = Phase::Connecting;
            let actions =
                step(&mut state, &cfg, DeviceEvent::ConnectionClosed { now_ms: i * 100_000 });
            delay = match &actions[..] {
                [DeviceAction::ScheduleRetry { delay_ms }] => *delay_ms,
                other => panic!("expected retry, got {other:?}"),
            };
        }
        assert_eq!(state.consecutive_failures, 4);
        assert!((8000..=8800).contains(&delay), "got {delay}");
    }

    #[test]
    fn successful_auth_resets_failures() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        step(&mut state, &cfg, DeviceEvent::ConnectionClosed { now_ms: 0 });
        assert_eq!(state.consecutive_failures, 1);
        let retry_at = state.retry_at_ms.unwrap();
        // tick before the retry deadline stays put
        assert!(step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: retry_at - 1 }).is_empty());
        go_online(&mut state, &cfg, retry_at);
        assert_eq!(state.consecutive_failures, 0);
    }

    #[test]
    fn message_ids_wrap_skipping_zero() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        state.next_message_id = u16::MAX;
        assert_eq!(state.take_message_id(), u16::MAX);
        assert_eq!(state.take_message_id(), 1);
        assert_eq!(state.take_message_id(), 2);
    }

    #[test]
    fn replaying_events_reproduces_actions() {
        let cfg = config();
        let events = vec![
            DeviceEvent::TimerTick { now_ms: 0 },
            DeviceEvent::ConnectionOpened { now_ms: 0 },
            DeviceEvent::MessageReceived {
                now_ms: 0,
                message: ProtocolMessage::response(1, StatusCode::Ok),
            },
            DeviceEvent::TimerTick { now_ms: 0 },
            DeviceEvent::SampleTaken { now_ms: 0, reading: Reading::new(1.0, 2.0, 0).unwrap() },
            DeviceEvent::ConnectionClosed { now_ms: 5 },
            DeviceEvent::TimerTick { now_ms: 4000 },
        ];
        let run = || {
            let mut state = DeviceState::new(&cfg);
            events.iter().map(|e| step(&mut state, &cfg, e.clone())).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn next_wake_tracks_phase() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        assert_eq!(next_wake(&state, &cfg), Some(0));
        step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        assert_eq!(next_wake(&state, &cfg), None); // connecting: waiting on I/O
        step(&mut state, &cfg, DeviceEvent::ConnectionOpened { now_ms: 0 });
        assert_eq!(next_wake(&state, &cfg), None); // authenticating
        let ok = ProtocolMessage::response(1, StatusCode::Ok);
        step(&mut state, &cfg, DeviceEvent::MessageReceived { now_ms: 0, message: ok });
        assert_eq!(next_wake(&state, &cfg), Some(0)); // first sample due at once
        step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: 0 });
        let reading = Reading::new(20.0, 50.0, 0).unwrap();
        step(&mut state, &cfg, DeviceEvent::SampleTaken { now_ms: 0, reading });
        assert_eq!(next_wake(&state, &cfg), Some(2000));
    }

    #[test]
    fn flaky_transport_eventually_comes_online() {
        let cfg = config();
        let mut state = DeviceState::new(&cfg);
        let mut now = 0;
        for _ in 0..5 {
            step(&mut state, &cfg, DeviceEvent::TimerTick { now_ms: now });
            step(&mut state, &cfg, DeviceEvent::ConnectionClosed { now_ms: now });
            now = state.retry_at_ms.unwrap();
        }
        go_online(&mut state, &cfg, now);
        assert_eq!(state.phase, Phase::Online);
    }

    #[test]
    fn format_value_has_one_fractional_digit() {
        assert_eq!(format_value(23.4), "23.4");
        assert_eq!(format_value(56.0), "56.0");
        assert_eq!(format_value(-10.1), "-10.1");
        assert_eq!(format_value(0.0), "0.0");
    }
}
