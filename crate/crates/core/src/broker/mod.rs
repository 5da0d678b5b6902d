//! The cloud role: accepts device sessions, authenticates tokens, keeps the
//! latest value per virtual pin, appends history, answers queries.
//!
//! [`BrokerCore`] is plain single-threaded logic; [`server`] and [`http`]
//! put it behind TCP and HTTP listeners with one lock around the core.
//! Hardware writes are fire-and-forget: they mutate the store and get no
//! acknowledgment.

pub mod history;
pub mod http;
pub mod server;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Command, ProtocolMessage, StatusCode, parse_hardware_body};

pub use history::{HistoryEntry, HistoryStore, valid_device_id};
pub use http::HttpServer;
pub use server::BrokerServer;

pub const DEFAULT_HEARTBEAT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("not found")]
    NotFound,
    #[error("bad range: from {from_ms} > to {to_ms}")]
    BadRange { from_ms: u64, to_ms: u64 },
    #[error("invalid broker config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static broker-side configuration: who may log in and where history goes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrokerSettings {
    /// auth token -> device id
    pub tokens: HashMap<String, String>,
    pub history_path: PathBuf,
    #[serde(default = "default_heartbeat_timeout")]
    pub heartbeat_timeout_ms: u64,
}

fn default_heartbeat_timeout() -> u64 {
    DEFAULT_HEARTBEAT_TIMEOUT_MS
}

impl BrokerSettings {
    pub fn validate(&self) -> Result<(), BrokerError> {
        let mut seen = std::collections::HashSet::new();
        for (token, device) in &self.tokens {
            if token.is_empty() {
                return Err(BrokerError::InvalidConfig("empty auth token".into()));
            }
            if !valid_device_id(device) {
                return Err(BrokerError::InvalidConfig(format!("unsafe device id {device:?}")));
            }
            if !seen.insert(device) {
                return Err(BrokerError::InvalidConfig(format!(
                    "device id {device:?} mapped by more than one token"
                )));
            }
        }
        Ok(())
    }
}

/// Latest value written to one `(device, pin)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinRecord {
    pub device_id: String,
    pub pin: u8,
    pub value: String,
    pub updated_at_ms: u64,
}

/// [`PinRecord`] plus the staleness verdict at query time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatestPin {
    pub pin: u8,
    pub value: String,
    pub updated_at_ms: u64,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceStatus {
    pub device_id: String,
    pub online: bool,
    pub last_seen_ms: u64,
}

/// Per-connection authentication state. The receive buffer lives with the
/// connection in the server layer; the core only tracks identity.
#[derive(Debug, Default, Clone)]
pub struct DeviceSession {
    pub device_id: Option<String>,
    pub authenticated: bool,
    pub last_seen_ms: u64,
}

impl DeviceSession {
    pub fn new() -> Self {
        Self::default()
    }
}

/// What the server layer must do with the connection after a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionVerdict {
    Continue,
    /// Write any responses, then drop the connection.
    Disconnect,
}

/// Broker state: token table, latest-value cache, history log, liveness.
///
/// The cache and the per-device `last_seen` map are rebuilt from the
/// history directory on startup, so a restart loses nothing that was
/// appended.
#[derive(Debug)]
pub struct BrokerCore {
    settings: BrokerSettings,
    latest: HashMap<(String, u8), PinRecord>,
    last_seen: HashMap<String, u64>,
    history: HistoryStore,
}

impl BrokerCore {
    pub fn open(settings: BrokerSettings) -> Result<Self, BrokerError> {
        settings.validate()?;
        let history = HistoryStore::open(&settings.history_path)?;
        let mut core = Self { settings, latest: HashMap::new(), last_seen: HashMap::new(), history };
        for entry in core.history.scan_all()? {
            core.apply_latest(&entry);
            let seen = core.last_seen.entry(entry.device.clone()).or_insert(entry.ts);
            *seen = (*seen).max(entry.ts);
        }
        Ok(core)
    }

    pub fn settings(&self) -> &BrokerSettings {
        &self.settings
    }

    fn apply_latest(&mut self, entry: &HistoryEntry) {
        let key = (entry.device.clone(), entry.pin);
        let record = self.latest.entry(key).or_insert_with(|| PinRecord {
            device_id: entry.device.clone(),
            pin: entry.pin,
            value: entry.value.clone(),
            updated_at_ms: entry.ts,
        });
        // updated_at never goes backwards for a pin
        if entry.ts >= record.updated_at_ms {
            record.value = entry.value.clone();
            record.updated_at_ms = entry.ts;
        }
    }

    /// Handles one decoded message from a session.
    ///
    /// Unauthenticated sessions may only send `LOGIN`; anything else earns
    /// an `ILLEGAL_COMMAND` response and a disconnect. Hardware writes are
    /// stored and archived without a response.
    pub fn handle_message(
        &mut self,
        session: &mut DeviceSession,
        msg: &ProtocolMessage,
        now_ms: u64,
    ) -> (Vec<ProtocolMessage>, SessionVerdict) {
        session.last_seen_ms = now_ms;
        match msg.command {
            Command::Login => self.handle_login(session, msg, now_ms),
            Command::Ping => {
                if !session.authenticated {
                    return self.illegal(msg);
                }
                self.touch(session, now_ms);
                (vec![ProtocolMessage::response(msg.message_id, StatusCode::Ok)], SessionVerdict::Continue)
            }
            Command::Hardware => {
                if !session.authenticated {
                    return self.illegal(msg);
                }
                self.touch(session, now_ms);
                let body = match parse_hardware_body(&msg.body) {
                    Ok(body) => body,
                    Err(e) => {
                        log::warn!("event=malformed_body error={e}");
                        return self.illegal(msg);
                    }
                };
                let device = session.device_id.clone().expect("authenticated session has an id");
                let entry = HistoryEntry { ts: now_ms, device, pin: body.pin, value: body.value };
                if let Err(e) = self.history.append(&entry) {
                    log::error!("event=history_append_failed error={e}");
                }
                self.apply_latest(&entry);
                (Vec::new(), SessionVerdict::Continue)
            }
            Command::Response => self.illegal(msg),
        }
    }

    fn handle_login(
        &mut self,
        session: &mut DeviceSession,
        msg: &ProtocolMessage,
        now_ms: u64,
    ) -> (Vec<ProtocolMessage>, SessionVerdict) {
        let token = String::from_utf8_lossy(&msg.body);
        match self.settings.tokens.get(token.as_ref()).cloned() {
            Some(device_id) => {
                session.authenticated = true;
                session.device_id = Some(device_id.clone());
                self.touch(session, now_ms);
                log::info!("event=login device={device_id}");
                (vec![ProtocolMessage::response(msg.message_id, StatusCode::Ok)], SessionVerdict::Continue)
            }
            None => {
                log::warn!("event=login_rejected");
                (
                    vec![ProtocolMessage::response(msg.message_id, StatusCode::InvalidToken)],
                    SessionVerdict::Disconnect,
                )
            }
        }
    }

    fn illegal(&self, msg: &ProtocolMessage) -> (Vec<ProtocolMessage>, SessionVerdict) {
        (
            vec![ProtocolMessage::response(msg.message_id, StatusCode::IllegalCommand)],
            SessionVerdict::Disconnect,
        )
    }

    fn touch(&mut self, session: &DeviceSession, now_ms: u64) {
        if let Some(device) = &session.device_id {
            let seen = self.last_seen.entry(device.clone()).or_insert(now_ms);
            *seen = (*seen).max(now_ms);
        }
    }

    /// Most recent value for `(device, pin)`, with its staleness flag.
    pub fn get_latest(&self, device_id: &str, pin: u8, now_ms: u64) -> Result<LatestPin, BrokerError> {
        let record = self
            .latest
            .get(&(device_id.to_string(), pin))
            .ok_or(BrokerError::NotFound)?;
        Ok(LatestPin {
            pin: record.pin,
            value: record.value.clone(),
            updated_at_ms: record.updated_at_ms,
            stale: now_ms.saturating_sub(record.updated_at_ms) > self.settings.heartbeat_timeout_ms,
        })
    }

    /// Archived writes for `(device, pin)` with `from_ms <= ts < to_ms`,
    /// in arrival order.
    pub fn get_history(
        &self,
        device_id: &str,
        pin: u8,
        from_ms: u64,
        to_ms: u64,
    ) -> Result<Vec<HistoryEntry>, BrokerError> {
        if from_ms > to_ms {
            return Err(BrokerError::BadRange { from_ms, to_ms });
        }
        Ok(self.history.query(device_id, pin, from_ms, to_ms)?)
    }

    /// Every device ever seen, with its liveness at `now_ms`.
    pub fn list_devices(&self, now_ms: u64) -> Vec<DeviceStatus> {
        let mut devices: Vec<DeviceStatus> = self
            .last_seen
            .iter()
            .map(|(device_id, &last_seen_ms)| DeviceStatus {
                device_id: device_id.clone(),
                online: now_ms.saturating_sub(last_seen_ms) <= self.settings.heartbeat_timeout_ms,
                last_seen_ms,
            })
            .collect();
        devices.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        devices
    }
}
