//! Simulated DHT22-class temperature/humidity sensor.
//!
//! [`frame`] implements the 40-bit wire frame the real part emits (two
//! big-endian scaled words plus an additive checksum); [`environment`]
//! stands in for the atmosphere and generates ground-truth values.
//! [`SensorState`] ties the two together and enforces the part's minimum
//! sampling interval of one reading per 2 seconds.

pub mod environment;
pub mod frame;

use thiserror::Error;

pub use environment::{Environment, EnvironmentProfile, ProfileKind};
pub use frame::{RawFrame, Reading, decode_frame, encode_frame, quantize_tenths};

/// Minimum spacing between successful samples, in milliseconds.
pub const MIN_SAMPLE_INTERVAL_MS: u64 = 2000;

/// Lowest temperature the sensor can report, in degrees Celsius.
pub const TEMP_MIN_C: f64 = -40.0;
/// Highest temperature the sensor can report, in degrees Celsius.
pub const TEMP_MAX_C: f64 = 80.0;
/// Lowest relative humidity the sensor can report, in percent.
pub const HUMIDITY_MIN_RH: f64 = 0.0;
/// Highest relative humidity the sensor can report, in percent.
pub const HUMIDITY_MAX_RH: f64 = 100.0;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("{field} {value} out of range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("frame checksum mismatch: expected {expected:#04x}, computed {computed:#04x}")]
    ChecksumMismatch { expected: u8, computed: u8 },
    #[error("frame must be 10 hex digits, got {0:?}")]
    BadHex(String),
    #[error("sampled too soon: wait {wait_ms} ms")]
    TooSoon { wait_ms: u64 },
    #[error("replay track has no data for t={t_ms} ms")]
    ReplayExhausted { t_ms: u64 },
    #[error("invalid environment profile: {0}")]
    InvalidProfile(String),
    #[error("invalid replay track: {0}")]
    InvalidReplay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One simulated sensor: an environment plus the 2-second sampling gate.
#[derive(Debug, Clone)]
pub struct SensorState {
    env: Environment,
    last_sample_ms: Option<u64>,
}

impl SensorState {
    pub fn new(env: Environment) -> Self {
        Self { env, last_sample_ms: None }
    }

    pub fn from_profile(profile: EnvironmentProfile) -> Result<Self, SensorError> {
        Ok(Self::new(Environment::new(profile)?))
    }

    pub fn last_sample_ms(&self) -> Option<u64> {
        self.last_sample_ms
    }

    /// Take a reading at `now_ms`.
    ///
    /// Fails with [`SensorError::TooSoon`] if less than
    /// [`MIN_SAMPLE_INTERVAL_MS`] has passed since the previous successful
    /// sample. Ground truth is clamped to the sensor's measurement range and
    /// quantized to the 0.1 grid, so the result always encodes cleanly.
    pub fn sample(&mut self, now_ms: u64) -> Result<Reading, SensorError> {
        if let Some(last) = self.last_sample_ms {
            let elapsed = now_ms.saturating_sub(last);
            if elapsed < MIN_SAMPLE_INTERVAL_MS {
                return Err(SensorError::TooSoon { wait_ms: MIN_SAMPLE_INTERVAL_MS - elapsed });
            }
        }
        let (temp, hum) = self.env.ground_truth(now_ms)?;
        let reading = Reading::clamped(temp, hum, now_ms);
        self.last_sample_ms = Some(now_ms);
        Ok(reading)
    }
}
