//! Simulated atmosphere: the ground-truth source a sensor samples from.
//!
//! Three profile kinds: a constant climate, a sinusoidal day/night cycle,
//! and replay of a recorded CSV track. All of them add seeded Gaussian
//! noise; the noise at time `t` depends only on `(rng_seed, t)`, never on
//! how many samples were taken before.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Constant,
    Diurnal,
    Replay,
}

/// Parameters describing the simulated environment.
///
/// `period_ms` only matters for `diurnal`; `replay_path` must be present
/// exactly when `kind` is `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub kind: ProfileKind,
    #[serde(default)]
    pub base_temperature_c: f64,
    #[serde(default)]
    pub base_humidity_rh: f64,
    #[serde(default)]
    pub amplitude_temperature_c: f64,
    #[serde(default)]
    pub amplitude_humidity_rh: f64,
    #[serde(default)]
    pub period_ms: u64,
    #[serde(default)]
    pub noise_stddev_temperature: f64,
    #[serde(default)]
    pub noise_stddev_humidity: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
}

impl Default for EnvironmentProfile {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Constant,
            base_temperature_c: 20.0,
            base_humidity_rh: 50.0,
            amplitude_temperature_c: 0.0,
            amplitude_humidity_rh: 0.0,
            period_ms: 0,
            noise_stddev_temperature: 0.0,
            noise_stddev_humidity: 0.0,
            rng_seed: 0,
            replay_path: None,
        }
    }
}

impl EnvironmentProfile {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.noise_stddev_temperature < 0.0 || self.noise_stddev_humidity < 0.0 {
            return Err(SensorError::InvalidProfile("noise stddev must be >= 0".into()));
        }
        match self.kind {
            ProfileKind::Diurnal if self.period_ms == 0 => {
                Err(SensorError::InvalidProfile("diurnal profile needs period_ms > 0".into()))
            }
            ProfileKind::Replay if self.replay_path.is_none() => {
                Err(SensorError::InvalidProfile("replay profile needs replay_path".into()))
            }
            ProfileKind::Constant | ProfileKind::Diurnal if self.replay_path.is_some() => {
                Err(SensorError::InvalidProfile("replay_path is only valid for replay profiles".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One `(timestamp, temperature, humidity)` point of a replay track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub timestamp_ms: u64,
    pub temperature_c: f64,
    pub humidity_rh: f64,
}

/// Loads a replay/reference CSV with header `timestamp_ms,temperature_c,humidity_rh`.
pub fn load_track_csv(path: &Path) -> Result<Vec<TrackPoint>, SensorError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| SensorError::InvalidReplay(e.to_string()))?;
    let headers = reader.headers().map_err(|e| SensorError::InvalidReplay(e.to_string()))?;
    let expected = ["timestamp_ms", "temperature_c", "humidity_rh"];
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(SensorError::InvalidReplay(format!(
            "expected header {expected:?}, got {got:?}"
        )));
    }
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SensorError::InvalidReplay(e.to_string()))?;
        let field = |i: usize| -> Result<&str, SensorError> {
            record
                .get(i)
                .map(str::trim)
                .ok_or_else(|| SensorError::InvalidReplay(format!("row {}: missing field {i}", line + 2)))
        };
        let point = TrackPoint {
            timestamp_ms: field(0)?
                .parse()
                .map_err(|e| SensorError::InvalidReplay(format!("row {}: {e}", line + 2)))?,
            temperature_c: field(1)?
                .parse()
                .map_err(|e| SensorError::InvalidReplay(format!("row {}: {e}", line + 2)))?,
            humidity_rh: field(2)?
                .parse()
                .map_err(|e| SensorError::InvalidReplay(format!("row {}: {e}", line + 2)))?,
        };
        points.push(point);
    }
    if points.is_empty() {
        return Err(SensorError::InvalidReplay("track has no data rows".into()));
    }
    if points.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
        return Err(SensorError::InvalidReplay("timestamps must be strictly increasing".into()));
    }
    Ok(points)
}

/// A validated environment, ready to answer ground-truth queries.
///
/// Replay data is loaded once at construction.
#[derive(Debug, Clone)]
pub struct Environment {
    profile: EnvironmentProfile,
    track: Vec<TrackPoint>,
}

impl Environment {
    pub fn new(profile: EnvironmentProfile) -> Result<Self, SensorError> {
        profile.validate()?;
        let track = match (&profile.kind, &profile.replay_path) {
            (ProfileKind::Replay, Some(path)) => load_track_csv(path)?,
            _ => Vec::new(),
        };
        Ok(Self { profile, track })
    }

    /// Builds a replay environment from in-memory points (tests, tooling).
    pub fn from_track(mut profile: EnvironmentProfile, track: Vec<TrackPoint>) -> Result<Self, SensorError> {
        profile.kind = ProfileKind::Replay;
        profile.replay_path = None;
        if track.is_empty() {
            return Err(SensorError::InvalidReplay("track has no data rows".into()));
        }
        if track.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
            return Err(SensorError::InvalidReplay("timestamps must be strictly increasing".into()));
        }
        Ok(Self { profile, track })
    }

    pub fn profile(&self) -> &EnvironmentProfile {
        &self.profile
    }

    /// True (pre-clamp) environment values at `t_ms`, noise included.
    ///
    /// Deterministic per `(rng_seed, t_ms)`.
    pub fn ground_truth(&self, t_ms: u64) -> Result<(f64, f64), SensorError> {
        let p = &self.profile;
        let (temp, hum) = match p.kind {
            ProfileKind::Constant => (p.base_temperature_c, p.base_humidity_rh),
            ProfileKind::Diurnal => {
                let phase = 2.0 * std::f64::consts::PI * (t_ms as f64) / (p.period_ms as f64);
                (
                    p.base_temperature_c + p.amplitude_temperature_c * phase.sin(),
                    p.base_humidity_rh + p.amplitude_humidity_rh * phase.sin(),
                )
            }
            ProfileKind::Replay => self.interpolate(t_ms)?,
        };
        let (noise_t, noise_h) = self.noise_at(t_ms);
        Ok((temp + noise_t, hum + noise_h))
    }

    fn interpolate(&self, t_ms: u64) -> Result<(f64, f64), SensorError> {
        let first = self.track.first().expect("track validated non-empty");
        let last = self.track.last().expect("track validated non-empty");
        if t_ms < first.timestamp_ms || t_ms > last.timestamp_ms {
            return Err(SensorError::ReplayExhausted { t_ms });
        }
        let idx = self.track.partition_point(|pt| pt.timestamp_ms <= t_ms);
        // partition_point >= 1 here because t_ms >= first.timestamp_ms
        let before = self.track[idx - 1];
        if before.timestamp_ms == t_ms || idx == self.track.len() {
            return Ok((before.temperature_c, before.humidity_rh));
        }
        let after = self.track[idx];
        let span = (after.timestamp_ms - before.timestamp_ms) as f64;
        let frac = (t_ms - before.timestamp_ms) as f64 / span;
        Ok((
            before.temperature_c + (after.temperature_c - before.temperature_c) * frac,
            before.humidity_rh + (after.humidity_rh - before.humidity_rh) * frac,
        ))
    }

    // Noise stream keyed by timestamp: temperature drawn first, humidity
    // second, from a generator positioned purely by (seed, t).
    fn noise_at(&self, t_ms: u64) -> (f64, f64) {
        let p = &self.profile;
        if p.noise_stddev_temperature == 0.0 && p.noise_stddev_humidity == 0.0 {
            return (0.0, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
        rng.set_stream(t_ms);
        let mut draw = |stddev: f64| -> f64 {
            if stddev == 0.0 {
                // keep draw order stable across channel configurations
                let _ = rng.random::<f64>();
                0.0
            } else {
                Normal::new(0.0, stddev).expect("stddev validated >= 0").sample(&mut rng)
            }
        };
        let noise_t = draw(p.noise_stddev_temperature);
        let noise_h = draw(p.noise_stddev_humidity);
        (noise_t, noise_h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track() -> Vec<TrackPoint> {
        vec![
            TrackPoint { timestamp_ms: 0, temperature_c: 10.0, humidity_rh: 40.0 },
            TrackPoint { timestamp_ms: 1000, temperature_c: 20.0, humidity_rh: 60.0 },
        ]
    }

    #[test]
    fn constant_profile_returns_base_values_at_any_time() {
        let env = Environment::new(EnvironmentProfile {
            base_temperature_c: 20.0,
            base_humidity_rh: 50.0,
            ..EnvironmentProfile::default()
        })
        .unwrap();
        for t in [0, 1, 999_999_999] {
            assert_eq!(env.ground_truth(t).unwrap(), (20.0, 50.0));
        }
    }

    #[test]
    fn diurnal_at_t_zero_is_exactly_base() {
        let env = Environment::new(EnvironmentProfile {
            kind: ProfileKind::Diurnal,
            base_temperature_c: 20.0,
            base_humidity_rh: 50.0,
            amplitude_temperature_c: 5.0,
            amplitude_humidity_rh: 10.0,
            period_ms: 1000,
            ..EnvironmentProfile::default()
        })
        .unwrap();
        assert_eq!(env.ground_truth(0).unwrap(), (20.0, 50.0));
    }

    #[test]
    fn replay_interpolates_linearly() {
        let env = Environment::from_track(EnvironmentProfile::default(), track()).unwrap();
        assert_eq!(env.ground_truth(500).unwrap(), (15.0, 50.0));
        assert_eq!(env.ground_truth(0).unwrap(), (10.0, 40.0));
        assert_eq!(env.ground_truth(1000).unwrap(), (20.0, 60.0));
    }

    #[test]
    fn replay_outside_span_is_exhausted() {
        let env = Environment::from_track(EnvironmentProfile::default(), track()).unwrap();
        assert!(matches!(env.ground_truth(1001), Err(SensorError::ReplayExhausted { t_ms: 1001 })));
    }

    #[test]
    fn noise_depends_only_on_seed_and_time() {
        let profile = EnvironmentProfile {
            noise_stddev_temperature: 1.0,
            noise_stddev_humidity: 2.0,
            rng_seed: 5,
            ..EnvironmentProfile::default()
        };
        let env = Environment::new(profile.clone()).unwrap();
        let a = env.ground_truth(123).unwrap();
        // query other times in between; t=123 must not change
        let _ = env.ground_truth(7).unwrap();
        let _ = env.ground_truth(99).unwrap();
        assert_eq!(env.ground_truth(123).unwrap(), a);

        let env2 = Environment::new(EnvironmentProfile { rng_seed: 6, ..profile }).unwrap();
        assert_ne!(env2.ground_truth(123).unwrap(), a);
    }

    #[test]
    fn profile_validation_catches_bad_shapes() {
        let diurnal_no_period = EnvironmentProfile {
            kind: ProfileKind::Diurnal,
            period_ms: 0,
            ..EnvironmentProfile::default()
        };
        assert!(diurnal_no_period.validate().is_err());

        let replay_no_path = EnvironmentProfile {
            kind: ProfileKind::Replay,
            ..EnvironmentProfile::default()
        };
        assert!(replay_no_path.validate().is_err());

        let constant_with_path = EnvironmentProfile {
            replay_path: Some(PathBuf::from("x.csv")),
            ..EnvironmentProfile::default()
        };
        assert!(constant_with_path.validate().is_err());
    }

    #[test]
    fn csv_loader_validates_header_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "timestamp_ms,temperature_c,humidity_rh\n0,10,40\n1000,20,60\n").unwrap();
        assert_eq!(load_track_csv(&good).unwrap(), track());

        let bad_header = dir.path().join("bad_header.csv");
        std::fs::write(&bad_header, "time,temp,hum\n0,10,40\n").unwrap();
        assert!(matches!(load_track_csv(&bad_header), Err(SensorError::InvalidReplay(_))));

        let unsorted = dir.path().join("unsorted.csv");
        std::fs::write(&unsorted, "timestamp_ms,temperature_c,humidity_rh\n1000,20,60\n0,10,40\n").unwrap();
        assert!(matches!(load_track_csv(&unsorted), Err(SensorError::InvalidReplay(_))));

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "timestamp_ms,temperature_c,humidity_rh\n").unwrap();
        assert!(matches!(load_track_csv(&empty), Err(SensorError::InvalidReplay(_))));
    }
}
