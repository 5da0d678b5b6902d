//! Evaluation layer: percentage-error comparison against a reference
//! series and weather-clarity classification.
//!
//! Percentage error is `100 * |measured - reference| / |reference|`,
//! undefined for a zero reference (such pairs are skipped and counted).
//! Means are the arithmetic average of per-pair errors. The clarity
//! classifier buckets by relative humidity with configurable thresholds;
//! temperature is part of the signature but currently only pins the
//! freezing-fog corner to `Cloudy`.

use std::fmt;
use std::path::Path;

use serde_json::json;
use thiserror::Error;

use crate::sensor::environment::{TrackPoint, load_track_csv};
use crate::sensor::{HUMIDITY_MAX_RH, HUMIDITY_MIN_RH, TEMP_MAX_C, TEMP_MIN_C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("percentage error is undefined for a zero reference")]
    ZeroReference,
    #[error("no measured point aligns with the reference series")]
    EmptyOverlap,
    #[error("{field} {value} out of range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("invalid reference series: {0}")]
    InvalidReference(String),
}

/// Reference data (e.g. a national weather feed export), one point per
/// timestamp, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSeries {
    points: Vec<TrackPoint>,
}

impl ReferenceSeries {
    pub fn new(points: Vec<TrackPoint>) -> Result<Self, AnalyticsError> {
        if points.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
            return Err(AnalyticsError::InvalidReference(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Loads the CSV format `timestamp_ms,temperature_c,humidity_rh`.
    pub fn from_csv(path: &Path) -> Result<Self, AnalyticsError> {
        let points =
            load_track_csv(path).map_err(|e| AnalyticsError::InvalidReference(e.to_string()))?;
        Self::new(points)
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `100 * |measured - reference| / |reference|`.
///
/// Exact value; rendering rounds to two decimals. Note the asymmetry:
/// `percentage_error(6, 4)` is 33.33.., `percentage_error(4, 6)` is 50.
pub fn percentage_error(reference: f64, measured: f64) -> Result<f64, AnalyticsError> {
    if reference == 0.0 {
        return Err(AnalyticsError::ZeroReference);
    }
    Ok((measured - reference).abs() / reference.abs() * 100.0)
}

/// Rounds to two decimals, halves away from zero (for display and JSON).
pub fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClarityLabel {
    Clear,
    PartlyCloudy,
    Cloudy,
}

impl fmt::Display for ClarityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            ClarityLabel::Clear => "clear",
            ClarityLabel::PartlyCloudy => "partly cloudy",
            ClarityLabel::Cloudy => "cloudy",
        };
        f.write_str(text)
    }
}

/// Humidity cut points for the clarity label. These are tool defaults,
/// not measured constants; override them per deployment as needed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClarityThresholds {
    /// Below this humidity the sky counts as clear.
    pub clear_below_rh: f64,
    /// At or above this humidity the sky counts as cloudy.
    pub cloudy_from_rh: f64,
}

impl Default for ClarityThresholds {
    fn default() -> Self {
        Self { clear_below_rh: 60.0, cloudy_from_rh: 85.0 }
    }
}

impl ClarityThresholds {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.clear_below_rh < self.cloudy_from_rh) {
            return Err(AnalyticsError::OutOfRange {
                field: "clear_below_rh",
                value: self.clear_below_rh,
            });
        }
        Ok(())
    }

    /// Total over valid readings: every `(temperature, humidity)` pair in
    /// range gets exactly one label.
    pub fn classify(&self, temperature_c: f64, humidity_rh: f64) -> Result<ClarityLabel, AnalyticsError> {
        if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&temperature_c) {
            return Err(AnalyticsError::OutOfRange { field: "temperature_c", value: temperature_c });
        }
        if !(HUMIDITY_MIN_RH..=HUMIDITY_MAX_RH).contains(&humidity_rh) {
            return Err(AnalyticsError::OutOfRange { field: "humidity_rh", value: humidity_rh });
        }
        let label = if humidity_rh < self.clear_below_rh {
            ClarityLabel::Clear
        } else if humidity_rh < self.cloudy_from_rh {
            ClarityLabel::PartlyCloudy
        } else if temperature_c <= 0.0 {
            // freezing fog reads as saturated air; stays cloudy until a
            // dedicated rule exists
            ClarityLabel::Cloudy
        } else {
            ClarityLabel::Cloudy
        };
        Ok(label)
    }
}

/// [`ClarityThresholds::classify`] with the default cut points.
pub fn classify_clarity(temperature_c: f64, humidity_rh: f64) -> Result<ClarityLabel, AnalyticsError> {
    ClarityThresholds::default().classify(temperature_c, humidity_rh)
}

/// One measured point matched to a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair {
    pub reference_index: usize,
    pub reference_ts: u64,
    pub measured_ts: u64,
    pub measured_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    pub dropped: usize,
}

/// Pairs each measured point with the nearest reference point within
/// `max_skew_ms` (inclusive). Greedy in measured order; each reference
/// point is used at most once; equal distances resolve to the earlier
/// reference. Unmatched measured points are dropped and counted.
pub fn align_series(
    reference: &ReferenceSeries,
    measured: &[(u64, f64)],
    max_skew_ms: u64,
) -> Alignment {
    let refs = reference.points();
    let mut used = vec![false; refs.len()];
    let mut alignment = Alignment::default();

    for &(measured_ts, measured_value) in measured {
        let mut best: Option<(u64, usize)> = None; // (distance, index)
        let split = refs.partition_point(|p| p.timestamp_ms < measured_ts);
        // nearest unused on the left, then on the right
        for idx in (0..split).rev() {
            if !used[idx] {
                best = Some((measured_ts - refs[idx].timestamp_ms, idx));
                break;
            }
        }
        for idx in split..refs.len() {
            if !used[idx] {
                let distance = refs[idx].timestamp_ms - measured_ts;
                // strict: on ties the earlier (left) reference wins
                if best.is_none_or(|(d, _)| distance < d) {
                    best = Some((distance, idx));
                }
                break;
            }
        }
        match best {
            Some((distance, idx)) if distance <= max_skew_ms => {
                used[idx] = true;
                alignment.pairs.push(AlignedPair {
                    reference_index: idx,
                    reference_ts: refs[idx].timestamp_ms,
                    measured_ts,
                    measured_value,
                });
            }
            _ => alignment.dropped += 1,
        }
    }
    alignment
}

/// Channel under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Temperature,
    Humidity,
}

/// One compared pair within a channel. `pct_error` is `None` when the
/// reference value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub reference_index: usize,
    pub reference_ts: u64,
    pub measured_ts: u64,
    pub reference: f64,
    pub measured: f64,
    pub pct_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelReport {
    pub pairs: Vec<PairReport>,
    pub dropped: usize,
    pub skipped_zero_reference: usize,
    pub mean_pct_error: Option<f64>,
}

impl ChannelReport {
    fn build(reference: &ReferenceSeries, measured: &[(u64, f64)], channel: Channel, max_skew_ms: u64) -> Self {
        let alignment = align_series(reference, measured, max_skew_ms);
        let mut report = ChannelReport { dropped: alignment.dropped, ..Default::default() };
        let mut sum = 0.0;
        let mut counted = 0usize;
        for pair in alignment.pairs {
            let point = reference.points()[pair.reference_index];
            let reference_value = match channel {
                Channel::Temperature => point.temperature_c,
                Channel::Humidity => point.humidity_rh,
            };
            let pct_error = match percentage_error(reference_value, pair.measured_value) {
                Ok(value) => {
                    sum += value;
                    counted += 1;
                    Some(value)
                }
                Err(AnalyticsError::ZeroReference) => {
                    report.skipped_zero_reference += 1;
                    None
                }
                Err(_) => unreachable!("percentage_error only fails on zero reference"),
            };
            report.pairs.push(PairReport {
                reference_index: pair.reference_index,
                reference_ts: pair.reference_ts,
                measured_ts: pair.measured_ts,
                reference: reference_value,
                measured: pair.measured_value,
                pct_error,
            });
        }
        if counted > 0 {
            report.mean_pct_error = Some(sum / counted as f64);
        }
        report
    }
}

/// A display row joining both channels at one reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub reference_ts: u64,
    pub temperature: Option<PairReport>,
    pub humidity: Option<PairReport>,
    pub clarity: Option<ClarityLabel>,
}

/// The two-channel comparison produced by [`build_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub temperature: ChannelReport,
    pub humidity: ChannelReport,
    pub max_skew_ms: u64,
    pub rows: Vec<ComparisonRow>,
}

/// Aligns both measured channels against the reference and aggregates
/// percentage errors. Fails with [`AnalyticsError::EmptyOverlap`] when
/// neither channel matched anything.
pub fn build_report(
    reference: &ReferenceSeries,
    measured_temperature: &[(u64, f64)],
    measured_humidity: &[(u64, f64)],
    max_skew_ms: u64,
    thresholds: &ClarityThresholds,
) -> Result<ErrorReport, AnalyticsError> {
    thresholds.validate()?;
    let temperature =
        ChannelReport::build(reference, measured_temperature, Channel::Temperature, max_skew_ms);
    let humidity = ChannelReport::build(reference, measured_humidity, Channel::Humidity, max_skew_ms);
    if temperature.pairs.is_empty() && humidity.pairs.is_empty() {
        return Err(AnalyticsError::EmptyOverlap);
    }

    // join channels on the reference point for the row view
    let mut indices: Vec<usize> = temperature
        .pairs
        .iter()
        .chain(humidity.pairs.iter())
        .map(|p| p.reference_index)
        .collect();
    indices.sort_unstable();
    indices.dedup();
    let rows = indices
        .into_iter()
        .map(|idx| {
            let temp = temperature.pairs.iter().find(|p| p.reference_index == idx).cloned();
            let hum = humidity.pairs.iter().find(|p| p.reference_index == idx).cloned();
            let clarity = match (&temp, &hum) {
                (Some(t), Some(h)) => thresholds.classify(t.measured, h.measured).ok(),
                _ => None,
            };
            ComparisonRow {
                reference_ts: reference.points()[idx].timestamp_ms,
                temperature: temp,
                humidity: hum,
                clarity,
            }
        })
        .collect();

    Ok(ErrorReport { temperature, humidity, max_skew_ms, rows })
}

impl ErrorReport {
    /// Total compared pairs across both channels.
    pub fn total_pairs(&self) -> usize {
        self.temperature.pairs.len() + self.humidity.pairs.len()
    }

    pub fn total_dropped(&self) -> usize {
        self.temperature.dropped + self.humidity.dropped
    }

    pub fn to_json(&self) -> serde_json::Value {
        let channel = |c: &ChannelReport| {
            json!({
                "mean_pct_error": c.mean_pct_error.map(round2),
                "pairs": c.pairs.len(),
                "dropped": c.dropped,
                "skipped_zero_reference": c.skipped_zero_reference,
            })
        };
        json!({
            "temperature": channel(&self.temperature),
            "humidity": channel(&self.humidity),
            "pairs": self.total_pairs(),
            "dropped": self.total_dropped(),
            "max_skew_ms": self.max_skew_ms,
        })
    }

    /// Plain-text table with per-row details and the definition footer.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let fmt_mean = |c: &ChannelReport| match c.mean_pct_error {
            Some(value) => format!("{:.2}", round2(value)),
            None => "n/a".to_string(),
        };
        out.push_str("channel       pairs  dropped  mean_pct_error\n");
        out.push_str(&format!(
            "temperature   {:>5}  {:>7}  {:>14}\n",
            self.temperature.pairs.len(),
            self.temperature.dropped,
            fmt_mean(&self.temperature)
        ));
        out.push_str(&format!(
            "humidity      {:>5}  {:>7}  {:>14}\n",
            self.humidity.pairs.len(),
            self.humidity.dropped,
            fmt_mean(&self.humidity)
        ));
        out.push('\n');
        for row in &self.rows {
            let side = |p: &Option<PairReport>| match p {
                Some(p) => {
                    let err = match p.pct_error {
                        Some(e) => format!("{:.2}%", round2(e)),
                        None => "skipped (zero reference)".to_string(),
                    };
                    format!("ref={:.1} measured={:.1} err={err}", p.reference, p.measured)
                }
                None => "unmatched".to_string(),
            };
            let clarity = match row.clarity {
                Some(label) => format!("  clarity={label}"),
                None => String::new(),
            };
            out.push_str(&format!(
                "t={}ms  temperature[{}]  humidity[{}]{clarity}\n",
                row.reference_ts,
                side(&row.temperature),
                side(&row.humidity),
            ));
        }
        out.push('\n');
        out.push_str(FOOTER);
        out
    }
}

/// Definition footer printed under every report, with a worked anchor
/// pair so the denominator convention is unambiguous.
pub const FOOTER: &str = "definition: pct_error = 100 * |measured - reference| / |reference|\n\
anchor: reference 6 vs measured 4 -> 33.33 under this definition\n\
        (50.00 when normalizing by the measured value); a quoted error of\n\
        20 for that pair is not reproducible under any standard\n\
        percentage-error definition.\n";
