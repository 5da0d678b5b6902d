//! The 5-octet sensor frame and its codec.
//!
//! Layout matches the common datasheet format for DHT22-class parts:
//!
//! ```text
//! octet 0..2   relative humidity * 10, big-endian u16
//! octet 2..4   |temperature| * 10 in the low 15 bits, bit 15 = sign
//! octet 4      sum of octets 0..4, modulo 256
//! ```
//!
//! Values are decimals on a 0.1 grid, so encode/decode round-trips exactly.

use super::{
    HUMIDITY_MAX_RH, HUMIDITY_MIN_RH, SensorError, TEMP_MAX_C, TEMP_MIN_C,
};

/// Largest legal humidity word (100.0 %RH * 10).
const HUMIDITY_WORD_MAX: u16 = 1000;
/// Largest legal temperature magnitude (80.0 degC * 10).
const TEMP_MAGNITUDE_MAX: u16 = 800;
const SIGN_BIT: u16 = 0x8000;

/// A decoded measurement: temperature, relative humidity, sample time.
///
/// Both values are exact multiples of 0.1 within the sensor's range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub temperature_c: f64,
    pub humidity_rh: f64,
    pub timestamp_ms: u64,
}

impl Reading {
    /// Builds a reading, rejecting values outside the measurement range.
    /// Callers are expected to supply values already on the 0.1 grid.
    pub fn new(temperature_c: f64, humidity_rh: f64, timestamp_ms: u64) -> Result<Self, SensorError> {
        check_range(temperature_c, humidity_rh)?;
        Ok(Self { temperature_c, humidity_rh, timestamp_ms })
    }

    /// Clamps to the measurement range, then quantizes to the 0.1 grid.
    /// Total: any finite input yields a valid reading.
    pub fn clamped(temperature_c: f64, humidity_rh: f64, timestamp_ms: u64) -> Self {
        Self {
            temperature_c: quantize_tenths(temperature_c.clamp(TEMP_MIN_C, TEMP_MAX_C)),
            humidity_rh: quantize_tenths(humidity_rh.clamp(HUMIDITY_MIN_RH, HUMIDITY_MAX_RH)),
            timestamp_ms,
        }
    }
}

/// Rounds to the nearest 0.1, halves away from zero.
pub fn quantize_tenths(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

fn check_range(temperature_c: f64, humidity_rh: f64) -> Result<(), SensorError> {
    if !temperature_c.is_finite() || !(TEMP_MIN_C..=TEMP_MAX_C).contains(&temperature_c) {
        return Err(SensorError::OutOfRange { field: "temperature_c", value: temperature_c });
    }
    if !humidity_rh.is_finite() || !(HUMIDITY_MIN_RH..=HUMIDITY_MAX_RH).contains(&humidity_rh) {
        return Err(SensorError::OutOfRange { field: "humidity_rh", value: humidity_rh });
    }
    Ok(())
}

/// The raw 40-bit frame as it travels over the (simulated) data pin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawFrame(pub [u8; 5]);

impl RawFrame {
    pub fn octets(&self) -> &[u8; 5] {
        &self.0
    }

    /// Ten uppercase hex digits, no separators, e.g. `028C00F886`.
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02X}")).collect()
    }

    /// Parses the hex form; case-insensitive on input.
    pub fn from_hex(s: &str) -> Result<Self, SensorError> {
        let s = s.trim();
        if s.len() != 10 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(SensorError::BadHex(s.to_string()));
        }
        let mut octets = [0u8; 5];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).expect("ascii checked above");
            octets[i] = u8::from_str_radix(hex, 16).expect("hex digits checked above");
        }
        Ok(Self(octets))
    }
}

fn checksum(octets: &[u8; 5]) -> u8 {
    octets[..4].iter().fold(0u8, |acc, b| acc.wrapping_add(*b))
}

/// Encodes a reading into the 5-octet frame.
pub fn encode_frame(reading: &Reading) -> Result<RawFrame, SensorError> {
    check_range(reading.temperature_c, reading.humidity_rh)?;
    let humidity_word = (reading.humidity_rh * 10.0).round() as u16;
    let magnitude = (reading.temperature_c.abs() * 10.0).round() as u16;
    let temp_word = if reading.temperature_c < 0.0 { magnitude | SIGN_BIT } else { magnitude };
    let mut octets = [
        (humidity_word >> 8) as u8,
        (humidity_word & 0xFF) as u8,
        (temp_word >> 8) as u8,
        (temp_word & 0xFF) as u8,
        0,
    ];
    octets[4] = checksum(&octets);
    Ok(RawFrame(octets))
}

/// Decodes a frame back into a reading stamped with `timestamp_ms`.
///
/// Checksum is verified before anything else; range checks follow.
pub fn decode_frame(frame: &RawFrame, timestamp_ms: u64) -> Result<Reading, SensorError> {
    let octets = frame.octets();
    let computed = checksum(octets);
    if computed != octets[4] {
        return Err(SensorError::ChecksumMismatch { expected: octets[4], computed });
    }
    let humidity_word = u16::from_be_bytes([octets[0], octets[1]]);
    if humidity_word > HUMIDITY_WORD_MAX {
        return Err(SensorError::OutOfRange {
            field: "humidity word",
            value: humidity_word as f64,
        });
    }
    let temp_word = u16::from_be_bytes([octets[2], octets[3]]);
    let magnitude = temp_word & !SIGN_BIT;
    if magnitude > TEMP_MAGNITUDE_MAX {
        return Err(SensorError::OutOfRange {
            field: "temperature magnitude",
            value: magnitude as f64,
        });
    }
    let sign = if temp_word & SIGN_BIT != 0 { -1.0 } else { 1.0 };
    Ok(Reading {
        temperature_c: sign * (magnitude as f64) / 10.0,
        humidity_rh: (humidity_word as f64) / 10.0,
        timestamp_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent checksum oracle: wide-integer sum of the four data
    /// octets, reduced mod 256. Kept separate from the wrapping-add path
    /// the codec uses.
    fn oracle_checksum(data: &[u8]) -> u8 {
        (data.iter().map(|&b| b as u32).sum::<u32>() % 256) as u8
    }

    fn reading(t: f64, h: f64) -> Reading {
        Reading::new(t, h, 0).unwrap()
    }

    #[test]
    fn encode_all_zero_identity() {
        let frame = encode_frame(&reading(0.0, 0.0)).unwrap();
        assert_eq!(frame.octets(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn encode_positive_reading() {
        // 65.2 %RH -> 652 = 0x028C, 24.8 degC -> 248 = 0x00F8,
        // oracle: (0x02 + 0x8C + 0x00 + 0xF8) % 256 = 0x86
        let frame = encode_frame(&reading(24.8, 65.2)).unwrap();
        assert_eq!(frame.octets(), &[0x02, 0x8C, 0x00, 0xF8, 0x86]);
        assert_eq!(frame.octets()[4], oracle_checksum(&frame.octets()[..4]));
        assert_eq!(frame.to_hex(), "028C00F886");
    }

    #[test]
    fn encode_negative_temperature_sets_sign_bit() {
        // 40.0 %RH -> 0x0190, -10.1 degC -> 101 = 0x65 with bit 15 set,
        // oracle: (0x01 + 0x90 + 0x80 + 0x65) % 256 = 0x76
        let frame = encode_frame(&reading(-10.1, 40.0)).unwrap();
        assert_eq!(frame.octets(), &[0x01, 0x90, 0x80, 0x65, 0x76]);
        assert_eq!(frame.octets()[4], oracle_checksum(&frame.octets()[..4]));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        assert!(matches!(
            encode_frame(&Reading { temperature_c: 80.1, humidity_rh: 50.0, timestamp_ms: 0 }),
            Err(SensorError::OutOfRange { field: "temperature_c", .. })
        ));
        assert!(matches!(
            encode_frame(&Reading { temperature_c: 0.0, humidity_rh: 100.1, timestamp_ms: 0 }),
            Err(SensorError::OutOfRange { field: "humidity_rh", .. })
        ));
        assert!(encode_frame(&reading(-40.0, 0.0)).is_ok());
        assert!(encode_frame(&reading(80.0, 100.0)).is_ok());
    }

    #[test]
    fn decode_all_zero_identity() {
        let r = decode_frame(&RawFrame([0, 0, 0, 0, 0]), 42).unwrap();
        assert_eq!(r, Reading { temperature_c: 0.0, humidity_rh: 0.0, timestamp_ms: 42 });
    }

    #[test]
    fn decode_positive_reading() {
        let r = decode_frame(&RawFrame([0x02, 0x8C, 0x00, 0xF8, 0x86]), 0).unwrap();
        assert_eq!(r.temperature_c, 24.8);
        assert_eq!(r.humidity_rh, 65.2);
    }

    #[test]
    fn decode_rejects_corrupted_checksum() {
        assert!(matches!(
            decode_frame(&RawFrame([0x02, 0x8C, 0x00, 0xF8, 0x87]), 0),
            Err(SensorError::ChecksumMismatch { expected: 0x87, computed: 0x86 })
        ));
    }

    #[test]
    fn decode_rejects_out_of_range_words() {
        // humidity word 1001 with a valid checksum
        let mut octets = [0x03, 0xE9, 0x00, 0x00, 0x00];
        octets[4] = oracle_checksum(&octets[..4]);
        assert!(matches!(
            decode_frame(&RawFrame(octets), 0),
            Err(SensorError::OutOfRange { field: "humidity word", .. })
        ));
        // temperature magnitude 801 with a valid checksum, sign set
        let mut octets = [0x00, 0x00, 0x83, 0x21, 0x00];
        octets[4] = oracle_checksum(&octets[..4]);
        assert!(matches!(
            decode_frame(&RawFrame(octets), 0),
            Err(SensorError::OutOfRange { field: "temperature magnitude", .. })
        ));
    }

    #[test]
    fn checksum_is_verified_before_range() {
        // bad humidity word AND bad checksum: checksum error wins
        assert!(matches!(
            decode_frame(&RawFrame([0x03, 0xE9, 0x00, 0x00, 0x55]), 0),
            Err(SensorError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn negative_zero_encodes_without_sign_bit() {
        let frame = encode_frame(&reading(-0.0, 0.0)).unwrap();
        assert_eq!(frame.octets(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn hex_round_trip_and_rejection() {
        let frame = RawFrame([0x02, 0x8C, 0x00, 0xF8, 0x86]);
        assert_eq!(RawFrame::from_hex("028C00F886").unwrap(), frame);
        assert_eq!(RawFrame::from_hex("028c00f886").unwrap(), frame);
        assert!(RawFrame::from_hex("028C00F8").is_err());
        assert!(RawFrame::from_hex("028C00F886FF").is_err());
        assert!(RawFrame::from_hex("028C00F88G").is_err());
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize_tenths(0.05), 0.1);
        assert_eq!(quantize_tenths(-0.05), -0.1);
        assert_eq!(quantize_tenths(24.84), 24.8);
        assert_eq!(quantize_tenths(24.85), 24.9);
    }

    proptest! {
        #[test]
        fn round_trip_over_the_grid(temp_tenths in -400i32..=800, hum_tenths in 0i32..=1000) {
            let r = Reading::new(temp_tenths as f64 / 10.0, hum_tenths as f64 / 10.0, 7).unwrap();
            let decoded = decode_frame(&encode_frame(&r).unwrap(), 7).unwrap();
            prop_assert_eq!(decoded, r);
        }

        #[test]
        fn every_single_bit_flip_is_rejected(temp_tenths in -400i32..=800, hum_tenths in 0i32..=1000) {
            let r = Reading::new(temp_tenths as f64 / 10.0, hum_tenths as f64 / 10.0, 0).unwrap();
            let frame = encode_frame(&r).unwrap();
            for bit in 0..40 {
                let mut octets = *frame.octets();
                octets[bit / 8] ^= 1 << (bit % 8);
                prop_assert!(decode_frame(&RawFrame(octets), 0).is_err(),
                    "flip of bit {} went undetected", bit);
            }
        }
    }
}
