//! Raw MTS400 counts to engineering units, and back.
//!
//! Temperature and humidity follow the SHT11 characteristic equations for a
//! 2.5 V supply with 14-bit temperature and 12-bit humidity readings. Light,
//! battery voltage and pressure use plain linear scale factors. The inverse
//! direction is used by the simulator to synthesize packets from a ground
//! truth environment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{Mts400Payload, HUMIDITY_RAW_MAX, TEMPERATURE_RAW_MAX};

/// Highest valid light sensor count.
pub const LIGHT_RAW_MAX: u16 = 1023;

/// Accelerometer count that reads as 0 g.
pub const ACCEL_ZERO_COUNT: u16 = 2048;
/// Accelerometer scale, 1 mg per count.
pub const G_PER_COUNT: f64 = 0.001;

/// Pressure-sensor temperature is reported in 0.1 °C steps offset by -40 °C.
pub const PRESS_TEMP_OFFSET_C: f64 = -40.0;
pub const PRESS_TEMP_C_PER_COUNT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ConvertError {
    #[error("{quantity} count {count} out of range (max {max})")]
    CountOutOfRange { quantity: &'static str, count: u16, max: u16 },
    #[error("{quantity} value {value} cannot be represented")]
    Unrepresentable { quantity: &'static str, value: f64 },
}

/// Converted sensor values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineeringReading {
    pub temperature_c: f64,
    /// Relative humidity, clamped to [0, 100].
    pub humidity_pct: f64,
    pub light_lux: f64,
    pub battery_v: f64,
    pub pressure_mbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionConstants {
    pub d1: f64,
    pub d2: f64,
    pub rh_c1: f64,
    pub rh_c2: f64,
    pub rh_c3: f64,
    pub rh_t1: f64,
    pub rh_t2: f64,
    pub lux_per_count: f64,
    pub mv_per_count: f64,
    pub mbar_per_count: f64,
}

impl ConversionConstants {
    /// SHT11 at 2.5 V, 14-bit temperature / 12-bit humidity.
    pub const SHT11: ConversionConstants = ConversionConstants {
        d1: -39.6,
        d2: 0.01,
        rh_c1: -4.0,
        rh_c2: 0.0405,
        rh_c3: -2.8e-6,
        rh_t1: 0.01,
        rh_t2: 8e-6,
        lux_per_count: 2.5,
        mv_per_count: 1.0,
        mbar_per_count: 0.1,
    };

    pub fn temperature_c(&self, so_t: u16) -> Result<f64, ConvertError> {
        check_count("temperature", so_t, TEMPERATURE_RAW_MAX)?;
        Ok(self.d1 + self.d2 * so_t as f64)
    }

    /// Temperature-compensated relative humidity.
    pub fn humidity_pct(&self, so_rh: u16, temp_c: f64) -> Result<f64, ConvertError> {
        check_count("humidity", so_rh, HUMIDITY_RAW_MAX)?;
        Ok(self.humidity_unchecked(so_rh, temp_c))
    }

    fn humidity_unchecked(&self, so_rh: u16, temp_c: f64) -> f64 {
        let s = so_rh as f64;
        let linear = self.rh_c1 + self.rh_c2 * s + self.rh_c3 * s * s;
        let compensated = (temp_c - 25.0) * (self.rh_t1 + self.rh_t2 * s) + linear;
        compensated.clamp(0.0, 100.0)
    }

    pub fn light_lux(&self, count: u16) -> Result<f64, ConvertError> {
        check_count("light", count, LIGHT_RAW_MAX)?;
        Ok(self.lux_per_count * count as f64)
    }

    pub fn battery_v(&self, count: u16) -> f64 {
        self.mv_per_count * count as f64 / 1000.0
    }

    pub fn pressure_mbar(&self, count: u16) -> f64 {
        self.mbar_per_count * count as f64
    }

    pub fn reading(&self, payload: &Mts400Payload) -> Result<EngineeringReading, ConvertError> {
        let temperature_c = self.temperature_c(payload.temperature_raw)?;
        Ok(EngineeringReading {
            temperature_c,
            humidity_pct: self.humidity_pct(payload.humidity_raw, temperature_c)?,
            light_lux: self.light_lux(payload.light_raw)?,
            battery_v: self.battery_v(payload.voltage_raw),
            pressure_mbar: self.pressure_mbar(payload.pressure_raw),
        })
    }

    pub fn temperature_raw(&self, temp_c: f64) -> Result<u16, ConvertError> {
        affine_inverse("temperature", temp_c, self.d1, self.d2, TEMPERATURE_RAW_MAX)
    }

    /// Count whose compensated humidity at `temp_c` is closest to `rh_pct`.
    pub fn humidity_raw(&self, rh_pct: f64, temp_c: f64) -> Result<u16, ConvertError> {
        if !(0.0..=100.0).contains(&rh_pct) || !temp_c.is_finite() {
            return Err(ConvertError::Unrepresentable { quantity: "humidity", value: rh_pct });
        }
        // Humidity is nondecreasing in the count over the sensor's
        // temperature range, so bisect for the first count reaching the
        // target and pick the nearer of it and its predecessor.
        let (mut lo, mut hi) = (0u16, HUMIDITY_RAW_MAX);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.humidity_unchecked(mid, temp_c) < rh_pct {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let above = lo;
        if above > 0 {
            let below = above - 1;
            let err_below = (self.humidity_unchecked(below, temp_c) - rh_pct).abs();
            let err_above = (self.humidity_unchecked(above, temp_c) - rh_pct).abs();
            if err_below <= err_above {
                return Ok(below);
            }
        }
        Ok(above)
    }

    pub fn light_raw(&self, lux: f64) -> Result<u16, ConvertError> {
        affine_inverse("light", lux, 0.0, self.lux_per_count, LIGHT_RAW_MAX)
    }

    pub fn voltage_raw(&self, volts: f64) -> Result<u16, ConvertError> {
        affine_inverse("battery", volts * 1000.0, 0.0, self.mv_per_count, u16::MAX)
    }

    pub fn pressure_raw(&self, mbar: f64) -> Result<u16, ConvertError> {
        affine_inverse("pressure", mbar, 0.0, self.mbar_per_count, u16::MAX)
    }

    /// Synthesizes a payload that converts back to `reading`. The
    /// accelerometer reads 0 g on both axes.
    pub fn raw_from_engineering(&self, reading: &EngineeringReading) -> Result<Mts400Payload, ConvertError> {
        let temperature_raw = self.temperature_raw(reading.temperature_c)?;
        // Invert humidity at the temperature the receiver will decode.
        let decoded_temp = self.d1 + self.d2 * temperature_raw as f64;
        Ok(Mts400Payload {
            voltage_raw: self.voltage_raw(reading.battery_v)?,
            humidity_raw: self.humidity_raw(reading.humidity_pct, decoded_temp)?,
            temperature_raw,
            light_raw: self.light_raw(reading.light_lux)?,
            press_temp_raw: press_temp_raw(reading.temperature_c)?,
            pressure_raw: self.pressure_raw(reading.pressure_mbar)?,
            accel_x_raw: ACCEL_ZERO_COUNT,
            accel_y_raw: ACCEL_ZERO_COUNT,
            reserved: [0; 10],
        })
    }
}

impl Default for ConversionConstants {
    fn default() -> Self {
        Self::SHT11
    }
}

fn check_count(quantity: &'static str, count: u16, max: u16) -> Result<(), ConvertError> {
    if count > max {
        Err(ConvertError::CountOutOfRange { quantity, count, max })
    } else {
        Ok(())
    }
}

fn affine_inverse(quantity: &'static str, value: f64, offset: f64, scale: f64, max: u16) -> Result<u16, ConvertError> {
    let count = ((value - offset) / scale).round();
    // Allow values that round onto the range ends.
    if count.is_finite() && (0.0..=max as f64).contains(&count) {
        Ok(count as u16)
    } else {
        Err(ConvertError::Unrepresentable { quantity, value })
    }
}

pub fn temp_from_raw(so_t: u16) -> Result<f64, ConvertError> {
    ConversionConstants::SHT11.temperature_c(so_t)
}

pub fn rh_from_raw(so_rh: u16, temp_c: f64) -> Result<f64, ConvertError> {
    ConversionConstants::SHT11.humidity_pct(so_rh, temp_c)
}

pub fn lux_from_raw(count: u16) -> Result<f64, ConvertError> {
    ConversionConstants::SHT11.light_lux(count)
}

pub fn vbat_from_raw(count: u16) -> f64 {
    ConversionConstants::SHT11.battery_v(count)
}

pub fn pressure_from_raw(count: u16) -> f64 {
    ConversionConstants::SHT11.pressure_mbar(count)
}

pub fn raw_from_engineering(reading: &EngineeringReading) -> Result<Mts400Payload, ConvertError> {
    ConversionConstants::SHT11.raw_from_engineering(reading)
}

pub fn press_temp_from_raw(count: u16) -> f64 {
    PRESS_TEMP_OFFSET_C + PRESS_TEMP_C_PER_COUNT * count as f64
}

pub fn press_temp_raw(temp_c: f64) -> Result<u16, ConvertError> {
    affine_inverse("pressure temperature", temp_c, PRESS_TEMP_OFFSET_C, PRESS_TEMP_C_PER_COUNT, u16::MAX)
}

pub fn accel_g_from_raw(count: u16) -> f64 {
    (count as f64 - ACCEL_ZERO_COUNT as f64) * G_PER_COUNT
}

pub fn accel_raw_from_g(g: f64) -> Result<u16, ConvertError> {
    affine_inverse("acceleration", g, -(ACCEL_ZERO_COUNT as f64) * G_PER_COUNT, G_PER_COUNT, u16::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn temperature_examples() {
        assert!((temp_from_raw(0).unwrap() - -39.6).abs() < EPS);
        assert!(temp_from_raw(3960).unwrap().abs() < EPS);
        assert!((temp_from_raw(6400).unwrap() - 24.4).abs() < EPS);
        assert!(matches!(temp_from_raw(16384), Err(ConvertError::CountOutOfRange { .. })));
    }

    #[test]
    fn humidity_examples() {
        assert_eq!(rh_from_raw(0, 25.0).unwrap(), 0.0);
        assert!((rh_from_raw(1000, 25.0).unwrap() - 33.7).abs() < EPS);
        assert!((rh_from_raw(2000, 30.0).unwrap() - 65.93).abs() < EPS);
        assert!(rh_from_raw(4096, 25.0).is_err());
    }

    #[test]
    fn linear_channels() {
        assert_eq!(lux_from_raw(0).unwrap(), 0.0);
        assert_eq!(lux_from_raw(80).unwrap(), 200.0);
        assert!(lux_from_raw(1024).is_err());
        assert_eq!(vbat_from_raw(3000), 3.0);
        assert!((pressure_from_raw(10132) - 1013.2).abs() < EPS);
    }

    #[test]
    fn inverse_examples() {
        let c = ConversionConstants::SHT11;
        assert_eq!(c.temperature_raw(24.4).unwrap(), 6400);
        assert_eq!(c.temperature_raw(-39.6).unwrap(), 0);
        assert!(matches!(c.temperature_raw(-40.0), Err(ConvertError::Unrepresentable { .. })));
        let rh = c.humidity_raw(33.7, 25.0).unwrap();
        assert!((999..=1001).contains(&rh), "{rh}");
        assert!(c.humidity_raw(101.0, 25.0).is_err());
    }

    #[test]
    fn accel_and_press_temp_round_trip() {
        assert_eq!(accel_raw_from_g(0.0).unwrap(), ACCEL_ZERO_COUNT);
        assert!((accel_g_from_raw(accel_raw_from_g(-0.2).unwrap()) + 0.2).abs() < 1e-12);
        assert!((press_temp_from_raw(press_temp_raw(21.3).unwrap()) - 21.3).abs() < 0.05);
    }

    #[test]
    fn humidity_grid_round_trip() {
        let c = ConversionConstants::SHT11;
        for rh in 1..=99 {
            for t in [0.0, 10.0, 25.0, 40.0] {
                let raw = c.humidity_raw(rh as f64, t).unwrap();
                let back = c.humidity_pct(raw, t).unwrap();
                assert!((back - rh as f64).abs() <= 0.05, "rh {rh} t {t} -> {back}");
            }
        }
    }

    #[test]
    fn monotone_in_count() {
        let c = ConversionConstants::SHT11;
        for n in 1..=TEMPERATURE_RAW_MAX {
            assert!(c.temperature_c(n).unwrap() > c.temperature_c(n - 1).unwrap());
        }
        for n in 1..=LIGHT_RAW_MAX {
            assert!(c.light_lux(n).unwrap() > c.light_lux(n - 1).unwrap());
        }
        // Unclamped region of the humidity curve.
        for t in [-39.6, 0.0, 25.0, 60.0, 124.23] {
            let mut prev = c.humidity_unchecked(0, t);
            for n in 1..=HUMIDITY_RAW_MAX {
                let cur = c.humidity_unchecked(n, t);
                assert!(cur >= prev);
                if cur > 0.0 && cur < 100.0 && prev > 0.0 {
                    assert!(cur > prev, "t {t} n {n}");
                }
                prev = cur;
            }
        }
    }

    proptest! {
        #[test]
        fn temperature_round_trip(t in -39.6f64..=124.23) {
            let c = ConversionConstants::SHT11;
            let back = c.temperature_c(c.temperature_raw(t).unwrap()).unwrap();
            prop_assert!((back - t).abs() <= 0.005 + 1e-9);
        }

        #[test]
        fn humidity_always_clamped(raw in 0u16..=HUMIDITY_RAW_MAX, t in -39.6f64..=124.23) {
            let rh = rh_from_raw(raw, t).unwrap();
            prop_assert!((0.0..=100.0).contains(&rh));
        }

        #[test]
        fn full_reading_round_trip(
            t in -20.0f64..=60.0,
            rh in 5.0f64..=95.0,
            lux in 0.0f64..=2557.5,
            v in 2.0f64..=3.3,
            p in 900.0f64..=1100.0,
        ) {
            let reading = EngineeringReading { temperature_c: t, humidity_pct: rh, light_lux: lux, battery_v: v, pressure_mbar: p };
            let payload = raw_from_engineering(&reading).unwrap();
            let back = ConversionConstants::SHT11.reading(&payload).unwrap();
            prop_assert!((back.temperature_c - t).abs() <= 0.005 + 1e-9);
            prop_assert!((back.light_lux - lux).abs() <= 1.25 + 1e-9);
            prop_assert!((back.battery_v - v).abs() <= 0.0005 + 1e-9);
            prop_assert!((back.pressure_mbar - p).abs() <= 0.05 + 1e-9);
            prop_assert!((back.humidity_pct - rh).abs() <= 0.05);
        }
    }
}
