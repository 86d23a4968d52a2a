//! IRIS mote current budget and battery lifetime.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current draw of the IRIS board in milliamps, per operating state.
pub mod iris_ma {
    pub const MCU_FULL: f64 = 8.0;
    pub const MCU_SLEEP: f64 = 0.008;
    pub const RADIO_RX: f64 = 16.0;
    pub const RADIO_TX: f64 = 17.0;
    pub const RADIO_SLEEP: f64 = 0.001;
    pub const FLASH_WRITE: f64 = 15.0;
    pub const FLASH_READ: f64 = 4.0;
    pub const FLASH_SLEEP: f64 = 0.002;
}

/// 802.15.4 air rate used to estimate time on air.
pub const RADIO_BITRATE_BPS: f64 = 250_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PowerMode {
    /// MCU and radio always on.
    #[default]
    #[serde(alias = "hp")]
    HP,
    /// Duty-cycled MCU and radio.
    #[serde(alias = "lp")]
    LP,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LifetimeError {
    #[error("battery capacity must be positive, got {0}")]
    Battery(f64),
    #[error("sample period must be positive, got {0}")]
    SamplePeriod(f64),
    #[error("duty cycle must be in (0, 1], got {0}")]
    DutyCycle(f64),
}

/// Average current draw in mA.
pub fn average_current_ma(mode: PowerMode, duty_cycle: f64) -> f64 {
    let active = iris_ma::MCU_FULL + iris_ma::RADIO_RX;
    match mode {
        PowerMode::HP => active,
        PowerMode::LP => iris_ma::MCU_SLEEP + iris_ma::RADIO_SLEEP + duty_cycle * active,
    }
}

/// Hours until the battery is drained at the mode's average current.
///
/// The sample period does not enter the average; it is validated so that
/// callers cannot pass a nonsensical schedule.
pub fn estimate_lifetime(
    mode: PowerMode,
    battery_mah: f64,
    sample_period_s: f64,
    duty_cycle: f64,
) -> Result<f64, LifetimeError> {
    if !(battery_mah > 0.0) {
        return Err(LifetimeError::Battery(battery_mah));
    }
    if !(sample_period_s > 0.0) {
        return Err(LifetimeError::SamplePeriod(sample_period_s));
    }
    if !(duty_cycle > 0.0 && duty_cycle <= 1.0) {
        return Err(LifetimeError::DutyCycle(duty_cycle));
    }
    Ok(battery_mah / average_current_ma(mode, duty_cycle))
}

/// Charge drawn per state, in mAh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub mcu_full: f64,
    pub mcu_sleep: f64,
    pub radio_rx: f64,
    pub radio_tx: f64,
    pub radio_sleep: f64,
}

impl EnergyLedger {
    pub fn total_mah(&self) -> f64 {
        self.mcu_full + self.mcu_sleep + self.radio_rx + self.radio_tx + self.radio_sleep
    }

    /// Charges `seconds` of background operation.
    pub fn charge_idle(&mut self, mode: PowerMode, duty_cycle: f64, seconds: f64) {
        let hours = seconds / 3600.0;
        match mode {
            PowerMode::HP => {
                self.mcu_full += iris_ma::MCU_FULL * hours;
                self.radio_rx += iris_ma::RADIO_RX * hours;
            }
            PowerMode::LP => {
                self.mcu_sleep += iris_ma::MCU_SLEEP * hours;
                self.radio_sleep += iris_ma::RADIO_SLEEP * hours;
                self.mcu_full += duty_cycle * iris_ma::MCU_FULL * hours;
                self.radio_rx += duty_cycle * iris_ma::RADIO_RX * hours;
            }
        }
    }

    /// Charges the transmission of `bytes` over the air.
    pub fn charge_tx(&mut self, bytes: usize) {
        let seconds = bytes as f64 * 8.0 / RADIO_BITRATE_BPS;
        self.radio_tx += iris_ma::RADIO_TX * seconds / 3600.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_power_lifetime() {
        let h = estimate_lifetime(PowerMode::HP, 2000.0, 10.0, 1.0).unwrap();
        assert!((h - 2000.0 / 24.0).abs() < 1e-9);
        assert!((h - 83.33).abs() < 0.01);
        assert!((1.0..14.0).contains(&(h / 24.0)));
    }

    #[test]
    fn low_power_lifetime() {
        let h = estimate_lifetime(PowerMode::LP, 2000.0, 10.0, 0.01).unwrap();
        assert!((h - 2000.0 / 0.249).abs() < 1e-6);
        assert!((h - 8032.0).abs() < 1.0);
        assert!((90.0..730.0).contains(&(h / 24.0)));
    }

    #[test]
    fn full_duty_low_power_equals_high_power_active_draw() {
        let lp = estimate_lifetime(PowerMode::LP, 2000.0, 10.0, 1.0).unwrap();
        let hp = estimate_lifetime(PowerMode::HP, 2000.0, 10.0, 1.0).unwrap();
        // Sleep baselines add 9 uA on top of the active draw.
        assert!((lp - hp).abs() / hp < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        assert!(matches!(estimate_lifetime(PowerMode::HP, 0.0, 10.0, 1.0), Err(LifetimeError::Battery(_))));
        assert!(matches!(estimate_lifetime(PowerMode::HP, 10.0, 0.0, 1.0), Err(LifetimeError::SamplePeriod(_))));
        assert!(matches!(estimate_lifetime(PowerMode::LP, 10.0, 10.0, 0.0), Err(LifetimeError::DutyCycle(_))));
        assert!(matches!(estimate_lifetime(PowerMode::LP, 10.0, 10.0, 1.5), Err(LifetimeError::DutyCycle(_))));
    }

    #[test]
    fn ledger_matches_average_current() {
        for (mode, duty) in [(PowerMode::HP, 1.0), (PowerMode::LP, 0.01)] {
            let mut ledger = EnergyLedger::default();
            for _ in 0..3600 {
                ledger.charge_idle(mode, duty, 1.0);
            }
            assert!((ledger.total_mah() - average_current_ma(mode, duty)).abs() < 1e-9);
        }
    }
}
