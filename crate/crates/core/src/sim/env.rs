//! Room plant model driven by the controller's actuation.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::config::{OutdoorSpec, RoomSpec, ThermalConstants};
use crate::control::ControlOutputs;

/// Largest illuminance the light sensor can report.
pub const MAX_SENSOR_LUX: f64 = 2.5 * 1023.0;
pub const MIN_TEMP_C: f64 = -10.0;
pub const MAX_TEMP_C: f64 = 50.0;

/// Ground truth for one room at a point in simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomEnv {
    /// Seconds since local midnight of day zero.
    pub elapsed_s: f64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub light_lux: f64,
    pub outdoor_temp_c: f64,
    pub occupancy: bool,
    pub spec: RoomSpec,
    pub outdoor: OutdoorSpec,
    pub thermal: ThermalConstants,
}

fn hour_of_day(elapsed_s: f64) -> f64 {
    (elapsed_s / 3600.0).rem_euclid(24.0)
}

pub fn outdoor_temp(outdoor: &OutdoorSpec, elapsed_s: f64) -> f64 {
    let h = hour_of_day(elapsed_s);
    outdoor.mean_c - outdoor.amplitude_c * (TAU * (h - outdoor.coldest_hour) / 24.0).cos()
}

pub fn daylight(peak_lux: f64, elapsed_s: f64) -> f64 {
    let h = hour_of_day(elapsed_s);
    if (6.0..18.0).contains(&h) {
        peak_lux * (PI * (h - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

pub fn occupied(spec: &RoomSpec, elapsed_s: f64) -> bool {
    let h = hour_of_day(elapsed_s);
    spec.occupancy.iter().any(|&[start, end]| h >= start && h < end)
}

impl RoomEnv {
    pub fn new(spec: RoomSpec, outdoor: OutdoorSpec, thermal: ThermalConstants) -> Self {
        let mut env = RoomEnv {
            elapsed_s: 0.0,
            temperature_c: spec.initial_temp_c.clamp(MIN_TEMP_C, MAX_TEMP_C),
            humidity_pct: 0.0,
            light_lux: 0.0,
            outdoor_temp_c: 0.0,
            occupancy: false,
            spec,
            outdoor,
            thermal,
        };
        env.refresh_exogenous(ControlOutputs::default());
        env
    }

    fn refresh_exogenous(&mut self, actuation: ControlOutputs) {
        let h = hour_of_day(self.elapsed_s);
        self.outdoor_temp_c = outdoor_temp(&self.outdoor, self.elapsed_s);
        self.humidity_pct =
            (self.spec.humidity_pct + self.spec.humidity_swing_pct * (TAU * (h - 10.0) / 24.0).sin()).clamp(0.0, 100.0);
        let lamp = if actuation.light_on { self.thermal.lamp_lux } else { 0.0 };
        self.light_lux = (daylight(self.spec.daylight_peak_lux, self.elapsed_s) + lamp).clamp(0.0, MAX_SENSOR_LUX);
        self.occupancy = occupied(&self.spec, self.elapsed_s);
    }

    /// Rate of temperature change in °C per hour.
    pub fn temperature_rate(&self, temp_c: f64, actuation: ControlOutputs) -> f64 {
        let k = &self.thermal;
        let heat = if actuation.heat_on { k.heat_rate_c_per_h } else { 0.0 };
        let cool = if actuation.cool_on { k.cool_rate_c_per_h } else { 0.0 };
        k.k_loss_per_h * (self.outdoor_temp_c - temp_c) + heat - cool
    }
}

/// Explicit Euler step of at most one second at a time.
pub fn env_step(env: &RoomEnv, actuation: ControlOutputs, dt_s: f64) -> RoomEnv {
    assert!(dt_s > 0.0, "env_step needs a positive time step");
    let mut next = env.clone();
    let mut remaining = dt_s;
    while remaining > 1e-12 {
        let h = remaining.min(1.0);
        let rate = next.temperature_rate(next.temperature_c, actuation);
        next.temperature_c = (next.temperature_c + h / 3600.0 * rate).clamp(MIN_TEMP_C, MAX_TEMP_C);
        next.elapsed_s += h;
        next.refresh_exogenous(actuation);
        remaining -= h;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_outdoor(temp: f64) -> OutdoorSpec {
        OutdoorSpec { mean_c: temp, amplitude_c: 0.0, coldest_hour: 0.0 }
    }

    fn env(temp: f64, outdoor: f64) -> RoomEnv {
        RoomEnv::new(
            RoomSpec { initial_temp_c: temp, ..Default::default() },
            constant_outdoor(outdoor),
            ThermalConstants::default(),
        )
    }

    #[test]
    fn equilibrium_is_stationary() {
        let e = env(20.0, 20.0);
        for dt in [1.0, 60.0, 3600.0] {
            assert_eq!(env_step(&e, ControlOutputs::default(), dt).temperature_c, 20.0);
        }
    }

    #[test]
    fn heating_for_an_hour_matches_euler_and_analytic() {
        let e = env(20.0, 20.0);
        let heat = ControlOutputs { heat_on: true, ..Default::default() };
        let got = env_step(&e, heat, 3600.0).temperature_c;

        // Reference explicit Euler, 3600 one-second steps.
        let mut t = 20.0f64;
        for _ in 0..3600 {
            t += (0.3 * (20.0 - t) + 3.0) / 3600.0;
        }
        assert!((got - t).abs() < 1e-9, "{got} vs {t}");

        // Exact solution of dT/dt = 0.3 (20 - T) + 3: T = 30 - 10 e^{-0.3 t}.
        let exact = 30.0 - 10.0 * (-0.3f64).exp();
        assert!((got - exact).abs() < 1e-3);
        assert!(got < 23.0 && got > 22.5);
    }

    #[test]
    fn cools_toward_outdoor() {
        let e = env(20.0, 10.0);
        let after = env_step(&e, ControlOutputs::default(), 3600.0);
        assert!(after.temperature_c < 20.0 && after.temperature_c > 10.0);
        let later = env_step(&after, ControlOutputs::default(), 3600.0);
        assert!(later.temperature_c < after.temperature_c);
    }

    #[test]
    fn lamp_adds_light() {
        let e = env(20.0, 20.0);
        let dark = env_step(&e, ControlOutputs::default(), 1.0);
        let lit = env_step(&e, ControlOutputs { light_on: true, ..Default::default() }, 1.0);
        assert_eq!(dark.light_lux, 0.0); // midnight
        assert_eq!(lit.light_lux, 300.0);
    }

    #[test]
    fn schedules() {
        let spec = RoomSpec { occupancy: vec![[7.0, 9.0]], ..Default::default() };
        assert!(!occupied(&spec, 6.9 * 3600.0));
        assert!(occupied(&spec, 7.0 * 3600.0));
        assert!(occupied(&spec, (24.0 + 8.0) * 3600.0));
        assert_eq!(daylight(400.0, 12.0 * 3600.0), 400.0);
        assert_eq!(daylight(400.0, 3.0 * 3600.0), 0.0);
        let o = OutdoorSpec::default();
        assert!((outdoor_temp(&o, 4.0 * 3600.0) - 12.0).abs() < 1e-9);
        assert!((outdoor_temp(&o, 16.0 * 3600.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn temperature_stays_in_plausible_bounds() {
        let mut e = env(49.0, 50.0);
        let heat = ControlOutputs { heat_on: true, ..Default::default() };
        for _ in 0..48 {
            e = env_step(&e, heat, 3600.0);
        }
        assert!(e.temperature_c <= MAX_TEMP_C);
    }
}
