//! Simulation configuration, loaded from JSON.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::energy::PowerMode;

pub const MIN_SAMPLE_PERIOD_S: f64 = 10.0;
pub const MAX_SAMPLE_PERIOD_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("node id 0 is reserved for the base station")]
    ReservedId,
    #[error("duplicate node id {0}")]
    DuplicateId(u16),
    #[error("node {id}: sample period {period} s outside [10, 60]")]
    SamplePeriod { id: u16, period: f64 },
    #[error("node {id}: room {room} not defined")]
    UnknownRoom { id: u16, room: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseSpec {
    pub position: [f64; 2],
    pub radio_range_m: f64,
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec { position: [0.0, 0.0], radio_range_m: 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u16,
    /// One-based room index.
    pub room: usize,
    pub position: [f64; 2],
    #[serde(default)]
    pub power_mode: PowerMode,
    #[serde(default = "default_period")]
    pub sample_period_s: f64,
    #[serde(default = "default_battery")]
    pub battery_mah: f64,
    #[serde(default = "default_range")]
    pub radio_range_m: f64,
    /// The node stops sampling after this many seconds of simulated time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silent_after_s: Option<f64>,
}

fn default_period() -> f64 {
    10.0
}

fn default_battery() -> f64 {
    2000.0
}

fn default_range() -> f64 {
    12.0
}

impl NodeSpec {
    pub fn new(id: u16, room: usize, position: [f64; 2]) -> Self {
        NodeSpec {
            id,
            room,
            position,
            power_mode: PowerMode::HP,
            sample_period_s: default_period(),
            battery_mah: default_battery(),
            radio_range_m: default_range(),
            silent_after_s: None,
        }
    }
}

/// Ground-truth environment of one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomSpec {
    pub initial_temp_c: f64,
    pub humidity_pct: f64,
    /// Peak-to-mean daily humidity swing.
    pub humidity_swing_pct: f64,
    /// Indoor daylight at solar noon.
    pub daylight_peak_lux: f64,
    pub pressure_mbar: f64,
    /// Occupied intervals as [start_hour, end_hour) of the day.
    pub occupancy: Vec<[f64; 2]>,
}

impl Default for RoomSpec {
    fn default() -> Self {
        RoomSpec {
            initial_temp_c: 21.0,
            humidity_pct: 45.0,
            humidity_swing_pct: 5.0,
            daylight_peak_lux: 400.0,
            pressure_mbar: 1013.2,
            occupancy: vec![[7.0, 9.0], [18.0, 23.0]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalConstants {
    /// Envelope loss coefficient, 1/h.
    pub k_loss_per_h: f64,
    pub heat_rate_c_per_h: f64,
    pub cool_rate_c_per_h: f64,
    /// Illuminance added by the room lamp.
    pub lamp_lux: f64,
}

impl Default for ThermalConstants {
    fn default() -> Self {
        ThermalConstants { k_loss_per_h: 0.3, heat_rate_c_per_h: 3.0, cool_rate_c_per_h: 3.0, lamp_lux: 300.0 }
    }
}

/// Daily outdoor temperature cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutdoorSpec {
    pub mean_c: f64,
    pub amplitude_c: f64,
    pub coldest_hour: f64,
}

impl Default for OutdoorSpec {
    fn default() -> Self {
        OutdoorSpec { mean_c: 16.0, amplitude_c: 4.0, coldest_hour: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkSpec {
    /// Independent per-hop loss probability.
    pub loss_probability: f64,
    pub hop_latency_ms: u64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec { loss_probability: 0.0, hop_latency_ms: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Unix time of simulated t = 0, seconds. Local midnight by convention.
    pub start_unix_s: u64,
    /// IEEE 802.15.4 channel; metadata only.
    pub channel: u8,
    pub base: BaseSpec,
    pub nodes: Vec<NodeSpec>,
    pub rooms: Vec<RoomSpec>,
    pub link: LinkSpec,
    /// A health report follows every n-th data packet.
    pub health_every: u32,
    /// Start-up delay of low-power nodes before their first sample.
    pub lp_startup_delay_s: f64,
    pub lp_duty_cycle: f64,
    pub thermal: ThermalConstants,
    pub outdoor: OutdoorSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            start_unix_s: 1_356_998_400, // 2013-01-01T00:00:00Z
            channel: 26,
            base: BaseSpec::default(),
            nodes: Vec::new(),
            rooms: Vec::new(),
            link: LinkSpec::default(),
            health_every: 10,
            lp_startup_delay_s: 30.0,
            lp_duty_cycle: 0.01,
            thermal: ThermalConstants::default(),
            outdoor: OutdoorSpec::default(),
        }
    }
}

impl SimConfig {
    /// Three rooms, nodes 101..=103. Node 103 is out of the base station's
    /// range and reaches it through 102.
    pub fn default_house() -> Self {
        SimConfig {
            nodes: vec![
                NodeSpec::new(101, 1, [3.0, 2.0]),
                NodeSpec::new(102, 2, [8.0, 3.0]),
                NodeSpec::new(103, 3, [16.0, 4.0]),
            ],
            rooms: vec![
                RoomSpec {
                    initial_temp_c: 19.0,
                    humidity_pct: 45.0,
                    daylight_peak_lux: 500.0,
                    occupancy: vec![[6.5, 8.5], [18.0, 23.5]],
                    ..Default::default()
                },
                RoomSpec {
                    initial_temp_c: 21.5,
                    humidity_pct: 50.0,
                    daylight_peak_lux: 350.0,
                    occupancy: vec![[7.0, 8.0], [12.0, 14.0], [19.0, 22.0]],
                    ..Default::default()
                },
                RoomSpec {
                    initial_temp_c: 24.0,
                    humidity_pct: 55.0,
                    daylight_peak_lux: 250.0,
                    occupancy: vec![[0.0, 6.0], [21.0, 24.0]],
                    ..Default::default()
                },
            ],
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if n.id == crate::wire::BASE_STATION_ADDR {
                return Err(ConfigError::ReservedId);
            }
            if !seen.insert(n.id) {
                return Err(ConfigError::DuplicateId(n.id));
            }
            if !(MIN_SAMPLE_PERIOD_S..=MAX_SAMPLE_PERIOD_S).contains(&n.sample_period_s) {
                return Err(ConfigError::SamplePeriod { id: n.id, period: n.sample_period_s });
            }
            if n.room == 0 || n.room > self.rooms.len() {
                return Err(ConfigError::UnknownRoom { id: n.id, room: n.room });
            }
            if !(n.battery_mah > 0.0) || !(n.radio_range_m > 0.0) {
                return Err(ConfigError::Invalid(format!("node {}: battery and range must be positive", n.id)));
            }
        }
        if !(0.0..=1.0).contains(&self.link.loss_probability) {
            return Err(ConfigError::Invalid("link.loss_probability must be in [0, 1]".into()));
        }
        if !(self.lp_duty_cycle > 0.0 && self.lp_duty_cycle <= 1.0) {
            return Err(ConfigError::Invalid("lp_duty_cycle must be in (0, 1]".into()));
        }
        if self.health_every == 0 {
            return Err(ConfigError::Invalid("health_every must be at least 1".into()));
        }
        if !(self.lp_startup_delay_s >= 0.0) {
            return Err(ConfigError::Invalid("lp_startup_delay_s must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_house_is_valid() {
        SimConfig::default_house().validate().unwrap();
    }

    #[test]
    fn json_defaults_fill_in() {
        let text = r#"{
            "seed": 3,
            "nodes": [{"id": 101, "room": 1, "position": [1, 1], "power_mode": "LP"}],
            "rooms": [{"initial_temp_c": 20}]
        }"#;
        let c = SimConfig::from_json(text).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.channel, 26);
        assert_eq!(c.nodes[0].power_mode, PowerMode::LP);
        assert_eq!(c.nodes[0].sample_period_s, 10.0);
        assert_eq!(c.rooms[0].humidity_pct, 45.0);
    }

    #[test]
    fn rejects_bad_nodes() {
        let mut c = SimConfig::default_house();
        c.nodes[0].sample_period_s = 5.0;
        assert!(matches!(c.validate(), Err(ConfigError::SamplePeriod { id: 101, .. })));

        let mut c = SimConfig::default_house();
        c.nodes[1].id = 101;
        assert!(matches!(c.validate(), Err(ConfigError::DuplicateId(101))));

        let mut c = SimConfig::default_house();
        c.nodes[2].id = 0;
        assert!(matches!(c.validate(), Err(ConfigError::ReservedId)));

        let mut c = SimConfig::default_house();
        c.nodes[2].room = 4;
        assert!(matches!(c.validate(), Err(ConfigError::UnknownRoom { id: 103, room: 4 })));
    }

    #[test]
    fn serializes_back_to_loadable_json() {
        let c = SimConfig::default_house();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(SimConfig::from_json(&text).unwrap(), c);
    }
}
