//! Bipositional room control.
//!
//! Heating and cooling share one mode per room so they can never be on at the
//! same time. A room starts heating once the temperature falls more than the
//! deadband below the setpoint and stops when it climbs back to the setpoint;
//! cooling mirrors this above the setpoint. Lighting is stateless: the lamp is
//! on while the room is darker than the threshold and movement is detected.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub setpoint_c: f64,
    pub deadband_c: f64,
    pub light_threshold_lux: f64,
    /// Accelerometer samples considered by [`detect_movement`].
    pub movement_window: usize,
    pub movement_sigma_g: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            setpoint_c: 22.0,
            deadband_c: 1.0,
            light_threshold_lux: 200.0,
            movement_window: 10,
            movement_sigma_g: 0.05,
        }
    }
}

impl ControlConfig {
    pub fn is_valid(&self) -> bool {
        self.deadband_c > 0.0
            && self.light_threshold_lux >= 0.0
            && self.setpoint_c.is_finite()
            && self.movement_window >= 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Idle,
    Heating,
    Cooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlState {
    pub mode: Mode,
    pub light_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlOutputs {
    pub heat_on: bool,
    pub cool_on: bool,
    pub light_on: bool,
}

impl From<ControlState> for ControlOutputs {
    fn from(s: ControlState) -> Self {
        ControlOutputs {
            heat_on: s.mode == Mode::Heating,
            cool_on: s.mode == Mode::Cooling,
            light_on: s.light_on,
        }
    }
}

pub fn evaluate_room(
    temp_c: f64,
    lux: f64,
    movement: bool,
    config: &ControlConfig,
    prev: ControlState,
) -> (ControlState, ControlOutputs) {
    let sp = config.setpoint_c;
    let mode = match prev.mode {
        Mode::Idle if temp_c < sp - config.deadband_c => Mode::Heating,
        Mode::Idle if temp_c > sp + config.deadband_c => Mode::Cooling,
        Mode::Heating if temp_c >= sp => Mode::Idle,
        Mode::Cooling if temp_c <= sp => Mode::Idle,
        m => m,
    };
    let state = ControlState { mode, light_on: lux < config.light_threshold_lux && movement };
    (state, state.into())
}

/// True when the sample standard deviation of the last `window` magnitudes
/// exceeds `sigma_g`. Fewer than `window` samples never count as movement.
pub fn detect_movement(samples: &[f64], window: usize, sigma_g: f64) -> bool {
    if window < 2 || samples.len() < window {
        return false;
    }
    let recent = &samples[samples.len() - window..];
    let n = recent.len() as f64;
    let mean = recent.iter().sum::<f64>() / n;
    let var = recent.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() > sigma_g
}

/// Per-room controller that also counts mode switches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoomController {
    pub config: ControlConfig,
    pub state: ControlState,
    pub mode_switches: u64,
}

impl RoomController {
    pub fn new(config: ControlConfig) -> Self {
        RoomController { config, ..Default::default() }
    }

    pub fn evaluate(&mut self, temp_c: f64, lux: f64, movement: bool) -> ControlOutputs {
        let (next, out) = evaluate_room(temp_c, lux, movement, &self.config, self.state);
        if next.mode != self.state.mode {
            self.mode_switches += 1;
        }
        self.state = next;
        out
    }
}
