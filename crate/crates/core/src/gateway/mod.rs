//! Base-station gateway: serial ingestion, per-room state and logging.

pub mod lvm;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{detect_movement, ControlConfig, ControlOutputs};
use crate::convert::{accel_g_from_raw, ConversionConstants, ConvertError, EngineeringReading};
use crate::time::Timestamp;
use crate::wire::{Deframed, Deframer, FrameBody, FrameFault, HealthReport, SensorFrame};

/// Sequence numbers further ahead than this are treated as old packets
/// from before a wraparound.
const SEQ_WINDOW: u16 = 32768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// (room, node) pairs; room indices are one-based.
    pub rooms: Vec<(usize, u16)>,
    pub sample_period_s: f64,
    pub movement_window: usize,
    pub movement_sigma_g: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let control = ControlConfig::default();
        GatewayConfig {
            rooms: vec![(1, 101), (2, 102), (3, 103)],
            sample_period_s: 10.0,
            movement_window: control.movement_window,
            movement_sigma_g: control.movement_sigma_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayConfigError {
    #[error("room {0} mapped more than once")]
    DuplicateRoom(usize),
    #[error("node {0} mapped more than once")]
    DuplicateNode(u16),
    #[error("rooms must be numbered 1..=n")]
    RoomNumbering,
    #[error("sample period must be positive")]
    SamplePeriod,
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayConfigError> {
        let mut rooms = std::collections::BTreeSet::new();
        let mut nodes = std::collections::BTreeSet::new();
        for &(room, node) in &self.rooms {
            if !rooms.insert(room) {
                return Err(GatewayConfigError::DuplicateRoom(room));
            }
            if !nodes.insert(node) {
                return Err(GatewayConfigError::DuplicateNode(node));
            }
        }
        if rooms.iter().copied().ne(1..=self.rooms.len()) {
            return Err(GatewayConfigError::RoomNumbering);
        }
        if !(self.sample_period_s > 0.0) {
            return Err(GatewayConfigError::SamplePeriod);
        }
        Ok(())
    }

    pub fn stale_after(&self) -> Duration {
        Duration::from_secs_f64(3.0 * self.sample_period_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub room_id: usize,
    pub node_id: u16,
    pub reading: Option<EngineeringReading>,
    pub last_seq: Option<u16>,
    pub last_update: Option<Timestamp>,
    pub parent: Option<u16>,
    pub movement: bool,
    pub stale: bool,
    pub health: Option<HealthReport>,
    pub packets_received: u64,
    pub packets_dropped: u64,
}

impl RoomState {
    fn new(room_id: usize, node_id: u16) -> Self {
        RoomState {
            room_id,
            node_id,
            reading: None,
            last_seq: None,
            last_update: None,
            parent: None,
            movement: false,
            stale: true,
            health: None,
            packets_received: 0,
            packets_dropped: 0,
        }
    }

    /// Equality ignoring receive-time fields, for comparing runs that saw
    /// the same frames at different times.
    pub fn same_content(&self, other: &RoomState) -> bool {
        let strip = |s: &RoomState| RoomState { last_update: None, stale: false, ..s.clone() };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Fault(FrameFault),
    Duplicate { node: u16, seq: u16 },
    OutOfOrder { node: u16, seq: u16, last: u16 },
    UnknownNode(u16),
    Conversion { node: u16, error: ConvertError },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatewayEvent {
    ReadingUpdated { room: usize, node: u16, reading: EngineeringReading, movement: bool, at: Timestamp },
    HealthUpdated { room: usize, node: u16, report: HealthReport, at: Timestamp },
    FrameRejected { reason: RejectReason, at: Timestamp },
}

/// Shared read access to the room table.
#[derive(Debug, Clone)]
pub struct SnapshotHandle(Arc<RwLock<Vec<RoomState>>>);

impl SnapshotHandle {
    /// Point-in-time copy of every room; each room is replaced as a whole
    /// under the lock so no record is ever seen half-updated.
    pub fn snapshot(&self) -> Vec<RoomState> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub struct Gateway {
    config: GatewayConfig,
    constants: ConversionConstants,
    deframer: Deframer,
    rooms: Arc<RwLock<Vec<RoomState>>>,
    room_of_node: BTreeMap<u16, usize>,
    accel: Vec<VecDeque<f64>>,
    frames_decoded: u64,
    rejected: u64,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayConfigError> {
        config.validate()?;
        let mut pairs = config.rooms.clone();
        pairs.sort_unstable();
        let rooms = pairs.iter().map(|&(r, n)| RoomState::new(r, n)).collect::<Vec<_>>();
        let room_of_node = pairs.iter().map(|&(r, n)| (n, r)).collect();
        Ok(Gateway {
            accel: vec![VecDeque::new(); rooms.len()],
            rooms: Arc::new(RwLock::new(rooms)),
            room_of_node,
            config,
            constants: ConversionConstants::SHT11,
            deframer: Deframer::new(),
            frames_decoded: 0,
            rejected: 0,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn room_count(&self) -> usize {
        self.config.rooms.len()
    }

    pub fn snapshot(&self) -> Vec<RoomState> {
        self.handle().snapshot()
    }

    pub fn handle(&self) -> SnapshotHandle {
        SnapshotHandle(Arc::clone(&self.rooms))
    }

    pub fn frames_decoded(&self) -> u64 {
        self.frames_decoded
    }

    pub fn frames_rejected(&self) -> u64 {
        self.rejected
    }

    /// Feeds raw serial bytes received at `now`.
    pub fn ingest(&mut self, chunk: &[u8], now: Timestamp) -> Vec<GatewayEvent> {
        let mut events = Vec::new();
        for item in self.deframer.push(chunk) {
            let event = match item {
                Deframed::Frame(frame) => {
                    self.frames_decoded += 1;
                    self.apply(frame, now)
                }
                Deframed::Fault(fault) => GatewayEvent::FrameRejected { reason: RejectReason::Fault(fault), at: now },
            };
            if matches!(event, GatewayEvent::FrameRejected { .. }) {
                self.rejected += 1;
            }
            events.push(event);
        }
        events
    }

    fn apply(&mut self, frame: SensorFrame, now: Timestamp) -> GatewayEvent {
        let node = frame.mesh.origin_addr;
        let reject = |reason| GatewayEvent::FrameRejected { reason, at: now };
        let Some(&room) = self.room_of_node.get(&node) else {
            return reject(RejectReason::UnknownNode(node));
        };
        let idx = room - 1;
        let mut state = self.rooms.read().unwrap_or_else(|e| e.into_inner())[idx].clone();

        let seq = frame.mesh.seq;
        if let Some(last) = state.last_seq {
            let ahead = seq.wrapping_sub(last);
            if ahead == 0 || ahead >= SEQ_WINDOW {
                state.packets_dropped += 1;
                self.store(idx, state);
                return reject(if ahead == 0 {
                    RejectReason::Duplicate { node, seq }
                } else {
                    RejectReason::OutOfOrder { node, seq, last }
                });
            }
        }

        let event = match frame.body {
            FrameBody::Data { sensor, payload } => {
                let reading = match self.constants.reading(&payload) {
                    Ok(r) => r,
                    Err(error) => {
                        state.packets_dropped += 1;
                        self.store(idx, state);
                        return reject(RejectReason::Conversion { node, error });
                    }
                };
                let window = &mut self.accel[idx];
                let (ax, ay) = (accel_g_from_raw(payload.accel_x_raw), accel_g_from_raw(payload.accel_y_raw));
                window.push_back((ax * ax + ay * ay).sqrt());
                while window.len() > self.config.movement_window {
                    window.pop_front();
                }
                let samples: Vec<f64> = window.iter().copied().collect();
                let movement =
                    detect_movement(&samples, self.config.movement_window, self.config.movement_sigma_g);
                state.reading = Some(reading);
                state.parent = Some(sensor.parent);
                state.movement = movement;
                state.last_update = Some(now);
                state.stale = false;
                GatewayEvent::ReadingUpdated { room, node, reading, movement, at: now }
            }
            FrameBody::Health(report) => {
                state.health = Some(report);
                state.parent = Some(report.parent);
                GatewayEvent::HealthUpdated { room, node, report, at: now }
            }
        };
        state.last_seq = Some(seq);
        state.packets_received += 1;
        self.store(idx, state);
        event
    }

    fn store(&self, idx: usize, state: RoomState) {
        self.rooms.write().unwrap_or_else(|e| e.into_inner())[idx] = state;
    }

    /// Marks rooms whose last reading is older than three sample periods and
    /// returns those that were not already stale.
    pub fn detect_stale(&mut self, now: Timestamp) -> Vec<usize> {
        let limit = self.config.stale_after();
        let mut rooms = self.rooms.write().unwrap_or_else(|e| e.into_inner());
        let mut newly = Vec::new();
        for r in rooms.iter_mut() {
            let stale = match r.last_update {
                Some(t) => now.saturating_since(t) > limit,
                None => true,
            };
            if stale && !r.stale {
                newly.push(r.room_id);
            }
            r.stale = stale;
        }
        newly
    }
}

/// Shared-variable names published for a room.
pub mod vars {
    pub const FIELDS: [&str; 7] = ["temperature", "humidity", "light", "battery", "heat_on", "cool_on", "light_on"];

    pub fn name(room: usize, field: &str) -> String {
        format!("room{room}.{field}")
    }

    pub fn setpoint(room: usize) -> String {
        name(room, "setpoint")
    }

    pub fn light_threshold(room: usize) -> String {
        name(room, "light_threshold")
    }

    /// Parses `room<i>.<field>`.
    pub fn parse(name: &str) -> Option<(usize, &str)> {
        let rest = name.strip_prefix("room")?;
        let (idx, field) = rest.split_once('.')?;
        Some((idx.parse().ok()?, field))
    }
}

pub fn reading_vars(room: usize, reading: &EngineeringReading) -> [(String, f64); 4] {
    [
        (vars::name(room, "temperature"), reading.temperature_c),
        (vars::name(room, "humidity"), reading.humidity_pct),
        (vars::name(room, "light"), reading.light_lux),
        (vars::name(room, "battery"), reading.battery_v),
    ]
}

pub fn output_vars(room: usize, out: &ControlOutputs) -> [(String, f64); 3] {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    [
        (vars::name(room, "heat_on"), b(out.heat_on)),
        (vars::name(room, "cool_on"), b(out.cool_on)),
        (vars::name(room, "light_on"), b(out.light_on)),
    ]
}

/// One LVM row of temperature, humidity and light per room; rooms without a
/// reading contribute NaN.
pub fn lvm_values(rooms: &[RoomState]) -> Vec<f64> {
    rooms
        .iter()
        .flat_map(|r| match r.reading {
            Some(x) => [x.temperature_c, x.humidity_pct, x.light_lux],
            None => [f64::NAN; 3],
        })
        .collect()
}
