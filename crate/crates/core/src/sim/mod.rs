//! Deterministic discrete-event simulator of the deployed mesh.
//!
//! Nodes sample their room's ground-truth environment on a fixed schedule,
//! encode MTS400 data frames (plus a health report every few packets) and
//! forward them hop by hop along the routing tree. Each hop is lost
//! independently with the configured probability. Frames reaching the base
//! station are serialized exactly as the USB base station would emit them.
//!
//! Time advances in milliseconds; the room plant and the energy ledgers are
//! integrated once per simulated second. All randomness comes from a ChaCha
//! generator seeded from the configuration, so a given seed and config always
//! yield the same byte stream.

mod config;
mod energy;
mod env;
mod topology;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    BaseSpec, ConfigError, LinkSpec, NodeSpec, OutdoorSpec, RoomSpec, SimConfig, ThermalConstants,
    MAX_SAMPLE_PERIOD_S, MIN_SAMPLE_PERIOD_S,
};
pub use energy::{average_current_ma, estimate_lifetime, iris_ma, EnergyLedger, LifetimeError, PowerMode};
pub use env::{env_step, RoomEnv};
pub use topology::{RouteError, Routes, Topology};

use crate::control::ControlOutputs;
use crate::convert::{accel_raw_from_g, ConversionConstants, EngineeringReading};
use crate::time::Timestamp;
use crate::wire::{encode_frame, FrameBody, HealthReport, SensorFrame, XMeshHeader, XSensorHeader, BASE_STATION_ADDR};

pub const XMESH_APP_ID: u8 = 0x33;
pub const MTS400_BOARD_ID: u8 = 0x85;
pub const DATA_PACKET_ID: u8 = 0x01;

/// Accelerometer jitter while a room is occupied, g.
const OCCUPIED_ACCEL_G: f64 = 0.3;
/// Accelerometer noise floor at rest, g.
const RESTING_ACCEL_G: f64 = 0.004;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Route(#[from] RouteError),
}

/// A frame that reached the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub at: Timestamp,
    pub bytes: Vec<u8>,
    pub frame: SensorFrame,
    /// Addresses the frame visited, from origin to base.
    pub path: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub id: u16,
    pub room: usize,
    pub parent: u16,
    pub power_mode: PowerMode,
    pub data_generated: u64,
    pub health_generated: u64,
    pub data_delivered: u64,
    pub health_delivered: u64,
    pub hops_lost: u64,
    pub energy: EnergyLedger,
    pub battery_v: f64,
    /// Lifetime from the average-current model.
    pub lifetime_h: f64,
}

#[derive(Debug, Clone)]
struct NodeRuntime {
    spec: NodeSpec,
    parent: u16,
    seq: u16,
    data_sent: u64,
    frames_sent: u32,
    last_data_seq: u16,
    ledger: EnergyLedger,
    stats: NodeStats,
}

#[derive(Debug, Clone)]
enum EventKind {
    Sample(usize),
    Arrive { frame: SensorFrame, at_node: u16, path: Vec<u16> },
}

#[derive(Debug, Clone)]
struct Event {
    at_ms: u64,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.order) == (other.at_ms, other.order)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at_ms, self.order).cmp(&(other.at_ms, other.order))
    }
}

pub struct Simulation {
    config: SimConfig,
    routes: Routes,
    nodes: Vec<NodeRuntime>,
    rooms: Vec<RoomEnv>,
    actuation: Vec<ControlOutputs>,
    rng: ChaCha8Rng,
    now_ms: u64,
    queue: BinaryHeap<Reverse<Event>>,
    next_order: u64,
    constants: ConversionConstants,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let routes = Topology::new(config.base.clone(), config.nodes.clone()).build_routes()?;
        let rooms = config
            .rooms
            .iter()
            .map(|spec| RoomEnv::new(spec.clone(), config.outdoor, config.thermal))
            .collect::<Vec<_>>();
        let nodes = config
            .nodes
            .iter()
            .map(|spec| {
                let parent = routes.parent_of[&spec.id];
                NodeRuntime {
                    spec: spec.clone(),
                    parent,
                    seq: 0,
                    data_sent: 0,
                    frames_sent: 0,
                    last_data_seq: 0,
                    ledger: EnergyLedger::default(),
                    stats: NodeStats {
                        id: spec.id,
                        room: spec.room,
                        parent,
                        power_mode: spec.power_mode,
                        data_generated: 0,
                        health_generated: 0,
                        data_delivered: 0,
                        health_delivered: 0,
                        hops_lost: 0,
                        energy: EnergyLedger::default(),
                        battery_v: 0.0,
                        lifetime_h: 0.0,
                    },
                }
            })
            .collect::<Vec<_>>();
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            actuation: vec![ControlOutputs::default(); rooms.len()],
            config,
            routes,
            nodes,
            rooms,
            now_ms: 0,
            queue: BinaryHeap::new(),
            next_order: 0,
            constants: ConversionConstants::SHT11,
        };
        for idx in 0..sim.nodes.len() {
            let first = match sim.nodes[idx].spec.power_mode {
                PowerMode::HP => 0,
                PowerMode::LP => secs_to_ms(sim.config.lp_startup_delay_s),
            };
            sim.schedule(first, EventKind::Sample(idx));
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn routes(&self) -> &Routes {
        &self.routes
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_millis(self.now_ms)
    }

    /// Absolute simulated time.
    pub fn now(&self) -> Timestamp {
        self.timestamp(self.now_ms)
    }

    pub fn start_time(&self) -> Timestamp {
        Timestamp::from_secs(self.config.start_unix_s)
    }

    fn timestamp(&self, ms: u64) -> Timestamp {
        Timestamp(self.config.start_unix_s * 1_000_000 + ms * 1_000)
    }

    /// Ground truth of a one-based room.
    pub fn room_env(&self, room: usize) -> &RoomEnv {
        &self.rooms[room - 1]
    }

    pub fn set_actuation(&mut self, room: usize, outputs: ControlOutputs) {
        self.actuation[room - 1] = outputs;
    }

    pub fn actuation(&self, room: usize) -> ControlOutputs {
        self.actuation[room - 1]
    }

    pub fn node_stats(&self) -> Vec<NodeStats> {
        self.nodes
            .iter()
            .map(|n| {
                let mut s = n.stats.clone();
                s.energy = n.ledger;
                s.battery_v = battery_voltage(&n.ledger, n.spec.battery_mah);
                s.lifetime_h = estimate_lifetime(
                    n.spec.power_mode,
                    n.spec.battery_mah,
                    n.spec.sample_period_s,
                    self.duty_cycle(n.spec.power_mode),
                )
                .unwrap_or(f64::NAN);
                s
            })
            .collect()
    }

    fn duty_cycle(&self, mode: PowerMode) -> f64 {
        match mode {
            PowerMode::HP => 1.0,
            PowerMode::LP => self.config.lp_duty_cycle,
        }
    }

    fn schedule(&mut self, at_ms: u64, kind: EventKind) {
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(Event { at_ms, order, kind }));
    }

    /// Runs for `dt` of simulated time and returns the frames that reached
    /// the base station, in arrival order.
    pub fn advance(&mut self, dt: Duration) -> Vec<Emission> {
        let end = self.now_ms + dt.as_millis() as u64;
        let mut out = Vec::new();
        while self.now_ms < end {
            let boundary = (self.now_ms / 1000 + 1) * 1000;
            let stop = boundary.min(end);
            while self.queue.peek().is_some_and(|Reverse(e)| e.at_ms < stop) {
                let Reverse(event) = self.queue.pop().expect("peeked");
                self.handle(event, &mut out);
            }
            self.now_ms = stop;
            if stop == boundary {
                self.tick_second();
            }
        }
        out
    }

    /// Convenience wrapper returning the concatenated serial stream.
    pub fn run_stream(&mut self, dt: Duration) -> Vec<u8> {
        self.advance(dt).into_iter().flat_map(|e| e.bytes).collect()
    }

    fn tick_second(&mut self) {
        for (room, env) in self.rooms.iter_mut().enumerate() {
            *env = env_step(env, self.actuation[room], 1.0);
        }
        let lp_duty = self.config.lp_duty_cycle;
        for n in &mut self.nodes {
            let duty = if n.spec.power_mode == PowerMode::LP { lp_duty } else { 1.0 };
            n.ledger.charge_idle(n.spec.power_mode, duty, 1.0);
        }
    }

    fn handle(&mut self, event: Event, out: &mut Vec<Emission>) {
        match event.kind {
            EventKind::Sample(idx) => self.sample(idx, event.at_ms),
            EventKind::Arrive { mut frame, at_node, mut path } => {
                path.push(at_node);
                if at_node == BASE_STATION_ADDR {
                    let bytes = encode_frame(&frame).expect("simulator builds valid frames");
                    let origin = frame.mesh.origin_addr;
                    if let Some(n) = self.nodes.iter_mut().find(|n| n.spec.id == origin) {
                        if frame.is_data() {
                            n.stats.data_delivered += 1;
                        } else {
                            n.stats.health_delivered += 1;
                        }
                    }
                    out.push(Emission { at: self.timestamp(event.at_ms), bytes, frame, path });
                } else {
                    // Relay: this node becomes the last-hop source.
                    let idx = self.node_index(at_node);
                    frame.mesh.source_addr = at_node;
                    frame.tos.dest_addr = self.nodes[idx].parent;
                    self.transmit(idx, frame, path, event.at_ms);
                }
            }
        }
    }

    fn node_index(&self, id: u16) -> usize {
        self.nodes.iter().position(|n| n.spec.id == id).expect("routing only targets known nodes")
    }

    fn transmit(&mut self, idx: usize, frame: SensorFrame, path: Vec<u16>, at_ms: u64) {
        let node = &mut self.nodes[idx];
        node.ledger.charge_tx(frame.wire_len() + 2);
        let next_hop = node.parent;
        let p = self.config.link.loss_probability;
        let lost = p > 0.0 && self.rng.random_bool(p);
        if lost {
            // The origin is charged for its frames lost anywhere on the path.
            let origin = frame.mesh.origin_addr;
            let oidx = self.node_index(origin);
            self.nodes[oidx].stats.hops_lost += 1;
            return;
        }
        let latency = self.config.link.hop_latency_ms;
        self.schedule(at_ms + latency, EventKind::Arrive { frame, at_node: next_hop, path });
    }

    fn sample(&mut self, idx: usize, at_ms: u64) {
        let spec = self.nodes[idx].spec.clone();
        let period_ms = secs_to_ms(spec.sample_period_s);
        self.schedule(at_ms + period_ms, EventKind::Sample(idx));
        if spec.silent_after_s.is_some_and(|s| at_ms > secs_to_ms(s)) {
            return;
        }

        let env = &self.rooms[spec.room - 1];
        let battery_v = battery_voltage(&self.nodes[idx].ledger, spec.battery_mah);
        let reading = EngineeringReading {
            temperature_c: env.temperature_c,
            humidity_pct: env.humidity_pct,
            light_lux: env.light_lux,
            battery_v,
            pressure_mbar: env.spec.pressure_mbar,
        };
        let occupied = env.occupancy;
        let mut payload =
            self.constants.raw_from_engineering(&reading).expect("simulated environment stays within sensor range");
        let amp = if occupied { OCCUPIED_ACCEL_G } else { RESTING_ACCEL_G };
        let ax = self.rng.random_range(-amp..=amp);
        let ay = self.rng.random_range(-amp..=amp);
        payload.accel_x_raw = accel_raw_from_g(ax).expect("accelerometer jitter within range");
        payload.accel_y_raw = accel_raw_from_g(ay).expect("accelerometer jitter within range");

        let node = &mut self.nodes[idx];
        node.seq = node.seq.wrapping_add(1);
        node.last_data_seq = node.seq;
        node.data_sent += 1;
        node.frames_sent += 1;
        node.stats.data_generated += 1;
        let mesh = XMeshHeader { source_addr: spec.id, origin_addr: spec.id, seq: node.seq, app_id: XMESH_APP_ID };
        let sensor = XSensorHeader { board_id: MTS400_BOARD_ID, packet_id: DATA_PACKET_ID, parent: node.parent };
        let data = SensorFrame::data(node.parent, mesh, sensor, payload);
        let send_health = node.data_sent.is_multiple_of(self.config.health_every as u64);
        self.transmit(idx, data, vec![spec.id], at_ms);

        if send_health {
            let node = &mut self.nodes[idx];
            node.seq = node.seq.wrapping_add(1);
            node.frames_sent += 1;
            node.stats.health_generated += 1;
            let report = HealthReport {
                node_id: spec.id,
                parent: node.parent,
                battery_mv: (battery_v * 1000.0).round() as u16,
                packets_sent: node.frames_sent,
                link_seq: node.last_data_seq,
            };
            let mesh = XMeshHeader { source_addr: spec.id, origin_addr: spec.id, seq: node.seq, app_id: XMESH_APP_ID };
            let health = SensorFrame::health(node.parent, mesh, report);
            self.transmit(idx, health, vec![spec.id], at_ms);
        }
    }
}

/// Terminal voltage falls linearly from 3.0 V to 2.2 V as the charge is used.
fn battery_voltage(ledger: &EnergyLedger, capacity_mah: f64) -> f64 {
    let used = (ledger.total_mah() / capacity_mah).clamp(0.0, 1.0);
    3.0 - 0.8 * used
}

fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

/// Convenience accessor for the body of an emitted frame.
pub fn data_payload(frame: &SensorFrame) -> Option<&crate::wire::Mts400Payload> {
    match &frame.body {
        FrameBody::Data { payload, .. } => Some(payload),
        FrameBody::Health(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{decode_frame, Deframed, Deframer};

    fn star_config(period: f64) -> SimConfig {
        let mut c = SimConfig::default_house();
        c.base.radio_range_m = 100.0;
        for n in &mut c.nodes {
            n.radio_range_m = 100.0;
            n.sample_period_s = period;
        }
        c
    }

    fn chain_config() -> SimConfig {
        let mut c = SimConfig::default_house();
        c.base = BaseSpec { position: [0.0, 0.0], radio_range_m: 10.0 };
        c.nodes = vec![NodeSpec::new(102, 2, [8.0, 0.0]), NodeSpec::new(103, 3, [16.0, 0.0])];
        for n in &mut c.nodes {
            n.radio_range_m = 10.0;
        }
        c
    }

    #[test]
    fn lossless_star_delivers_every_sample() {
        let mut sim = Simulation::new(star_config(10.0)).unwrap();
        let out = sim.advance(Duration::from_secs(60));
        let data: Vec<_> = out.iter().filter(|e| e.frame.is_data()).collect();
        assert_eq!(data.len(), 18);
        for id in [101, 102, 103] {
            assert_eq!(data.iter().filter(|e| e.frame.mesh.origin_addr == id).count(), 6);
        }
        assert!(sim.routes().parent_of.values().all(|&p| p == 0));
    }

    #[test]
    fn chain_rewrites_source() {
        let mut sim = Simulation::new(chain_config()).unwrap();
        let out = sim.advance(Duration::from_secs(100));
        let from_103: Vec<_> = out.iter().filter(|e| e.frame.mesh.origin_addr == 103).collect();
        // Samples at 0, 10, ..., 90 s plus the health report after the tenth.
        assert_eq!(from_103.iter().filter(|e| e.frame.is_data()).count(), 10);
        assert_eq!(from_103.len(), 11);
        for e in from_103 {
            assert_eq!(e.frame.mesh.source_addr, 102);
            assert_eq!(e.frame.tos.dest_addr, 0);
            assert_eq!(e.path, vec![103, 102, 0]);
        }
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut c = star_config(10.0);
        c.link.loss_probability = 1.0;
        let mut sim = Simulation::new(c).unwrap();
        assert!(sim.advance(Duration::from_secs(120)).is_empty());
    }

    #[test]
    fn health_follows_every_tenth_data_packet() {
        let mut sim = Simulation::new(star_config(10.0)).unwrap();
        let out = sim.advance(Duration::from_secs(200));
        let from_101: Vec<_> = out.iter().filter(|e| e.frame.mesh.origin_addr == 101).collect();
        // 20 data frames, health after the 10th and the 20th.
        assert_eq!(from_101.len(), 22);
        assert!(!from_101[10].frame.is_data());
        assert_eq!(from_101[10].frame.mesh.seq, from_101[9].frame.mesh.seq + 1);
        if let FrameBody::Health(h) = from_101[10].frame.body {
            assert_eq!(h.node_id, 101);
            assert_eq!(h.packets_sent, 11);
            assert_eq!(h.link_seq, from_101[9].frame.mesh.seq);
        }
    }

    #[test]
    fn emitted_bytes_decode_to_emitted_frames() {
        let mut sim = Simulation::new(SimConfig::default_house()).unwrap();
        let out = sim.advance(Duration::from_secs(300));
        assert!(!out.is_empty());
        let mut d = Deframer::new();
        let stream: Vec<u8> = out.iter().flat_map(|e| e.bytes.clone()).collect();
        let decoded: Vec<_> = d
            .push(&stream)
            .into_iter()
            .map(|x| match x {
                Deframed::Frame(f) => f,
                Deframed::Fault(f) => panic!("{f}"),
            })
            .collect();
        assert_eq!(decoded, out.iter().map(|e| e.frame).collect::<Vec<_>>());
        assert_eq!(decode_frame(&out[0].bytes).unwrap(), out[0].frame);
    }

    #[test]
    fn low_power_nodes_wait_for_startup() {
        let mut c = star_config(10.0);
        for n in &mut c.nodes {
            n.power_mode = PowerMode::LP;
        }
        let mut sim = Simulation::new(c).unwrap();
        assert!(sim.advance(Duration::from_secs(30)).is_empty());
        assert_eq!(sim.advance(Duration::from_secs(1)).len(), 3);
    }

    #[test]
    fn silent_node_stops_after_deadline() {
        let mut c = star_config(10.0);
        c.nodes[0].silent_after_s = Some(100.0);
        let mut sim = Simulation::new(c).unwrap();
        let out = sim.advance(Duration::from_secs(200));
        let last = out.iter().filter(|e| e.frame.mesh.origin_addr == 101).map(|e| e.at).max().unwrap();
        assert_eq!(last, sim.start_time() + Duration::from_millis(100_005));
    }

    #[test]
    fn energy_is_monotone_and_matches_model() {
        let mut sim = Simulation::new(SimConfig::default_house()).unwrap();
        let mut prev = sim.node_stats();
        for _ in 0..10 {
            sim.advance(Duration::from_secs(360));
            let cur = sim.node_stats();
            for (a, b) in prev.iter().zip(&cur) {
                assert!(b.energy.mcu_full >= a.energy.mcu_full);
                assert!(b.energy.radio_rx >= a.energy.radio_rx);
                assert!(b.energy.radio_tx >= a.energy.radio_tx);
                assert!(b.energy.total_mah() > a.energy.total_mah());
            }
            prev = cur;
        }
        // One hour in HP mode draws 24 mAh plus a little transmit charge.
        for s in &prev {
            assert!((s.energy.total_mah() - 24.0).abs() < 0.01, "{}", s.energy.total_mah());
            assert!((s.lifetime_h - 2000.0 / 24.0).abs() < 1e-9);
        }
    }

    #[test]
    fn partitioned_config_is_rejected() {
        let mut c = SimConfig::default_house();
        c.nodes[2].position = [500.0, 500.0];
        assert!(matches!(Simulation::new(c), Err(SimError::Route(RouteError::PartitionedNetwork(ids))) if ids == vec![103]));
    }
}
