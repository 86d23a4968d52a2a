//! Closed-loop runs and log replay.
//!
//! A [`Station`] is the base-station PC: gateway, one controller per room,
//! optional shared-variable publishing and LVM logging. [`ClosedLoop`] drives
//! a station from the simulator and feeds its actuation back into the rooms.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlConfig, ControlOutputs, Mode, RoomController};
use crate::gateway::lvm::{room_channels, LogQueue, LvmFile};
use crate::gateway::{
    lvm_values, output_vars, reading_vars, vars, Gateway, GatewayConfig, GatewayConfigError, GatewayEvent,
    RejectReason, RoomState,
};
use crate::sharedvar::EngineHandle;
use crate::sim::{NodeStats, SimConfig, SimError, Simulation};
use crate::time::{Clock, Timestamp};

/// Temperatures counted as "in band" for the closed-loop summary.
pub const COMFORT_BAND_C: (f64, f64) = (20.5, 23.5);
/// Samples before this much simulated time are excluded from the band statistic.
pub const WARMUP: Duration = Duration::from_secs(3600);
/// Serial line rate of the USB base station, used to timestamp replayed bytes.
pub const SERIAL_BAUD: u32 = 57_600;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gateway(#[from] GatewayConfigError),
    #[error("invalid control configuration")]
    Control,
    #[error("invalid config file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Contents of the JSON file passed with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub control: ControlConfig,
    /// Size at which the LVM log rotates; unlimited when absent.
    pub lvm_max_bytes: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { sim: SimConfig::default_house(), control: ControlConfig::default(), lvm_max_bytes: None }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, LoopError> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.sim.validate().map_err(SimError::from)?;
        if !config.control.is_valid() {
            return Err(LoopError::Control);
        }
        Ok(config)
    }

    /// Gateway settings matching the simulated deployment.
    pub fn gateway_config(&self) -> GatewayConfig {
        let mut rooms: Vec<(usize, u16)> = self.sim.nodes.iter().map(|n| (n.room, n.id)).collect();
        rooms.sort_unstable();
        let period = self.sim.nodes.iter().map(|n| n.sample_period_s).fold(0.0, f64::max);
        GatewayConfig {
            rooms,
            sample_period_s: if period > 0.0 { period } else { 10.0 },
            movement_window: self.control.movement_window,
            movement_sigma_g: self.control.movement_sigma_g,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoomTally {
    pub room: usize,
    pub node: u16,
    pub evaluations: u64,
    pub mode_switches: u64,
    pub samples_after_warmup: u64,
    pub in_band_after_warmup: u64,
}

pub struct Station {
    gateway: Gateway,
    controllers: Vec<RoomController>,
    outputs: Vec<ControlOutputs>,
    tallies: Vec<RoomTally>,
    engine: Option<EngineHandle>,
    lvm: Option<LogQueue>,
    log_period: Duration,
    next_log: Option<Timestamp>,
    warmup_end: Option<Timestamp>,
    rejects: BTreeMap<String, u64>,
}

impl Station {
    pub fn new(gateway: GatewayConfig, control: ControlConfig) -> Result<Self, LoopError> {
        if !control.is_valid() {
            return Err(LoopError::Control);
        }
        let log_period = gateway.stale_after() / 3;
        let tallies = gateway
            .rooms
            .iter()
            .map(|&(room, node)| RoomTally { room, node, ..Default::default() })
            .collect::<Vec<_>>();
        let mut tallies = tallies;
        tallies.sort_by_key(|t| t.room);
        let n = tallies.len();
        Ok(Station {
            gateway: Gateway::new(gateway)?,
            controllers: vec![RoomController::new(control); n],
            outputs: vec![ControlOutputs::default(); n],
            tallies,
            engine: None,
            lvm: None,
            log_period,
            next_log: None,
            warmup_end: None,
            rejects: BTreeMap::new(),
        })
    }

    pub fn with_engine(mut self, engine: EngineHandle) -> Self {
        self.engine = Some(engine);
        self
    }

    /// Logs one row per sample period starting at `start`.
    pub fn with_lvm(mut self, path: &Path, start: Timestamp, max_bytes: Option<u64>) -> io::Result<Self> {
        let file = LvmFile::create(path, start, room_channels(self.gateway.room_count()), max_bytes)?;
        self.lvm = Some(LogQueue::spawn(file));
        self.next_log = Some(start);
        Ok(self)
    }

    /// Only readings at or after `at` count toward the comfort-band tally.
    pub fn count_band_from(mut self, at: Timestamp) -> Self {
        self.warmup_end = Some(at);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn snapshot(&self) -> Vec<RoomState> {
        self.gateway.snapshot()
    }

    pub fn outputs(&self, room: usize) -> ControlOutputs {
        self.outputs[room - 1]
    }

    pub fn controller(&self, room: usize) -> &RoomController {
        &self.controllers[room - 1]
    }

    pub fn tallies(&self) -> &[RoomTally] {
        &self.tallies
    }

    pub fn rejects(&self) -> &BTreeMap<String, u64> {
        &self.rejects
    }

    /// Pulls runtime-writable settings from the engine into the controller.
    fn refresh_settings(&mut self, room: usize) {
        let Some(engine) = &self.engine else { return };
        let c = &mut self.controllers[room - 1].config;
        if let Some(v) = engine.value(&vars::setpoint(room)).filter(|v| v.is_finite()) {
            c.setpoint_c = v;
        }
        if let Some(v) = engine.value(&vars::light_threshold(room)).filter(|v| v.is_finite() && *v >= 0.0) {
            c.light_threshold_lux = v;
        }
    }

    fn publish(&self, records: impl IntoIterator<Item = (String, f64)>, at: Timestamp) {
        if let Some(engine) = &self.engine {
            for (name, value) in records {
                if let Err(e) = engine.publish_value_at(&name, value, at.as_micros()) {
                    log::warn!("publish {name} failed: {e}");
                }
            }
        }
    }

    /// Feeds serial bytes received at `at`, evaluating control for every new
    /// reading.
    pub fn ingest(&mut self, bytes: &[u8], at: Timestamp) -> Vec<GatewayEvent> {
        let events = self.gateway.ingest(bytes, at);
        for ev in &events {
            match ev {
                GatewayEvent::ReadingUpdated { room, reading, movement, .. } => {
                    let room = *room;
                    self.refresh_settings(room);
                    let ctl = &mut self.controllers[room - 1];
                    let before = ctl.mode_switches;
                    let out = ctl.evaluate(reading.temperature_c, reading.light_lux, *movement);
                    let tally = &mut self.tallies[room - 1];
                    tally.evaluations += 1;
                    tally.mode_switches += ctl.mode_switches - before;
                    if self.warmup_end.is_some_and(|w| at >= w) {
                        tally.samples_after_warmup += 1;
                        let (lo, hi) = COMFORT_BAND_C;
                        if (lo..=hi).contains(&reading.temperature_c) {
                            tally.in_band_after_warmup += 1;
                        }
                    }
                    self.outputs[room - 1] = out;
                    self.publish(reading_vars(room, reading), at);
                    self.publish(output_vars(room, &out), at);
                }
                GatewayEvent::HealthUpdated { .. } => {}
                GatewayEvent::FrameRejected { reason, .. } => {
                    log::debug!("frame rejected: {reason:?}");
                    *self.rejects.entry(reject_kind(reason).to_string()).or_default() += 1;
                }
            }
        }
        events
    }

    /// Staleness and logging housekeeping; call regularly with the current time.
    pub fn tick(&mut self, now: Timestamp) {
        for room in self.gateway.detect_stale(now) {
            log::warn!("room {room} is stale");
            // Without fresh readings the actuators are switched off.
            let ctl = &mut self.controllers[room - 1];
            if ctl.state.mode != Mode::Idle {
                ctl.mode_switches += 1;
                self.tallies[room - 1].mode_switches += 1;
            }
            ctl.state = Default::default();
            self.outputs[room - 1] = ControlOutputs::default();
            self.publish(output_vars(room, &ControlOutputs::default()), now);
        }
        if let (Some(lvm), Some(next)) = (&self.lvm, self.next_log.as_mut()) {
            if now >= *next {
                let values = lvm_values(&self.gateway.snapshot());
                while now >= *next {
                    lvm.append(*next, values.clone());
                    *next = *next + self.log_period;
                }
            }
        }
    }

    /// Flushes and closes the log.
    pub fn finish(&mut self) -> io::Result<()> {
        match self.lvm.take() {
            Some(q) => q.finish(),
            None => Ok(()),
        }
    }
}

fn reject_kind(reason: &RejectReason) -> &'static str {
    use crate::wire::FrameFault;
    match reason {
        RejectReason::Fault(FrameFault::Garbage { .. }) => "garbage",
        RejectReason::Fault(FrameFault::Rejected { .. }) => "decode",
        RejectReason::Fault(FrameFault::Overrun { .. }) => "overrun",
        RejectReason::Duplicate { .. } => "duplicate",
        RejectReason::OutOfOrder { .. } => "out_of_order",
        RejectReason::UnknownNode(_) => "unknown_node",
        RejectReason::Conversion { .. } => "conversion",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub data_generated: u64,
    pub health_generated: u64,
    pub data_delivered: u64,
    pub health_delivered: u64,
    pub hops_lost: u64,
    pub bytes_emitted: u64,
    pub gateway_decoded: u64,
    pub gateway_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSummary {
    pub room: usize,
    pub node: u16,
    pub evaluations: u64,
    pub mode_switches: u64,
    pub heating_s: u64,
    pub cooling_s: u64,
    pub light_s: u64,
    pub samples_after_warmup: u64,
    pub in_band_fraction: f64,
    pub final_temp_c: f64,
    pub final_mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration_s: f64,
    pub frames: FrameCounts,
    /// Simulated seconds in which some room had heating and cooling on together.
    pub co_activations: u64,
    pub rooms: Vec<RoomSummary>,
    pub nodes: Vec<NodeStats>,
    pub energy_total_mah: f64,
    pub rejects: BTreeMap<String, u64>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

pub struct ClosedLoop {
    sim: Simulation,
    station: Station,
    stream: Option<Box<dyn Write + Send>>,
    bytes_emitted: u64,
    co_activations: u64,
    on_seconds: Vec<[u64; 3]>,
}

impl ClosedLoop {
    pub fn new(config: &RunConfig) -> Result<Self, LoopError> {
        let sim = Simulation::new(config.sim.clone())?;
        let station = Station::new(config.gateway_config(), config.control)?
            .count_band_from(sim.start_time() + WARMUP);
        let rooms = config.sim.rooms.len();
        Ok(ClosedLoop { sim, station, stream: None, bytes_emitted: 0, co_activations: 0, on_seconds: vec![[0; 3]; rooms] })
    }

    pub fn with_engine(mut self, engine: EngineHandle) -> Self {
        self.station = self.station.with_engine(engine);
        self
    }

    pub fn with_lvm(mut self, path: &Path, max_bytes: Option<u64>) -> io::Result<Self> {
        let start = self.sim.start_time();
        self.station = self.station.with_lvm(path, start, max_bytes)?;
        Ok(self)
    }

    /// Copies every byte the base station emits to `out`.
    pub fn with_stream(mut self, out: Box<dyn Write + Send>) -> Self {
        self.stream = Some(out);
        self
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn station(&self) -> &Station {
        &self.station
    }

    /// Advances one simulated second.
    pub fn step(&mut self) -> io::Result<()> {
        for e in self.sim.advance(Duration::from_secs(1)) {
            if let Some(s) = self.stream.as_mut() {
                s.write_all(&e.bytes)?;
            }
            self.bytes_emitted += e.bytes.len() as u64;
            self.station.ingest(&e.bytes, e.at);
            if let Some(room) = self.station.gateway().config().rooms.iter().find(|p| p.1 == e.frame.mesh.origin_addr) {
                self.sim.set_actuation(room.0, self.station.outputs(room.0));
            }
        }
        self.station.tick(self.sim.now());
        for room in 1..=self.on_seconds.len() {
            // Stale rooms may have been switched off by the tick.
            let out = self.station.outputs(room);
            self.sim.set_actuation(room, out);
            let acc = &mut self.on_seconds[room - 1];
            acc[0] += out.heat_on as u64;
            acc[1] += out.cool_on as u64;
            acc[2] += out.light_on as u64;
            if out.heat_on && out.cool_on {
                self.co_activations += 1;
            }
        }
        Ok(())
    }

    /// Runs for `duration` of simulated time. `speed` is the ratio of
    /// simulated to wall-clock time; 0 runs unpaced.
    pub fn run(self, duration: Duration, speed: f64) -> Result<RunSummary, LoopError> {
        self.run_until(duration, speed, &AtomicBool::new(false))
    }

    /// Like [`run`](Self::run) but returns early, with a summary of the
    /// time simulated so far, once `stop` is set.
    pub fn run_until(mut self, duration: Duration, speed: f64, stop: &AtomicBool) -> Result<RunSummary, LoopError> {
        let wall_start = Instant::now();
        let secs = duration.as_secs();
        for i in 1..=secs {
            if stop.load(Ordering::Relaxed) {
                log::info!("stopping after {} simulated seconds", i - 1);
                break;
            }
            self.step()?;
            if speed > 0.0 {
                let due = Duration::from_secs_f64(i as f64 / speed);
                if let Some(wait) = due.checked_sub(wall_start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        self.finish()
    }

    pub fn finish(mut self) -> Result<RunSummary, LoopError> {
        if let Some(s) = self.stream.as_mut() {
            s.flush()?;
        }
        self.station.finish()?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        let nodes = self.sim.node_stats();
        let sum = |f: fn(&NodeStats) -> u64| nodes.iter().map(f).sum::<u64>();
        let frames = FrameCounts {
            data_generated: sum(|n| n.data_generated),
            health_generated: sum(|n| n.health_generated),
            data_delivered: sum(|n| n.data_delivered),
            health_delivered: sum(|n| n.health_delivered),
            hops_lost: sum(|n| n.hops_lost),
            bytes_emitted: self.bytes_emitted,
            gateway_decoded: self.station.gateway().frames_decoded(),
            gateway_rejected: self.station.gateway().frames_rejected(),
        };
        let rooms = self
            .station
            .tallies()
            .iter()
            .map(|t| {
                let [heating_s, cooling_s, light_s] = self.on_seconds[t.room - 1];
                RoomSummary {
                    room: t.room,
                    node: t.node,
                    evaluations: t.evaluations,
                    mode_switches: t.mode_switches,
                    heating_s,
                    cooling_s,
                    light_s,
                    samples_after_warmup: t.samples_after_warmup,
                    in_band_fraction: if t.samples_after_warmup == 0 {
                        0.0
                    } else {
                        t.in_band_after_warmup as f64 / t.samples_after_warmup as f64
                    },
                    final_temp_c: self.sim.room_env(t.room).temperature_c,
                    final_mode: self.station.controller(t.room).state.mode,
                }
            })
            .collect();
        RunSummary {
            seed: self.sim.config().seed,
            duration_s: self.sim.elapsed().as_secs_f64(),
            frames,
            co_activations: self.co_activations,
            rooms,
            energy_total_mah: nodes.iter().map(|n| n.energy.total_mah()).sum(),
            nodes,
            rejects: self.station.rejects().clone(),
        }
    }
}

/// How replayed bytes are timestamped and paced.
#[derive(Clone)]
pub struct ReplayOptions {
    /// Time of the first byte.
    pub start: Timestamp,
    /// Multiple of the serial line rate to replay at; 0 is unpaced.
    pub speed: f64,
    pub chunk: usize,
    /// Live sources are stamped with this clock instead of the line rate and
    /// never paced. Read timeouts on such sources just trigger housekeeping.
    pub clock: Option<Arc<dyn Clock>>,
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { start: Timestamp::ZERO, speed: 0.0, chunk: 4096, clock: None, stop: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub bytes: u64,
    pub frames_decoded: u64,
    pub readings: u64,
    pub health_reports: u64,
    pub rejected: u64,
    pub rejects: BTreeMap<String, u64>,
}

/// Feeds a recorded byte stream through `station`. Byte `i` is stamped
/// `start + i` character times at the serial line rate.
pub fn replay(mut input: impl Read, station: &mut Station, opts: ReplayOptions) -> io::Result<ReplayStats> {
    let byte_us = 10.0 * 1e6 / SERIAL_BAUD as f64;
    let wall_start = Instant::now();
    let mut buf = vec![0u8; opts.chunk.max(1)];
    let mut stats = ReplayStats {
        bytes: 0,
        frames_decoded: 0,
        readings: 0,
        health_reports: 0,
        rejected: 0,
        rejects: BTreeMap::new(),
    };
    loop {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if let Some(clock) = &opts.clock {
                    station.tick(clock.now());
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        stats.bytes += n as u64;
        let at = match &opts.clock {
            Some(clock) => clock.now(),
            None => Timestamp(opts.start.0 + (stats.bytes as f64 * byte_us) as u64),
        };
        if opts.speed > 0.0 && opts.clock.is_none() {
            let due = Duration::from_secs_f64(stats.bytes as f64 * byte_us / 1e6 / opts.speed);
            if let Some(wait) = due.checked_sub(wall_start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        for ev in station.ingest(&buf[..n], at) {
            match ev {
                GatewayEvent::ReadingUpdated { .. } => stats.readings += 1,
                GatewayEvent::HealthUpdated { .. } => stats.health_reports += 1,
                GatewayEvent::FrameRejected { .. } => stats.rejected += 1,
            }
        }
        station.tick(at);
    }
    stats.frames_decoded = station.gateway().frames_decoded();
    stats.rejects = station.rejects().clone();
    Ok(stats)
}

/// Compares two room snapshots ignoring receive times.
pub fn same_rooms(a: &[RoomState], b: &[RoomState]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_content(y))
}
