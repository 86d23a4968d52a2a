//! Latest-value cache and subscription table, independent of any socket.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use super::wire::{self, pattern_matches, Message, VarRecord, MAX_NAME_LEN};
use crate::time::Timestamp;

pub const HEARTBEAT_INTERVAL: Duration = Duration::from_secs(10);
/// Subscriptions are dropped after three missed heartbeats.
pub const EVICT_AFTER: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PublishError {
    #[error("variable name of {0} bytes exceeds 255")]
    NameTooLong(usize),
    #[error("empty variable name")]
    EmptyName,
    #[error("stale seq {seq} for {name} (cached {cached})")]
    StaleSeq { name: String, seq: u32, cached: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub endpoint: SocketAddr,
    pub pattern: String,
    pub last_heartbeat: Timestamp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    pub accepted: u64,
    pub stale_dropped: u64,
    pub malformed: u64,
    pub evicted: u64,
    pub datagrams_out: u64,
}

/// A datagram to send.
pub type Outgoing = (SocketAddr, Vec<u8>);

type Listener = Box<dyn FnMut(&VarRecord) + Send>;

#[derive(Default)]
pub struct Engine {
    vars: BTreeMap<String, VarRecord>,
    subs: Vec<Subscription>,
    listeners: Vec<Listener>,
    stats: EngineStats,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("vars", &self.vars.len())
            .field("subs", &self.subs)
            .field("stats", &self.stats)
            .finish()
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subs
    }

    pub fn get(&self, name: &str) -> Option<&VarRecord> {
        self.vars.get(name)
    }

    /// Called with every accepted record, in acceptance order.
    pub fn add_listener(&mut self, f: impl FnMut(&VarRecord) + Send + 'static) {
        self.listeners.push(Box::new(f));
    }

    /// Accepts `rec` if its seq is newer than the cached one and returns the
    /// fan-out datagrams.
    pub fn publish(&mut self, rec: VarRecord) -> Result<Vec<Outgoing>, PublishError> {
        if rec.name.len() > MAX_NAME_LEN {
            return Err(PublishError::NameTooLong(rec.name.len()));
        }
        if rec.name.is_empty() {
            return Err(PublishError::EmptyName);
        }
        if let Some(cached) = self.vars.get(&rec.name) {
            if rec.seq <= cached.seq {
                self.stats.stale_dropped += 1;
                return Err(PublishError::StaleSeq { name: rec.name, seq: rec.seq, cached: cached.seq });
            }
        }
        let bytes = wire::encode_publish(&rec).expect("name checked above");
        let out: Vec<Outgoing> = self
            .subs
            .iter()
            .filter(|s| pattern_matches(&s.pattern, &rec.name))
            .map(|s| (s.endpoint, bytes.clone()))
            .collect();
        self.stats.accepted += 1;
        self.stats.datagrams_out += out.len() as u64;
        for l in &mut self.listeners {
            l(&rec);
        }
        self.vars.insert(rec.name.clone(), rec);
        Ok(out)
    }

    /// Publishes `value` under the next seq for `name`.
    pub fn publish_next(
        &mut self,
        name: &str,
        value: f64,
        timestamp_us: u64,
    ) -> Result<(VarRecord, Vec<Outgoing>), PublishError> {
        let seq = self.vars.get(name).map_or(1, |r| r.seq.wrapping_add(1));
        let rec = VarRecord::new(name, value, timestamp_us, seq);
        let out = self.publish(rec.clone())?;
        Ok((rec, out))
    }

    pub fn subscribe(&mut self, endpoint: SocketAddr, pattern: &str, now: Timestamp) {
        match self.subs.iter_mut().find(|s| s.endpoint == endpoint && s.pattern == pattern) {
            Some(s) => s.last_heartbeat = now,
            None => self.subs.push(Subscription { endpoint, pattern: pattern.to_owned(), last_heartbeat: now }),
        }
    }

    /// Refreshes the endpoint's subscription to `pattern`, or all of its
    /// subscriptions when the pattern is empty.
    pub fn heartbeat(&mut self, endpoint: SocketAddr, pattern: &str, now: Timestamp) {
        for s in self.subs.iter_mut().filter(|s| s.endpoint == endpoint) {
            if pattern.is_empty() || s.pattern == pattern {
                s.last_heartbeat = now;
            }
        }
    }

    /// Drops subscriptions whose last heartbeat is older than [`EVICT_AFTER`].
    pub fn evict(&mut self, now: Timestamp) -> usize {
        let before = self.subs.len();
        self.subs.retain(|s| now.saturating_since(s.last_heartbeat) <= EVICT_AFTER);
        let n = before - self.subs.len();
        self.stats.evicted += n as u64;
        n
    }

    pub fn snapshot_vars(&self, pattern: &str) -> Vec<VarRecord> {
        self.vars.values().filter(|r| pattern_matches(pattern, &r.name)).cloned().collect()
    }

    /// Decodes and dispatches one datagram. Malformed input is counted and
    /// otherwise ignored, as are stale publishes.
    pub fn handle_datagram(&mut self, bytes: &[u8], src: SocketAddr, now: Timestamp) -> Vec<Outgoing> {
        let msg = match wire::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("malformed datagram from {src}: {e}");
                self.stats.malformed += 1;
                return Vec::new();
            }
        };
        match msg {
            Message::Publish(rec) => self.publish(rec).unwrap_or_default(),
            Message::Subscribe { pattern } => {
                self.subscribe(src, &pattern, now);
                Vec::new()
            }
            Message::SnapshotRequest { pattern } => {
                let pattern = if pattern.is_empty() { "*" } else { &pattern };
                let out: Vec<Outgoing> = self
                    .snapshot_vars(pattern)
                    .iter()
                    .map(|r| (src, wire::encode_publish(r).expect("cached names are valid")))
                    .collect();
                self.stats.datagrams_out += out.len() as u64;
                out
            }
            Message::Heartbeat { pattern } => {
                self.heartbeat(src, &pattern, now);
                Vec::new()
            }
        }
    }
}
