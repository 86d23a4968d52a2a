use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use super::wire::{self, Message, VarRecord};

fn wire_err(e: wire::WireError) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidInput, e)
}

/// Publishes variables to an engine, numbering each name's records from 1.
#[derive(Debug)]
pub struct Publisher {
    socket: UdpSocket,
    engine: SocketAddr,
    seqs: HashMap<String, u32>,
}

impl Publisher {
    pub fn connect(engine: SocketAddr) -> io::Result<Self> {
        let socket = UdpSocket::bind(("127.0.0.1", 0))?;
        Ok(Publisher { socket, engine, seqs: HashMap::new() })
    }

    pub fn publish(&mut self, name: &str, value: f64, timestamp_us: u64) -> io::Result<VarRecord> {
        let seq = self.seqs.entry(name.to_owned()).or_insert(0);
        *seq += 1;
        let rec = VarRecord::new(name, value, timestamp_us, *seq);
        self.socket.send_to(&wire::encode_publish(&rec).map_err(wire_err)?, self.engine)?;
        Ok(rec)
    }
}

/// Receives fan-out datagrams from an engine.
#[derive(Debug)]
pub struct Subscriber {
    socket: UdpSocket,
    subscriptions: Vec<(SocketAddr, String)>,
}

impl Subscriber {
    pub fn bind() -> io::Result<Self> {
        Ok(Subscriber { socket: UdpSocket::bind(("127.0.0.1", 0))?, subscriptions: Vec::new() })
    }

    pub fn connect(engine: SocketAddr, pattern: &str) -> io::Result<Self> {
        let mut s = Self::bind()?;
        s.subscribe(engine, pattern)?;
        Ok(s)
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn subscribe(&mut self, engine: SocketAddr, pattern: &str) -> io::Result<()> {
        let msg = wire::encode(&Message::Subscribe { pattern: pattern.to_owned() }).map_err(wire_err)?;
        self.socket.send_to(&msg, engine)?;
        self.subscriptions.push((engine, pattern.to_owned()));
        Ok(())
    }

    /// Refreshes every subscription; call at least every ten seconds.
    pub fn heartbeat(&self) -> io::Result<()> {
        for (engine, pattern) in &self.subscriptions {
            let msg = wire::encode(&Message::Heartbeat { pattern: pattern.clone() }).map_err(wire_err)?;
            self.socket.send_to(&msg, engine)?;
        }
        Ok(())
    }

    /// Next published record, or `None` on timeout. Datagrams that are not
    /// publishes are skipped.
    pub fn recv_timeout(&self, timeout: Duration) -> io::Result<Option<VarRecord>> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 512];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => {
                    if let Ok(Message::Publish(rec)) = wire::decode(&buf[..n]) {
                        return Ok(Some(rec));
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }

    /// Asks for the engine's current values and collects up to `expect` replies.
    pub fn request_snapshot(
        &self,
        engine: SocketAddr,
        pattern: &str,
        expect: usize,
        timeout: Duration,
    ) -> io::Result<Vec<VarRecord>> {
        let msg = wire::encode(&Message::SnapshotRequest { pattern: pattern.to_owned() }).map_err(wire_err)?;
        self.socket.send_to(&msg, engine)?;
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        while out.len() < expect {
            match self.recv_timeout(deadline.saturating_duration_since(Instant::now()))? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }
}
