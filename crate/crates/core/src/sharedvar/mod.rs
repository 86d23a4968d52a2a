//! UDP shared-variable engine.
//!
//! [`Engine`] is the socket-free cache and subscription table. [`EngineHandle`]
//! makes it shareable between threads and sends fan-out datagrams, and
//! [`EngineServer`] runs the UDP receive loop.

mod client;
mod engine;
pub mod wire;

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::thread::JoinHandle;
use std::time::Duration;

pub use client::{Publisher, Subscriber};
pub use engine::{Engine, EngineStats, Outgoing, PublishError, Subscription, EVICT_AFTER, HEARTBEAT_INTERVAL};
pub use wire::{pattern_matches, Message, VarRecord, WireError};

use crate::time::Clock;

pub const DEFAULT_PORT: u16 = 45454;
const MAX_DATAGRAM: usize = 65_536;

/// Thread-safe access to one engine. Fan-out is sent while the engine lock
/// is held so every subscriber sees each name's records in seq order.
#[derive(Clone)]
pub struct EngineHandle {
    engine: Arc<Mutex<Engine>>,
    socket: Arc<OnceLock<UdpSocket>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for EngineHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineHandle").field("socket", &self.local_addr()).finish_non_exhaustive()
    }
}

impl EngineHandle {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        EngineHandle { engine: Arc::new(Mutex::new(Engine::new())), socket: Arc::new(OnceLock::new()), clock }
    }

    fn lock(&self) -> MutexGuard<'_, Engine> {
        self.engine.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn send_all(&self, out: &[Outgoing]) {
        if let Some(sock) = self.socket.get() {
            for (to, bytes) in out {
                if let Err(e) = sock.send_to(bytes, to) {
                    log::warn!("send to {to} failed: {e}");
                }
            }
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.socket.get().and_then(|s| s.local_addr().ok())
    }

    pub fn publish(&self, rec: VarRecord) -> Result<(), PublishError> {
        let mut engine = self.lock();
        let out = engine.publish(rec)?;
        self.send_all(&out);
        Ok(())
    }

    /// Publishes under the next seq for `name`, stamped with the engine clock.
    pub fn publish_value(&self, name: &str, value: f64) -> Result<VarRecord, PublishError> {
        let now = self.clock.now().as_micros();
        self.publish_value_at(name, value, now)
    }

    pub fn publish_value_at(&self, name: &str, value: f64, timestamp_us: u64) -> Result<VarRecord, PublishError> {
        let mut engine = self.lock();
        let (rec, out) = engine.publish_next(name, value, timestamp_us)?;
        self.send_all(&out);
        Ok(rec)
    }

    pub fn get(&self, name: &str) -> Option<VarRecord> {
        self.lock().get(name).cloned()
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.lock().get(name).map(|r| r.value)
    }

    pub fn snapshot_vars(&self, pattern: &str) -> Vec<VarRecord> {
        self.lock().snapshot_vars(pattern)
    }

    pub fn stats(&self) -> EngineStats {
        self.lock().stats()
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.lock().subscriptions().to_vec()
    }

    pub fn add_listener(&self, f: impl FnMut(&VarRecord) + Send + 'static) {
        self.lock().add_listener(f);
    }

    pub fn handle_datagram(&self, bytes: &[u8], src: SocketAddr) {
        let mut engine = self.lock();
        let out = engine.handle_datagram(bytes, src, self.clock.now());
        self.send_all(&out);
    }

    pub fn evict(&self) -> usize {
        let now = self.clock.now();
        self.lock().evict(now)
    }

    /// Binds the UDP socket and starts the receive loop. A handle can serve
    /// only once.
    pub fn serve(&self, addr: impl ToSocketAddrs) -> io::Result<EngineServer> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let recv = socket.try_clone()?;
        self.socket
            .set(socket)
            .map_err(|_| io::Error::new(io::ErrorKind::AlreadyExists, "engine is already serving"))?;
        let addr = recv.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let handle = self.clone();
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("sve-udp".into())
            .spawn(move || receive_loop(handle, recv, flag))?;
        log::info!("shared-variable engine listening on udp://{addr}");
        Ok(EngineServer { addr, stop, thread: Some(thread) })
    }
}

fn receive_loop(handle: EngineHandle, socket: UdpSocket, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; MAX_DATAGRAM];
    let mut last_evict = handle.clock.now();
    while !stop.load(Ordering::Relaxed) {
        match socket.recv_from(&mut buf) {
            Ok((n, src)) => handle.handle_datagram(&buf[..n], src),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            // ICMP port-unreachable from a departed subscriber surfaces here on some platforms.
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => {}
            Err(e) => {
                log::error!("udp receive failed: {e}");
                break;
            }
        }
        let now = handle.clock.now();
        if now.saturating_since(last_evict) >= Duration::from_secs(1) {
            let n = handle.evict();
            if n > 0 {
                log::info!("evicted {n} silent subscriptions");
            }
            last_evict = now;
        }
    }
}

/// Running UDP receive loop; stops on drop.
#[derive(Debug)]
pub struct EngineServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EngineServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EngineServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
