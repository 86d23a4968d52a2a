//! Smart-house wireless sensor network monitoring pipeline.
//!
//! The crate is organised around the path a reading takes from a mote to an
//! operator:
//!
//! * [`wire`] frames, escapes and checksums the serial byte stream produced by
//!   the USB base station.
//! * [`convert`] turns raw MTS400 sensor counts into engineering units.
//! * [`sim`] is a deterministic multi-hop network and room simulator that
//!   produces that byte stream.
//! * [`gateway`] ingests the stream, tracks per-room state and logs LVM files.
//! * [`control`] holds the bipositional heating/cooling and lighting logic.
//! * [`sharedvar`] is the UDP shared-variable engine used for remote monitoring.
//! * [`closed_loop`] wires everything together for simulated runs and replays.

pub mod closed_loop;
pub mod control;
pub mod convert;
pub mod gateway;
pub mod sharedvar;
pub mod sim;
pub mod time;
pub mod wire;

pub use time::{Clock, ManualClock, SystemClock, Timestamp};
