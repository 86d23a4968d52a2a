use thiserror::Error;

use super::frame::{decode_content, DecodeError, SensorFrame};
use super::{escape::unescape, FLAG};

/// Longest escaped run accepted between delimiters. A data frame is at most
/// 88 bytes once every content byte is escaped.
const MAX_ESCAPED_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameFault {
    #[error("{len} bytes before first delimiter")]
    Garbage { len: usize },
    #[error("rejected {len}-byte frame: {error}")]
    Rejected { error: DecodeError, len: usize },
    #[error("{len} bytes without a closing delimiter")]
    Overrun { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Deframed {
    Frame(SensorFrame),
    Fault(FrameFault),
}

/// Incremental deframer for the serial byte stream.
///
/// Bytes between two delimiters form one candidate frame. Chunk boundaries
/// carry no meaning: feeding a stream whole or one byte at a time produces
/// the same output sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Deframer {
    buf: Vec<u8>,
    synced: bool,
    // Bytes discarded while unsynced or after an overrun.
    skipped: usize,
    overrun: bool,
}

impl Deframer {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when no partial frame is buffered.
    pub fn is_idle(&self) -> bool {
        self.buf.is_empty() && self.skipped == 0
    }

    pub fn push(&mut self, chunk: &[u8]) -> Vec<Deframed> {
        let mut out = Vec::new();
        for &b in chunk {
            if b == FLAG {
                self.on_flag(&mut out);
            } else if !self.synced || self.overrun {
                self.skipped += 1;
            } else {
                self.buf.push(b);
                if self.buf.len() > MAX_ESCAPED_LEN {
                    self.overrun = true;
                    self.skipped = self.buf.len();
                    self.buf.clear();
                }
            }
        }
        out
    }

    fn on_flag(&mut self, out: &mut Vec<Deframed>) {
        if !self.synced {
            self.synced = true;
            if self.skipped > 0 {
                out.push(Deframed::Fault(FrameFault::Garbage { len: self.skipped }));
            }
        } else if self.overrun {
            out.push(Deframed::Fault(FrameFault::Overrun { len: self.skipped }));
            self.overrun = false;
        } else if !self.buf.is_empty() {
            let len = self.buf.len();
            let decoded = unescape(&self.buf).map_err(DecodeError::from).and_then(|c| decode_content(&c));
            out.push(match decoded {
                Ok(frame) => Deframed::Frame(frame),
                Err(error) => Deframed::Fault(FrameFault::Rejected { error, len }),
            });
        }
        self.skipped = 0;
        self.buf.clear();
    }
}
