//! `SVE1` datagram format.
//!
//! ```text
//! publish:   "SVE1" | 1 | name_len | name | type_tag=1 | value f64 BE | timestamp_us u64 BE | seq u32 BE
//! subscribe: "SVE1" | 2 | pattern_len | pattern
//! snapshot:  "SVE1" | 3 | pattern_len | pattern
//! heartbeat: "SVE1" | 4 | pattern_len | pattern      (empty pattern refreshes every subscription)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SVE1";
pub const TYPE_TAG_DOUBLE: u8 = 1;
pub const MAX_NAME_LEN: usize = 255;
/// Bytes in a publish datagram besides the name.
pub const PUBLISH_OVERHEAD: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Publish = 1,
    Subscribe = 2,
    SnapshotRequest = 3,
    Heartbeat = 4,
}

/// A named double-typed shared variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarRecord {
    pub name: String,
    pub value: f64,
    pub timestamp_us: u64,
    pub seq: u32,
}

impl VarRecord {
    pub fn new(name: impl Into<String>, value: f64, timestamp_us: u64, seq: u32) -> Self {
        VarRecord { name: name.into(), value, timestamp_us, seq }
    }

    /// Bitwise equality, so NaN values compare equal to themselves.
    pub fn same_as(&self, other: &VarRecord) -> bool {
        self.name == other.name
            && self.value.to_bits() == other.value.to_bits()
            && self.timestamp_us == other.timestamp_us
            && self.seq == other.seq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Publish(VarRecord),
    Subscribe { pattern: String },
    SnapshotRequest { pattern: String },
    Heartbeat { pattern: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("datagram truncated at {0} bytes")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unsupported value type tag {0}")]
    UnsupportedTypeTag(u8),
    #[error("name is not valid UTF-8")]
    InvalidUtf8,
    #[error("name of {0} bytes exceeds 255")]
    NameTooLong(usize),
    #[error("empty variable name")]
    EmptyName,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

fn check_name(name: &str, allow_empty: bool) -> Result<(), WireError> {
    if name.len() > MAX_NAME_LEN {
        return Err(WireError::NameTooLong(name.len()));
    }
    if name.is_empty() && !allow_empty {
        return Err(WireError::EmptyName);
    }
    Ok(())
}

fn header(kind: MsgType, name: &str, allow_empty: bool) -> Result<Vec<u8>, WireError> {
    check_name(name, allow_empty)?;
    let mut out = Vec::with_capacity(PUBLISH_OVERHEAD + name.len());
    out.extend_from_slice(&MAGIC);
    out.push(kind as u8);
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    Ok(out)
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    Ok(match msg {
        Message::Publish(rec) => {
            let mut out = header(MsgType::Publish, &rec.name, false)?;
            out.push(TYPE_TAG_DOUBLE);
            out.extend_from_slice(&rec.value.to_be_bytes());
            out.extend_from_slice(&rec.timestamp_us.to_be_bytes());
            out.extend_from_slice(&rec.seq.to_be_bytes());
            out
        }
        Message::Subscribe { pattern } => header(MsgType::Subscribe, pattern, false)?,
        Message::SnapshotRequest { pattern } => header(MsgType::SnapshotRequest, pattern, true)?,
        Message::Heartbeat { pattern } => header(MsgType::Heartbeat, pattern, true)?,
    })
}

pub fn encode_publish(rec: &VarRecord) -> Result<Vec<u8>, WireError> {
    encode(&Message::Publish(rec.clone()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos + n;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated(self.buf.len()))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.array::<4>()? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let [kind, name_len] = r.array::<2>()?;
    let name = std::str::from_utf8(r.take(name_len as usize)?).map_err(|_| WireError::InvalidUtf8)?.to_owned();
    let msg = match kind {
        1 => {
            check_name(&name, false)?;
            let [tag] = r.array::<1>()?;
            if tag != TYPE_TAG_DOUBLE {
                return Err(WireError::UnsupportedTypeTag(tag));
            }
            let value = f64::from_be_bytes(r.array()?);
            let timestamp_us = u64::from_be_bytes(r.array()?);
            let seq = u32::from_be_bytes(r.array()?);
            Message::Publish(VarRecord { name, value, timestamp_us, seq })
        }
        2 => {
            check_name(&name, false)?;
            Message::Subscribe { pattern: name }
        }
        3 => Message::SnapshotRequest { pattern: name },
        4 => Message::Heartbeat { pattern: name },
        other => return Err(WireError::UnknownType(other)),
    };
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(msg)
}

/// Glob match where `*` stands for any run of characters.
pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !name.starts_with(first) || name.len() < first.len() + last.len() || !name.ends_with(last) {
        return false;
    }
    let mut rest = &name[first.len()..name.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}
