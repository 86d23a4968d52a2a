use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::crc16;
use super::escape::{escape_into, unescape, EscapeError};
use super::*;

/// Highest raw humidity count (12-bit SHT11 mode).
pub const HUMIDITY_RAW_MAX: u16 = 4095;
/// Highest raw temperature count (14-bit SHT11 mode).
pub const TEMPERATURE_RAW_MAX: u16 = 16383;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyOsHeader {
    pub dest_addr: u16,
    pub am_type: u8,
    pub group: u8,
    /// Bytes following this header, excluding the CRC trailer.
    pub length: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct XMeshHeader {
    /// Last-hop relayer.
    pub source_addr: u16,
    /// Node that created the message.
    pub origin_addr: u16,
    pub seq: u16,
    pub app_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct XSensorHeader {
    pub board_id: u8,
    pub packet_id: u8,
    pub parent: u16,
}

/// Raw MTS400 sensor counts as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Mts400Payload {
    pub voltage_raw: u16,
    /// SHT11 SO_RH.
    pub humidity_raw: u16,
    /// SHT11 SO_T.
    pub temperature_raw: u16,
    pub light_raw: u16,
    pub press_temp_raw: u16,
    pub pressure_raw: u16,
    pub accel_x_raw: u16,
    pub accel_y_raw: u16,
    pub reserved: [u8; 10],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub node_id: u16,
    pub parent: u16,
    pub battery_mv: u16,
    pub packets_sent: u32,
    pub link_seq: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameBody {
    Data { sensor: XSensorHeader, payload: Mts400Payload },
    Health(HealthReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub tos: TinyOsHeader,
    pub mesh: XMeshHeader,
    pub body: FrameBody,
}

impl SensorFrame {
    /// Builds a data frame with the TinyOS header filled in for the body.
    pub fn data(dest_addr: u16, mesh: XMeshHeader, sensor: XSensorHeader, payload: Mts400Payload) -> Self {
        SensorFrame {
            tos: TinyOsHeader { dest_addr, am_type: AM_TYPE_DATA, group: DEFAULT_GROUP, length: DATA_LENGTH_FIELD },
            mesh,
            body: FrameBody::Data { sensor, payload },
        }
    }

    pub fn health(dest_addr: u16, mesh: XMeshHeader, report: HealthReport) -> Self {
        SensorFrame {
            tos: TinyOsHeader {
                dest_addr,
                am_type: AM_TYPE_HEALTH,
                group: DEFAULT_GROUP,
                length: HEALTH_LENGTH_FIELD,
            },
            mesh,
            body: FrameBody::Health(report),
        }
    }

    pub fn is_data(&self) -> bool {
        matches!(self.body, FrameBody::Data { .. })
    }

    /// Unescaped width including the CRC trailer.
    pub fn wire_len(&self) -> usize {
        match self.body {
            FrameBody::Data { .. } => DATA_FRAME_LEN,
            FrameBody::Health(_) => HEALTH_FRAME_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        let (am, len) = match self.body {
            FrameBody::Data { .. } => (AM_TYPE_DATA, DATA_LENGTH_FIELD),
            FrameBody::Health(_) => (AM_TYPE_HEALTH, HEALTH_LENGTH_FIELD),
        };
        if self.tos.am_type != am {
            return Err(EncodeError::AmTypeMismatch(self.tos.am_type));
        }
        if self.tos.length != len {
            return Err(EncodeError::InvalidLength { expected: len, found: self.tos.length });
        }
        if self.mesh.origin_addr == BASE_STATION_ADDR {
            return Err(EncodeError::InvalidOrigin);
        }
        if let FrameBody::Data { payload, .. } = &self.body {
            payload.validate()?;
        }
        Ok(())
    }
}

impl Mts400Payload {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.reserved.iter().any(|&b| b != 0) {
            return Err(FieldError::ReservedNonZero);
        }
        if self.humidity_raw > HUMIDITY_RAW_MAX {
            return Err(FieldError::OutOfRange { field: "humidity_raw", value: self.humidity_raw });
        }
        if self.temperature_raw > TEMPERATURE_RAW_MAX {
            return Err(FieldError::OutOfRange { field: "temperature_raw", value: self.temperature_raw });
        }
        Ok(())
    }
}

/// Payload field violations shared by the encoder and the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("reserved payload bytes must be zero")]
    ReservedNonZero,
    #[error("{field} count {value} out of range")]
    OutOfRange { field: &'static str, value: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("length field {found} does not match body (expected {expected})")]
    InvalidLength { expected: u8, found: u8 },
    #[error("am_type {0:#04x} does not match body kind")]
    AmTypeMismatch(u8),
    #[error("origin address 0 is reserved for the base station")]
    InvalidOrigin,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame is not enclosed in 0x7E delimiters")]
    MissingDelimiter,
    #[error("dangling escape byte")]
    DanglingEscape,
    #[error("unescaped delimiter inside frame")]
    UnexpectedFlag,
    #[error("truncated frame: {0} bytes")]
    Truncated(usize),
    #[error("crc mismatch: trailer {received:#06x}, computed {computed:#06x}")]
    CrcMismatch { received: u16, computed: u16 },
    #[error("unknown am_type {0:#04x}")]
    UnknownAmType(u8),
    #[error("length field {field} disagrees with {actual} bytes present")]
    LengthMismatch { field: u8, actual: usize },
    #[error("origin address 0 is reserved for the base station")]
    InvalidOrigin,
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl From<EscapeError> for DecodeError {
    fn from(e: EscapeError) -> Self {
        match e {
            EscapeError::DanglingEscape => DecodeError::DanglingEscape,
            EscapeError::UnexpectedFlag(_) => DecodeError::UnexpectedFlag,
        }
    }
}

/// Serializes headers, body and CRC trailer without escaping or delimiters.
pub fn encode_content(frame: &SensorFrame) -> Result<Vec<u8>, EncodeError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.wire_len());
    let tos = &frame.tos;
    out.extend_from_slice(&tos.dest_addr.to_le_bytes());
    out.extend_from_slice(&[tos.am_type, tos.group, tos.length]);
    let mesh = &frame.mesh;
    out.extend_from_slice(&mesh.source_addr.to_le_bytes());
    out.extend_from_slice(&mesh.origin_addr.to_le_bytes());
    out.extend_from_slice(&mesh.seq.to_le_bytes());
    out.push(mesh.app_id);
    match &frame.body {
        FrameBody::Data { sensor, payload } => {
            out.extend_from_slice(&[sensor.board_id, sensor.packet_id]);
            out.extend_from_slice(&sensor.parent.to_le_bytes());
            for v in [
                payload.voltage_raw,
                payload.humidity_raw,
                payload.temperature_raw,
                payload.light_raw,
                payload.press_temp_raw,
                payload.pressure_raw,
                payload.accel_x_raw,
                payload.accel_y_raw,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&payload.reserved);
        }
        FrameBody::Health(h) => {
            out.extend_from_slice(&h.node_id.to_le_bytes());
            out.extend_from_slice(&h.parent.to_le_bytes());
            out.extend_from_slice(&h.battery_mv.to_le_bytes());
            out.extend_from_slice(&h.packets_sent.to_le_bytes());
            out.extend_from_slice(&h.link_seq.to_le_bytes());
        }
    }
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    debug_assert_eq!(out.len(), frame.wire_len());
    Ok(out)
}

/// Encodes one complete delimited, escaped frame.
pub fn encode_frame(frame: &SensorFrame) -> Result<Vec<u8>, EncodeError> {
    let content = encode_content(frame)?;
    let mut out = Vec::with_capacity(content.len() + 8);
    out.push(FLAG);
    escape_into(&content, &mut out);
    out.push(FLAG);
    Ok(out)
}

/// Decodes one delimited, escaped frame.
pub fn decode_frame(raw: &[u8]) -> Result<SensorFrame, DecodeError> {
    if raw.len() < 2 || raw[0] != FLAG || raw[raw.len() - 1] != FLAG {
        return Err(DecodeError::MissingDelimiter);
    }
    let content = unescape(&raw[1..raw.len() - 1])?;
    decode_content(&content)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> u8 {
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn u16(&mut self) -> u16 {
        let v = u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]);
        self.pos += 2;
        v
    }

    fn u32(&mut self) -> u32 {
        let b = &self.buf[self.pos..self.pos + 4];
        self.pos += 4;
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
}

/// Decodes unescaped frame content (headers, body and CRC trailer).
pub fn decode_content(content: &[u8]) -> Result<SensorFrame, DecodeError> {
    if content.len() < TINYOS_HEADER_LEN + CRC_LEN {
        return Err(DecodeError::Truncated(content.len()));
    }
    let (body, trailer) = content.split_at(content.len() - CRC_LEN);
    let received = u16::from_be_bytes([trailer[0], trailer[1]]);
    let computed = crc16(body);
    if received != computed {
        return Err(DecodeError::CrcMismatch { received, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    let tos = TinyOsHeader { dest_addr: r.u16(), am_type: r.u8(), group: r.u8(), length: r.u8() };
    let expected_len = match tos.am_type {
        AM_TYPE_DATA => DATA_LENGTH_FIELD,
        AM_TYPE_HEALTH => HEALTH_LENGTH_FIELD,
        other => return Err(DecodeError::UnknownAmType(other)),
    };
    let actual = body.len() - TINYOS_HEADER_LEN;
    if tos.length as usize != actual || tos.length != expected_len {
        return Err(DecodeError::LengthMismatch { field: tos.length, actual });
    }

    let mesh = XMeshHeader { source_addr: r.u16(), origin_addr: r.u16(), seq: r.u16(), app_id: r.u8() };
    if mesh.origin_addr == BASE_STATION_ADDR {
        return Err(DecodeError::InvalidOrigin);
    }

    let body = if tos.am_type == AM_TYPE_DATA {
        let sensor = XSensorHeader { board_id: r.u8(), packet_id: r.u8(), parent: r.u16() };
        let mut payload = Mts400Payload {
            voltage_raw: r.u16(),
            humidity_raw: r.u16(),
            temperature_raw: r.u16(),
            light_raw: r.u16(),
            press_temp_raw: r.u16(),
            pressure_raw: r.u16(),
            accel_x_raw: r.u16(),
            accel_y_raw: r.u16(),
            reserved: [0; 10],
        };
        payload.reserved.copy_from_slice(&body[r.pos..r.pos + 10]);
        payload.validate()?;
        FrameBody::Data { sensor, payload }
    } else {
        FrameBody::Health(HealthReport {
            node_id: r.u16(),
            parent: r.u16(),
            battery_mv: r.u16(),
            packets_sent: r.u32(),
            link_seq: r.u16(),
        })
    };
    Ok(SensorFrame { tos, mesh, body })
}
