//! Serial wire format for XMesh messages from the MTS400 sensor board.
//!
//! ```text
//! 0x7E | escape( TinyOS(5) | XMesh(7) | body | CRC(2) ) | 0x7E
//!
//! data body   : XSensor(4) | voltage(2) humidity(2) temperature(2) | light(2)
//!               press_temp(2) pressure(2) accel_x(2) accel_y(2) reserved(10)
//! health body : node(2) parent(2) battery_mv(2) packets_sent(4) link_seq(2)
//! ```
//!
//! Integers are little-endian; the CRC trailer is CRC-16/XMODEM sent most
//! significant byte first and covers every unescaped byte before it.

mod crc;
mod deframe;
mod escape;
mod frame;

pub use crc::crc16;
pub use deframe::{Deframed, Deframer, FrameFault};
pub use escape::{escape, unescape, EscapeError};
pub use frame::{
    decode_content, decode_frame, encode_content, encode_frame, DecodeError, EncodeError, FrameBody,
    FieldError, HealthReport, Mts400Payload, SensorFrame, TinyOsHeader, XMeshHeader, XSensorHeader,
    HUMIDITY_RAW_MAX, TEMPERATURE_RAW_MAX,
};

/// Frame delimiter.
pub const FLAG: u8 = 0x7E;
/// Escape prefix; the following byte is XOR-ed with [`ESCAPE_MASK`].
pub const ESCAPE: u8 = 0x7D;
pub const ESCAPE_MASK: u8 = 0x20;

pub const AM_TYPE_DATA: u8 = 0x0B;
pub const AM_TYPE_HEALTH: u8 = 0x0C;
pub const DEFAULT_GROUP: u8 = 0x7D;
pub const BROADCAST_ADDR: u16 = 0xFFFF;
pub const BASE_STATION_ADDR: u16 = 0;

pub const TINYOS_HEADER_LEN: usize = 5;
pub const XMESH_HEADER_LEN: usize = 7;
pub const XSENSOR_HEADER_LEN: usize = 4;
pub const MTS400_PAYLOAD_LEN: usize = 26;
pub const HEALTH_REPORT_LEN: usize = 12;
pub const CRC_LEN: usize = 2;

/// TinyOS length field of a data frame: XMesh + XSensor + payload.
pub const DATA_LENGTH_FIELD: u8 = (XMESH_HEADER_LEN + XSENSOR_HEADER_LEN + MTS400_PAYLOAD_LEN) as u8;
/// TinyOS length field of a health frame: XMesh + report.
pub const HEALTH_LENGTH_FIELD: u8 = (XMESH_HEADER_LEN + HEALTH_REPORT_LEN) as u8;

/// Unescaped width of a data frame including the CRC trailer.
pub const DATA_FRAME_LEN: usize = TINYOS_HEADER_LEN + DATA_LENGTH_FIELD as usize + CRC_LEN;
/// Unescaped width of a health frame including the CRC trailer.
pub const HEALTH_FRAME_LEN: usize = TINYOS_HEADER_LEN + HEALTH_LENGTH_FIELD as usize + CRC_LEN;
