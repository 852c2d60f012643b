//! Binary framing between the coordinator and finger nodes.
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0x48 0x46 ("HF")
//!      2     1  version (1)
//!      3     1  msg_type
//!      4     1  finger_id
//!      5     4  seq            u32 LE
//!      9     8  timestamp_us   u64 LE
//!     17     2  payload_len    u16 LE (<= 1024)
//!     19     n  payload
//!   19+n     4  crc32 (IEEE)   u32 LE over bytes [0, 19+n)
//! ```
//!
//! `docs/wire-protocol.md` describes every payload layout.

use std::fmt;

use thiserror::Error;

use crate::hand::Role;

pub const MAGIC: [u8; 2] = [0x48, 0x46];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
pub const CRC_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1024;
pub const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD + CRC_LEN;

/// Largest magnitude an angle field may carry, in microradians (⌊2π·10⁶⌋).
pub const MAX_ANGLE_URAD: i32 = 6_283_185;

/// Angle in signed integer microradians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Microradians(pub i32);

impl Microradians {
    /// Round to the nearest microradian, saturating at ±2π.
    pub fn from_radians(rad: f64) -> Self {
        let v = (rad * 1e6).round();
        let v = v.clamp(-(MAX_ANGLE_URAD as f64), MAX_ANGLE_URAD as f64);
        Microradians(if v.is_nan() { 0 } else { v as i32 })
    }

    pub fn radians(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn in_range(self) -> bool {
        (-MAX_ANGLE_URAD..=MAX_ANGLE_URAD).contains(&self.0)
    }
}

impl fmt::Display for Microradians {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}urad", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    PoseTelemetry = 0x02,
    MotorTelemetry = 0x03,
    SetMotorTargets = 0x04,
    SetJointTargets = 0x05,
    TouchEvent = 0x06,
    Heartbeat = 0x07,
    Error = 0x08,
    InjectTouch = 0x09,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => MsgType::Hello,
            0x02 => MsgType::PoseTelemetry,
            0x03 => MsgType::MotorTelemetry,
            0x04 => MsgType::SetMotorTargets,
            0x05 => MsgType::SetJointTargets,
            0x06 => MsgType::TouchEvent,
            0x07 => MsgType::Heartbeat,
            0x08 => MsgType::Error,
            0x09 => MsgType::InjectTouch,
            _ => return None,
        })
    }
}

/// ERROR message codes.
pub mod error_code {
    pub const MALFORMED: u16 = 1;
    pub const WRONG_FINGER: u16 = 2;
    pub const NOT_REGISTERED: u16 = 3;
    pub const ACTUATOR_STALL: u16 = 4;
    pub const DUPLICATE_ID: u16 = 5;
    pub const UNSUPPORTED: u16 = 6;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        kind: Role,
        geometry_hash: u32,
    },
    /// Encoder angles `[θ1, θ2, θ3]`.
    PoseTelemetry { angles: [Microradians; 3] },
    /// Spool angles `[flexor, extensor]`.
    MotorTelemetry { spools: [Microradians; 2] },
    SetMotorTargets {
        targets: [Microradians; 2],
        /// µrad/s; zero selects the node's configured default.
        rate_limit: u32,
    },
    SetJointTargets { angles: [Microradians; 3] },
    TouchEvent { magnitude: u32, joint: u8 },
    Heartbeat,
    Error { code: u16, text: String },
    /// Simulation only: fingertip force `[fx, fy]` in micronewtons held for
    /// `duration_ms`.
    InjectTouch { force_un: [i32; 2], duration_ms: u32 },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::PoseTelemetry { .. } => MsgType::PoseTelemetry,
            Message::MotorTelemetry { .. } => MsgType::MotorTelemetry,
            Message::SetMotorTargets { .. } => MsgType::SetMotorTargets,
            Message::SetJointTargets { .. } => MsgType::SetJointTargets,
            Message::TouchEvent { .. } => MsgType::TouchEvent,
            Message::Heartbeat => MsgType::Heartbeat,
            Message::Error { .. } => MsgType::Error,
            Message::InjectTouch { .. } => MsgType::InjectTouch,
        }
    }

    pub fn error(code: u16, text: impl Into<String>) -> Self {
        let mut text: String = text.into();
        // Keep the payload within bounds on a char boundary.
        while text.len() > MAX_PAYLOAD - 2 {
            text.pop();
        }
        Message::Error { code, text }
    }

    fn angles(&self) -> &[Microradians] {
        match self {
            Message::PoseTelemetry { angles } | Message::SetJointTargets { angles } => angles,
            Message::MotorTelemetry { spools } => spools,
            Message::SetMotorTargets { targets, .. } => targets,
            _ => &[],
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::Hello {
                kind,
                geometry_hash,
            } => {
                out.push(kind.to_wire());
                out.extend_from_slice(&geometry_hash.to_le_bytes());
            }
            Message::PoseTelemetry { angles } | Message::SetJointTargets { angles } => {
                for a in angles {
                    out.extend_from_slice(&a.0.to_le_bytes());
                }
            }
            Message::MotorTelemetry { spools } => {
                for a in spools {
                    out.extend_from_slice(&a.0.to_le_bytes());
                }
            }
            Message::SetMotorTargets {
                targets,
                rate_limit,
            } => {
                for a in targets {
                    out.extend_from_slice(&a.0.to_le_bytes());
                }
                out.extend_from_slice(&rate_limit.to_le_bytes());
            }
            Message::TouchEvent { magnitude, joint } => {
                out.extend_from_slice(&magnitude.to_le_bytes());
                out.push(*joint);
            }
            Message::Heartbeat => {}
            Message::Error { code, text } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(text.as_bytes());
            }
            Message::InjectTouch {
                force_un,
                duration_ms,
            } => {
                for f in force_un {
                    out.extend_from_slice(&f.to_le_bytes());
                }
                out.extend_from_slice(&duration_ms.to_le_bytes());
            }
        }
    }
}

/// Routing fields of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Header {
    pub finger_id: u8,
    pub seq: u32,
    pub timestamp_us: u64,
}

impl Header {
    pub const fn new(finger_id: u8, seq: u32, timestamp_us: u64) -> Self {
        Self {
            finger_id,
            seq,
            timestamp_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: Header,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
    #[error("angle {0} outside ±2π")]
    AngleOutOfRange(Microradians),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("incomplete frame: need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("no frame magic; skipped {skipped} bytes to resynchronize")]
    BadMagic { skipped: usize },
    #[error("crc mismatch at offset {offset}: frame says {expected:#010x}, computed {actual:#010x}")]
    Crc {
        offset: usize,
        expected: u32,
        actual: u32,
    },
    #[error("declared payload length {0} exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("unsupported protocol version {version}")]
    UnsupportedVersion { version: u8, frame_len: usize },
    #[error("unknown message type {msg_type:#04x}")]
    UnknownMessage { msg_type: u8, raw: Vec<u8> },
    #[error("invalid payload for message type {msg_type:#04x}: {reason}")]
    InvalidPayload {
        msg_type: u8,
        reason: String,
        frame_len: usize,
    },
}

impl DecodeError {
    /// Bytes a stream decoder should drop before trying again.
    fn skip(&self) -> usize {
        match self {
            DecodeError::Incomplete { .. } => 0,
            DecodeError::BadMagic { skipped } => *skipped,
            // Corrupted header or body: step past this magic and rescan.
            DecodeError::Crc { .. } | DecodeError::PayloadTooLarge(_) => 1,
            // Frame passed its CRC, so its extent is trustworthy.
            DecodeError::UnsupportedVersion { frame_len, .. }
            | DecodeError::InvalidPayload { frame_len, .. } => *frame_len,
            DecodeError::UnknownMessage { raw, .. } => raw.len(),
        }
    }
}

/// Serialize one message into a complete frame.
pub fn encode(msg: &Message, header: Header) -> Result<Vec<u8>, EncodeError> {
    if let Some(bad) = msg.angles().iter().find(|a| !a.in_range()) {
        return Err(EncodeError::AngleOutOfRange(*bad));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 16 + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.push(header.finger_id);
    out.extend_from_slice(&header.seq.to_le_bytes());
    out.extend_from_slice(&header.timestamp_us.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    msg.write_payload(&mut out);
    let payload_len = out.len() - HEADER_LEN;
    if payload_len > MAX_PAYLOAD {
        return Err(EncodeError::PayloadTooLarge(payload_len));
    }
    out[17..19].copy_from_slice(&(payload_len as u16).to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn find_magic(buf: &[u8], from: usize) -> usize {
    (from..buf.len())
        .find(|&i| buf[i] == MAGIC[0] && (i + 1 == buf.len() || buf[i + 1] == MAGIC[1]))
        .unwrap_or(buf.len())
}

/// Decode the frame at the start of `buf`, returning it and its length.
pub fn decode(buf: &[u8]) -> Result<(Frame, usize), DecodeError> {
    if buf.is_empty() {
        return Err(DecodeError::Incomplete {
            needed: HEADER_LEN + CRC_LEN,
        });
    }
    let magic_ok = buf[0] == MAGIC[0] && (buf.len() < 2 || buf[1] == MAGIC[1]);
    if !magic_ok {
        return Err(DecodeError::BadMagic {
            skipped: find_magic(buf, 1),
        });
    }
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::Incomplete {
            needed: HEADER_LEN + CRC_LEN - buf.len(),
        });
    }
    let payload_len = u16::from_le_bytes([buf[17], buf[18]]) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(DecodeError::PayloadTooLarge(payload_len));
    }
    let crc_at = HEADER_LEN + payload_len;
    let frame_len = crc_at + CRC_LEN;
    if buf.len() < frame_len {
        return Err(DecodeError::Incomplete {
            needed: frame_len - buf.len(),
        });
    }
    let expected = u32::from_le_bytes(buf[crc_at..frame_len].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&buf[..crc_at]);
    if expected != actual {
        return Err(DecodeError::Crc {
            offset: crc_at,
            expected,
            actual,
        });
    }
    let version = buf[2];
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion { version, frame_len });
    }
    let raw_type = buf[3];
    let header = Header {
        finger_id: buf[4],
        seq: u32::from_le_bytes(buf[5..9].try_into().expect("4 bytes")),
        timestamp_us: u64::from_le_bytes(buf[9..17].try_into().expect("8 bytes")),
    };
    let Some(msg_type) = MsgType::from_u8(raw_type) else {
        return Err(DecodeError::UnknownMessage {
            msg_type: raw_type,
            raw: buf[..frame_len].to_vec(),
        });
    };
    let message = parse_payload(msg_type, &buf[HEADER_LEN..crc_at]).map_err(|reason| {
        DecodeError::InvalidPayload {
            msg_type: raw_type,
            reason,
            frame_len,
        }
    })?;
    Ok((Frame { header, message }, frame_len))
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], String> {
        if self.0.len() < N {
            return Err(format!("truncated payload, {} bytes short", N - self.0.len()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32, String> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn angle(&mut self) -> Result<Microradians, String> {
        let a = Microradians(self.i32()?);
        if a.in_range() {
            Ok(a)
        } else {
            Err(format!("angle {a} outside ±2π"))
        }
    }
    fn finish(self) -> Result<(), String> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(format!("{} trailing payload bytes", self.0.len()))
        }
    }
}

fn parse_payload(msg_type: MsgType, payload: &[u8]) -> Result<Message, String> {
    let mut c = Cursor(payload);
    let msg = match msg_type {
        MsgType::Hello => {
            let raw = c.u8()?;
            let kind = Role::from_wire(raw).ok_or_else(|| format!("unknown finger kind {raw}"))?;
            Message::Hello {
                kind,
                geometry_hash: c.u32()?,
            }
        }
        MsgType::PoseTelemetry => Message::PoseTelemetry {
            angles: [c.angle()?, c.angle()?, c.angle()?],
        },
        MsgType::MotorTelemetry => Message::MotorTelemetry {
            spools: [c.angle()?, c.angle()?],
        },
        MsgType::SetMotorTargets => Message::SetMotorTargets {
            targets: [c.angle()?, c.angle()?],
            rate_limit: c.u32()?,
        },
        MsgType::SetJointTargets => Message::SetJointTargets {
            angles: [c.angle()?, c.angle()?, c.angle()?],
        },
        MsgType::TouchEvent => Message::TouchEvent {
            magnitude: c.u32()?,
            joint: c.u8()?,
        },
        MsgType::Heartbeat => Message::Heartbeat,
        MsgType::Error => {
            let code = c.u16()?;
            let text = std::str::from_utf8(c.0)
                .map_err(|e| format!("error text is not UTF-8: {e}"))?
                .to_owned();
            c.0 = &[];
            Message::Error { code, text }
        }
        MsgType::InjectTouch => Message::InjectTouch {
            force_un: [c.i32()?, c.i32()?],
            duration_ms: c.u32()?,
        },
    };
    c.finish()?;
    Ok(msg)
}

/// Incremental decoder for one byte stream.
///
/// Feed arbitrary chunks with [`StreamDecoder::push`] and drain frames with
/// [`StreamDecoder::next_frame`]. Errors are reported once and decoding then
/// continues with the next candidate frame.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    stats: StreamStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub frames: u64,
    pub errors: u64,
    pub bytes_skipped: u64,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    /// Next decoded frame, a decode error, or `None` when more input is needed.
    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        if self.buf.is_empty() {
            return None;
        }
        match decode(&self.buf) {
            Ok((frame, len)) => {
                self.buf.drain(..len);
                self.stats.frames += 1;
                Some(Ok(frame))
            }
            Err(DecodeError::Incomplete { .. }) => None,
            Err(e) => {
                let skip = e.skip().clamp(1, self.buf.len());
                self.buf.drain(..skip);
                self.stats.errors += 1;
                self.stats.bytes_skipped += skip as u64;
                Some(Err(e))
            }
        }
    }

    /// Error for whatever partial frame is left at end of stream.
    pub fn finish(&mut self) -> Option<DecodeError> {
        match decode(&self.buf) {
            Err(e @ DecodeError::Incomplete { .. }) if !self.buf.is_empty() => {
                self.buf.clear();
                Some(e)
            }
            _ => None,
        }
    }
}
