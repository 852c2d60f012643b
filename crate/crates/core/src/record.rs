//! Session records: every frame the coordinator saw or sent, verbatim, with
//! its arrival time.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header  "HFSR" | format u16 | protocol u8 | start_us u64 | config_len u32 | config (UTF-8)
//! entry   arrival_us u64 | direction u8 | len u32 | frame bytes
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::protocol::{self, DecodeError, Frame, MAX_FRAME};

pub const SESSION_MAGIC: [u8; 4] = *b"HFSR";
pub const SESSION_FORMAT: u16 = 1;
const HEADER_FIXED: usize = 4 + 2 + 1 + 8 + 4;
const ENTRY_FIXED: usize = 8 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Direction {
    /// Node to coordinator.
    Inbound = 0,
    /// Coordinator to node.
    Outbound = 1,
    /// Generated inside the coordinator.
    Local = 2,
}

impl Direction {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Direction::Inbound),
            1 => Some(Direction::Outbound),
            2 => Some(Direction::Local),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionHeader {
    pub protocol_version: u8,
    pub start_us: u64,
    /// Configuration snapshot the session ran with.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub arrival_us: u64,
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub header: SessionHeader,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("not a session record")]
    BadMagic,
    #[error("unsupported session format {0}")]
    UnsupportedFormat(u16),
    #[error("session uses protocol version {found}, this build speaks {expected}")]
    ProtocolMismatch { found: u8, expected: u8 },
    #[error("record truncated inside entry {index}")]
    Truncated { index: usize },
    #[error("entry {index}: {reason}")]
    BadEntry { index: usize, reason: String },
    #[error("arrival time went backwards at entry {index}")]
    NonMonotonic { index: usize },
    #[error("frame {index} is corrupt: {source}")]
    CorruptFrame {
        index: usize,
        #[source]
        source: DecodeError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Append-only session writer.
#[derive(Debug)]
pub struct SessionWriter<W: Write> {
    out: W,
    last_arrival: u64,
    entries: usize,
}

impl<W: Write> SessionWriter<W> {
    pub fn new(mut out: W, header: &SessionHeader) -> Result<Self, RecordError> {
        let config = header.config.as_bytes();
        let mut buf = Vec::with_capacity(HEADER_FIXED + config.len());
        buf.extend_from_slice(&SESSION_MAGIC);
        buf.extend_from_slice(&SESSION_FORMAT.to_le_bytes());
        buf.push(header.protocol_version);
        buf.extend_from_slice(&header.start_us.to_le_bytes());
        buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
        buf.extend_from_slice(config);
        out.write_all(&buf)?;
        Ok(Self {
            out,
            last_arrival: header.start_us,
            entries: 0,
        })
    }

    pub fn append(&mut self, arrival_us: u64, direction: Direction, bytes: &[u8]) -> Result<(), RecordError> {
        if arrival_us < self.last_arrival {
            return Err(RecordError::NonMonotonic {
                index: self.entries,
            });
        }
        let mut head = [0u8; ENTRY_FIXED];
        head[..8].copy_from_slice(&arrival_us.to_le_bytes());
        head[8] = direction as u8;
        head[9..].copy_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.out.write_all(&head)?;
        self.out.write_all(bytes)?;
        self.last_arrival = arrival_us;
        self.entries += 1;
        Ok(())
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn flush(&mut self) -> Result<(), RecordError> {
        Ok(self.out.flush()?)
    }

    pub fn finish(mut self) -> Result<W, RecordError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parse a whole record. Frames are not decoded here; see
/// [`Session::decode_all`].
pub fn read_session<R: Read>(mut input: R) -> Result<Session, RecordError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    parse_session(&data)
}

pub fn parse_session(data: &[u8]) -> Result<Session, RecordError> {
    if data.len() < 4 || data[..4] != SESSION_MAGIC {
        return Err(RecordError::BadMagic);
    }
    if data.len() < HEADER_FIXED {
        return Err(RecordError::Truncated { index: 0 });
    }
    let format = u16::from_le_bytes([data[4], data[5]]);
    if format != SESSION_FORMAT {
        return Err(RecordError::UnsupportedFormat(format));
    }
    let protocol_version = data[6];
    if protocol_version != protocol::VERSION {
        return Err(RecordError::ProtocolMismatch {
            found: protocol_version,
            expected: protocol::VERSION,
        });
    }
    let start_us = u64::from_le_bytes(data[7..15].try_into().unwrap());
    let config_len = u32::from_le_bytes(data[15..19].try_into().unwrap()) as usize;
    let config_end = HEADER_FIXED
        .checked_add(config_len)
        .filter(|&e| e <= data.len())
        .ok_or(RecordError::Truncated { index: 0 })?;
    let config = String::from_utf8(data[HEADER_FIXED..config_end].to_vec()).map_err(|_| {
        RecordError::BadEntry {
            index: 0,
            reason: "configuration snapshot is not UTF-8".into(),
        }
    })?;

    let mut entries = Vec::new();
    let mut pos = config_end;
    let mut last = start_us;
    while pos < data.len() {
        let index = entries.len();
        if data.len() - pos < ENTRY_FIXED {
            return Err(RecordError::Truncated { index });
        }
        let arrival_us = u64::from_le_bytes(data[pos..pos + 8].try_into().unwrap());
        let direction = Direction::from_u8(data[pos + 8]).ok_or_else(|| RecordError::BadEntry {
            index,
            reason: format!("unknown direction {}", data[pos + 8]),
        })?;
        let len = u32::from_le_bytes(data[pos + 9..pos + 13].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(RecordError::BadEntry {
                index,
                reason: format!("frame length {len} exceeds {MAX_FRAME}"),
            });
        }
        pos += ENTRY_FIXED;
        if data.len() - pos < len {
            return Err(RecordError::Truncated { index });
        }
        if arrival_us < last {
            return Err(RecordError::NonMonotonic { index });
        }
        last = arrival_us;
        entries.push(Entry {
            arrival_us,
            direction,
            bytes: data[pos..pos + len].to_vec(),
        });
        pos += len;
    }
    Ok(Session {
        header: SessionHeader {
            protocol_version,
            start_us,
            config,
        },
        entries,
    })
}

impl Session {
    /// Decode every stored frame; the first corrupt one aborts with its index.
    pub fn decode_all(&self) -> Result<Vec<(&Entry, Frame)>, RecordError> {
        self.entries
            .iter()
            .enumerate()
            .map(|(index, e)| decode_entry(index, e).map(|f| (e, f)))
            .collect()
    }

    /// Serialize back to the on-disk layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = SessionWriter::new(Vec::new(), &self.header).expect("in-memory write");
        for e in &self.entries {
            w.append(e.arrival_us, e.direction, &e.bytes)
                .expect("entries are monotone");
        }
        w.finish().expect("in-memory flush")
    }

    pub fn duration_us(&self) -> u64 {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => b.arrival_us - a.arrival_us,
            _ => 0,
        }
    }
}

fn decode_entry(index: usize, e: &Entry) -> Result<Frame, RecordError> {
    match protocol::decode(&e.bytes) {
        Ok((frame, n)) if n == e.bytes.len() => Ok(frame),
        Ok(_) => Err(RecordError::BadEntry {
            index,
            reason: "trailing bytes after frame".into(),
        }),
        Err(source) => Err(RecordError::CorruptFrame { index, source }),
    }
}

/// Re-emit a session with its original relative timing divided by `speed`.
/// `sink` receives each entry with its decoded frame, after the clock reaches
/// the entry's scaled time.
pub fn replay<C, F>(session: &Session, speed: f64, clock: &C, mut sink: F) -> Result<usize, RecordError>
where
    C: Clock,
    F: FnMut(&Entry, &Frame),
{
    assert!(speed > 0.0 && speed.is_finite(), "replay speed must be positive");
    let Some(first) = session.entries.first() else {
        return Ok(0);
    };
    let t0 = clock.now_us();
    for (index, e) in session.entries.iter().enumerate() {
        let frame = decode_entry(index, e)?;
        let offset = ((e.arrival_us - first.arrival_us) as f64 / speed).round() as u64;
        clock.sleep_until(t0 + offset);
        sink(e, &frame);
    }
    Ok(session.entries.len())
}
