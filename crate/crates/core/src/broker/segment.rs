//! On-disk frame format shared by partition segments and the aggregator
//! spool.
//!
//! ```text
//! [length u32 BE][offset u64 BE][timestamp_ms i64 BE][key_len u32 BE][key][value][crc32 u32 BE]
//! ```
//!
//! `length` counts the bytes from `offset` through the end of `value`; the
//! trailing CRC32 covers the same range. Recovery truncates at the first
//! frame that is incomplete or fails its checksum.

use super::Record;

/// Fixed bytes inside `length`: offset + timestamp + key_len.
pub const FRAME_HEADER: usize = 8 + 8 + 4;
/// Bytes outside `length`: the length prefix and the CRC trailer.
pub const FRAME_OVERHEAD: usize = 4 + 4;

pub fn frame_len(key_len: usize, value_len: usize) -> usize {
    FRAME_OVERHEAD + FRAME_HEADER + key_len + value_len
}

pub fn encode_frame(offset: u64, timestamp: i64, key: &[u8], value: &[u8], out: &mut Vec<u8>) {
    let body_len = FRAME_HEADER + key.len() + value.len();
    out.reserve(body_len + FRAME_OVERHEAD);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    let body_start = out.len();
    out.extend_from_slice(&offset.to_be_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
    out.extend_from_slice(&(key.len() as u32).to_be_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(value);
    let crc = crc32fast::hash(&out[body_start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    /// Not enough bytes for a full frame (torn write at the tail).
    Incomplete,
    BadCrc,
    /// Structurally impossible lengths.
    Invalid,
}

/// Decodes one frame from the front of `buf`, returning the record and the
/// number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Record, usize), FrameError> {
    if buf.len() < 4 {
        return Err(FrameError::Incomplete);
    }
    let body_len = u32::from_be_bytes(buf[0..4].try_into().unwrap()) as usize;
    if body_len < FRAME_HEADER {
        return Err(FrameError::Invalid);
    }
    let total = 4 + body_len + 4;
    if buf.len() < total {
        return Err(FrameError::Incomplete);
    }
    let body = &buf[4..4 + body_len];
    let crc = u32::from_be_bytes(buf[4 + body_len..total].try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return Err(FrameError::BadCrc);
    }
    let offset = u64::from_be_bytes(body[0..8].try_into().unwrap());
    let timestamp = i64::from_be_bytes(body[8..16].try_into().unwrap());
    let key_len = u32::from_be_bytes(body[16..20].try_into().unwrap()) as usize;
    if FRAME_HEADER + key_len > body_len {
        return Err(FrameError::Invalid);
    }
    let key = body[20..20 + key_len].to_vec();
    let value = body[20 + key_len..].to_vec();
    Ok((
        Record {
            offset,
            timestamp,
            key,
            value,
        },
        total,
    ))
}

/// Scans a buffer of frames, stopping at the first bad or torn frame.
/// Returns the decoded records with their byte positions and the length of
/// the valid prefix.
pub fn scan_frames(buf: &[u8]) -> (Vec<(Record, u64, u32)>, usize) {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < buf.len() {
        match decode_frame(&buf[pos..]) {
            Ok((rec, used)) => {
                out.push((rec, pos as u64, used as u32));
                pos += used;
            }
            Err(_) => break,
        }
    }
    (out, pos)
}
