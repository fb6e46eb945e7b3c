//! Frame layouts. A frame is `[len u32 BE][opcode u8][body]` where `len`
//! counts the opcode and body. Integers are big-endian, strings carry a
//! 2-byte length and blobs a 4-byte length.

use std::io::{self, Read, Write};

use crate::broker::Record;

pub const MAX_FRAME: usize = 8 * 1024 * 1024;
pub const PROTOCOL_VERSION: u8 = 1;
pub const NONCE_LEN: usize = 16;
pub const MAC_LEN: usize = 32;

pub mod op {
    pub const HELLO: u8 = 0x00;
    pub const AUTH: u8 = 0x01;
    pub const PRODUCE: u8 = 0x02;
    pub const FETCH: u8 = 0x03;
    pub const COMMIT: u8 = 0x04;
    pub const FETCH_COMMITTED: u8 = 0x05;
    pub const LIST_OFFSETS: u8 = 0x06;
    pub const METADATA: u8 = 0x07;
    pub const REPLICATE: u8 = 0x10;
    pub const SYNC: u8 = 0x11;
    pub const RESPONSE: u8 = 0x80;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Unauthorized = 1,
    UnknownTopic = 2,
    UnknownPartition = 3,
    OffsetOutOfRange = 4,
    NotLeader = 5,
    Malformed = 6,
    ReplicationTimeout = 7,
    NoLeader = 8,
}

impl Status {
    pub fn from_u8(b: u8) -> Option<Self> {
        use Status::*;
        Some(match b {
            0 => Ok,
            1 => Unauthorized,
            2 => UnknownTopic,
            3 => UnknownPartition,
            4 => OffsetOutOfRange,
            5 => NotLeader,
            6 => Malformed,
            7 => ReplicationTimeout,
            8 => NoLeader,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Status::*;
        match self {
            Ok => "OK",
            Unauthorized => "UNAUTHORIZED",
            UnknownTopic => "UNKNOWN_TOPIC",
            UnknownPartition => "UNKNOWN_PARTITION",
            OffsetOutOfRange => "OFFSET_OUT_OF_RANGE",
            NotLeader => "NOT_LEADER",
            Malformed => "MALFORMED",
            ReplicationTimeout => "REPLICATION_TIMEOUT",
            NoLeader => "NO_LEADER",
        }
    }

    /// Statuses a client may retry after refreshing its routing.
    pub fn is_retriable(self) -> bool {
        matches!(
            self,
            Status::NotLeader | Status::NoLeader | Status::ReplicationTimeout
        )
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("frame of {0} bytes exceeds the 8 MiB cap")]
    TooLarge(usize),
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid utf-8 string")]
    Utf8,
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Auth {
        key_id: String,
        mac: [u8; MAC_LEN],
    },
    Produce {
        topic: String,
        partition: i32,
        acks: u8,
        key: Vec<u8>,
        value: Vec<u8>,
    },
    Fetch {
        topic: String,
        partition: i32,
        offset: i64,
        max_records: u32,
        max_bytes: u32,
    },
    Commit {
        group: String,
        topic: String,
        partition: i32,
        offset: i64,
    },
    FetchCommitted {
        group: String,
        topic: String,
        partition: i32,
    },
    ListOffsets {
        topic: String,
        partition: i32,
        target: i64,
    },
    Metadata {
        topic: String,
    },
    Replicate {
        topic: String,
        partition: i32,
        records: Vec<Record>,
    },
    Sync {
        topic: String,
        partition: i32,
        offset: i64,
        max_records: u32,
    },
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::Auth { .. } => op::AUTH,
            Request::Produce { .. } => op::PRODUCE,
            Request::Fetch { .. } => op::FETCH,
            Request::Commit { .. } => op::COMMIT,
            Request::FetchCommitted { .. } => op::FETCH_COMMITTED,
            Request::ListOffsets { .. } => op::LIST_OFFSETS,
            Request::Metadata { .. } => op::METADATA,
            Request::Replicate { .. } => op::REPLICATE,
            Request::Sync { .. } => op::SYNC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Redirect {
    pub leader_id: i32,
    pub addr: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMeta {
    pub leader: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerMeta {
    pub id: i32,
    pub addr: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBody {
    Hello {
        version: u8,
        nonce: [u8; NONCE_LEN],
    },
    Auth {
        identity: String,
    },
    Produce {
        partition: i32,
        offset: i64,
    },
    Fetch {
        records: Vec<Record>,
    },
    Commit,
    FetchCommitted {
        offset: i64,
    },
    ListOffsets {
        offset: i64,
    },
    Metadata {
        partitions: Vec<PartitionMeta>,
        brokers: Vec<BrokerMeta>,
    },
    Replicate {
        end_offset: i64,
    },
    Sync {
        high_watermark: i64,
        records: Vec<Record>,
    },
    /// Status-only frame, used for MALFORMED before closing.
    Bare,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub opcode: u8,
    pub status: Status,
    pub body: ResponseBody,
    /// Present exactly when `status` is NOT_LEADER.
    pub redirect: Option<Redirect>,
}

impl Response {
    pub fn ok(opcode: u8, body: ResponseBody) -> Self {
        Self {
            opcode,
            status: Status::Ok,
            body,
            redirect: None,
        }
    }

    pub fn bare(request_opcode: u8, status: Status) -> Self {
        Self {
            opcode: request_opcode | op::RESPONSE,
            status,
            body: ResponseBody::Bare,
            redirect: None,
        }
    }
}

struct Writer<'a>(&'a mut Vec<u8>);

impl Writer<'_> {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn str(&mut self, s: &str) {
        let b = s.as_bytes();
        let n = b.len().min(u16::MAX as usize);
        self.u16(n as u16);
        self.0.extend_from_slice(&b[..n]);
    }
    fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn records(&mut self, recs: &[Record]) {
        self.u32(recs.len() as u32);
        for r in recs {
            self.i64(r.offset as i64);
            self.i64(r.timestamp);
            self.blob(&r.key);
            self.blob(&r.value);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, CodecError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CodecError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CodecError::Utf8)
    }
    fn blob(&mut self) -> Result<Vec<u8>, CodecError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn records(&mut self) -> Result<Vec<Record>, CodecError> {
        let n = self.u32()? as usize;
        // every record needs at least 24 bytes
        if n > self.remaining() / 24 {
            return Err(CodecError::Truncated);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let offset = self.i64()?;
            if offset < 0 {
                return Err(CodecError::Invalid("negative record offset"));
            }
            out.push(Record {
                offset: offset as u64,
                timestamp: self.i64()?,
                key: self.blob()?,
                value: self.blob()?,
            });
        }
        Ok(out)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

fn frame(opcode: u8, body: impl FnOnce(&mut Writer)) -> Vec<u8> {
    let mut buf = vec![0, 0, 0, 0, opcode];
    body(&mut Writer(&mut buf));
    let len = (buf.len() - 4) as u32;
    buf[..4].copy_from_slice(&len.to_be_bytes());
    buf
}

pub fn encode_hello(nonce: &[u8; NONCE_LEN]) -> Vec<u8> {
    encode_response(&Response::ok(
        op::HELLO,
        ResponseBody::Hello {
            version: PROTOCOL_VERSION,
            nonce: *nonce,
        },
    ))
}

/// Encodes a complete request frame including the length prefix.
pub fn encode_request(req: &Request) -> Vec<u8> {
    frame(req.opcode(), |w| match req {
        Request::Auth { key_id, mac } => {
            w.str(key_id);
            w.0.extend_from_slice(mac);
        }
        Request::Produce {
            topic,
            partition,
            acks,
            key,
            value,
        } => {
            w.str(topic);
            w.i32(*partition);
            w.u8(*acks);
            w.blob(key);
            w.blob(value);
        }
        Request::Fetch {
            topic,
            partition,
            offset,
            max_records,
            max_bytes,
        } => {
            w.str(topic);
            w.i32(*partition);
            w.i64(*offset);
            w.u32(*max_records);
            w.u32(*max_bytes);
        }
        Request::Commit {
            group,
            topic,
            partition,
            offset,
        } => {
            w.str(group);
            w.str(topic);
            w.i32(*partition);
            w.i64(*offset);
        }
        Request::FetchCommitted {
            group,
            topic,
            partition,
        } => {
            w.str(group);
            w.str(topic);
            w.i32(*partition);
        }
        Request::ListOffsets {
            topic,
            partition,
            target,
        } => {
            w.str(topic);
            w.i32(*partition);
            w.i64(*target);
        }
        Request::Metadata { topic } => w.str(topic),
        Request::Replicate {
            topic,
            partition,
            records,
        } => {
            w.str(topic);
            w.i32(*partition);
            w.records(records);
        }
        Request::Sync {
            topic,
            partition,
            offset,
            max_records,
        } => {
            w.str(topic);
            w.i32(*partition);
            w.i64(*offset);
            w.u32(*max_records);
        }
    })
}

/// Decodes a request from a frame payload (opcode + body).
pub fn decode_request(payload: &[u8]) -> Result<Request, CodecError> {
    let (&opcode, body) = payload.split_first().ok_or(CodecError::Truncated)?;
    let mut r = Reader { buf: body, pos: 0 };
    let req = match opcode {
        op::AUTH => Request::Auth {
            key_id: r.str()?,
            mac: r.array()?,
        },
        op::PRODUCE => Request::Produce {
            topic: r.str()?,
            partition: r.i32()?,
            acks: r.u8()?,
            key: r.blob()?,
            value: r.blob()?,
        },
        op::FETCH => Request::Fetch {
            topic: r.str()?,
            partition: r.i32()?,
            offset: r.i64()?,
            max_records: r.u32()?,
            max_bytes: r.u32()?,
        },
        op::COMMIT => Request::Commit {
            group: r.str()?,
            topic: r.str()?,
            partition: r.i32()?,
            offset: r.i64()?,
        },
        op::FETCH_COMMITTED => Request::FetchCommitted {
            group: r.str()?,
            topic: r.str()?,
            partition: r.i32()?,
        },
        op::LIST_OFFSETS => Request::ListOffsets {
            topic: r.str()?,
            partition: r.i32()?,
            target: r.i64()?,
        },
        op::METADATA => Request::Metadata { topic: r.str()? },
        op::REPLICATE => Request::Replicate {
            topic: r.str()?,
            partition: r.i32()?,
            records: r.records()?,
        },
        op::SYNC => Request::Sync {
            topic: r.str()?,
            partition: r.i32()?,
            offset: r.i64()?,
            max_records: r.u32()?,
        },
        other => return Err(CodecError::UnknownOpcode(other)),
    };
    r.finish()?;
    Ok(req)
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    frame(resp.opcode, |w| {
        if let ResponseBody::Hello { version, nonce } = &resp.body {
            w.u8(*version);
            w.0.extend_from_slice(nonce);
            return;
        }
        w.u8(resp.status as u8);
        match &resp.body {
            ResponseBody::Hello { .. } | ResponseBody::Bare => return,
            ResponseBody::Auth { identity } => w.str(identity),
            ResponseBody::Produce { partition, offset } => {
                w.i32(*partition);
                w.i64(*offset);
            }
            ResponseBody::Fetch { records } => w.records(records),
            ResponseBody::Commit => {}
            ResponseBody::FetchCommitted { offset } | ResponseBody::ListOffsets { offset } => {
                w.i64(*offset)
            }
            ResponseBody::Metadata {
                partitions,
                brokers,
            } => {
                w.u32(partitions.len() as u32);
                for p in partitions {
                    w.i32(p.leader);
                }
                w.u16(brokers.len() as u16);
                for b in brokers {
                    w.i32(b.id);
                    w.str(&b.addr);
                }
            }
            ResponseBody::Replicate { end_offset } => w.i64(*end_offset),
            ResponseBody::Sync {
                high_watermark,
                records,
            } => {
                w.i64(*high_watermark);
                w.records(records);
            }
        }
        if resp.status == Status::NotLeader {
            let r = resp.redirect.clone().unwrap_or(Redirect {
                leader_id: -1,
                addr: String::new(),
            });
            w.i32(r.leader_id);
            w.str(&r.addr);
        }
    })
}

pub fn decode_response(payload: &[u8]) -> Result<Response, CodecError> {
    let (&opcode, body) = payload.split_first().ok_or(CodecError::Truncated)?;
    let mut r = Reader { buf: body, pos: 0 };
    if opcode == op::HELLO {
        let version = r.u8()?;
        let nonce = r.array()?;
        r.finish()?;
        return Ok(Response::ok(
            op::HELLO,
            ResponseBody::Hello { version, nonce },
        ));
    }
    let status = Status::from_u8(r.u8()?).ok_or(CodecError::Invalid("status"))?;
    if r.remaining() == 0 && status != Status::Ok && opcode != (op::COMMIT | op::RESPONSE) {
        return Ok(Response {
            opcode,
            status,
            body: ResponseBody::Bare,
            redirect: None,
        });
    }
    let body = match opcode & !op::RESPONSE {
        _ if opcode & op::RESPONSE == 0 => return Err(CodecError::UnknownOpcode(opcode)),
        op::AUTH => ResponseBody::Auth { identity: r.str()? },
        op::PRODUCE => ResponseBody::Produce {
            partition: r.i32()?,
            offset: r.i64()?,
        },
        op::FETCH => ResponseBody::Fetch {
            records: r.records()?,
        },
        op::COMMIT => ResponseBody::Commit,
        op::FETCH_COMMITTED => ResponseBody::FetchCommitted { offset: r.i64()? },
        op::LIST_OFFSETS => ResponseBody::ListOffsets { offset: r.i64()? },
        op::METADATA => {
            let n = r.u32()? as usize;
            if n > r.remaining() / 4 {
                return Err(CodecError::Truncated);
            }
            let partitions = (0..n)
                .map(|_| Ok(PartitionMeta { leader: r.i32()? }))
                .collect::<Result<_, CodecError>>()?;
            let nb = r.u16()? as usize;
            let brokers = (0..nb)
                .map(|_| {
                    Ok(BrokerMeta {
                        id: r.i32()?,
                        addr: r.str()?,
                    })
                })
                .collect::<Result<_, CodecError>>()?;
            ResponseBody::Metadata {
                partitions,
                brokers,
            }
        }
        op::REPLICATE => ResponseBody::Replicate {
            end_offset: r.i64()?,
        },
        op::SYNC => ResponseBody::Sync {
            high_watermark: r.i64()?,
            records: r.records()?,
        },
        _ => return Err(CodecError::UnknownOpcode(opcode)),
    };
    let redirect = if status == Status::NotLeader {
        Some(Redirect {
            leader_id: r.i32()?,
            addr: r.str()?,
        })
    } else {
        None
    };
    r.finish()?;
    Ok(Response {
        opcode,
        status,
        body,
        redirect,
    })
}

/// Reads one frame payload (opcode + body). `Ok(None)` on clean EOF.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, CodecError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(CodecError::TooLarge(len));
    }
    if len == 0 {
        return Err(CodecError::Truncated);
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CodecError::Truncated
        } else {
            CodecError::Io(e)
        }
    })?;
    Ok(Some(buf))
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<(), CodecError> {
    if frame.len() - 4 > MAX_FRAME {
        return Err(CodecError::TooLarge(frame.len() - 4));
    }
    w.write_all(frame)?;
    Ok(())
}
