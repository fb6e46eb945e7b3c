use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::ClientError;
use crate::protocol::auth;
use crate::protocol::codec::{self, op, Request, Response, ResponseBody, Status, PROTOCOL_VERSION};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

pub fn resolve(addr: &str) -> Result<SocketAddr, ClientError> {
    addr.to_socket_addrs()
        .map_err(|e| ClientError::Config(format!("cannot resolve {addr:?}: {e}")))?
        .next()
        .ok_or_else(|| ClientError::Config(format!("no address for {addr:?}")))
}

/// A blocking, authenticated data-plane connection. Requests may be
/// pipelined with `send` and answered in order by `recv`.
#[derive(Debug)]
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    identity: String,
    peer: SocketAddr,
}

impl Connection {
    pub fn connect(addr: &str, key_id: &str, secret: &[u8]) -> Result<Self, ClientError> {
        let peer = resolve(addr)?;
        let stream = TcpStream::connect_timeout(&peer, CONNECT_TIMEOUT)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::with_capacity(256 * 1024, stream.try_clone()?);
        let mut writer = BufWriter::with_capacity(256 * 1024, stream);
        let hello = read_response(&mut reader)?;
        let ResponseBody::Hello { version, nonce } = hello.body else {
            return Err(ClientError::Protocol("expected HELLO".into()));
        };
        if version != PROTOCOL_VERSION {
            return Err(ClientError::Protocol(format!(
                "unsupported protocol version {version}"
            )));
        }
        let req = Request::Auth {
            key_id: key_id.to_string(),
            mac: auth::sign(secret, &nonce),
        };
        codec::write_frame(&mut writer, &codec::encode_request(&req))?;
        writer.flush()?;
        let resp = read_response(&mut reader)?;
        match (resp.status, resp.body) {
            (Status::Ok, ResponseBody::Auth { identity }) => Ok(Self {
                reader,
                writer,
                identity,
                peer,
            }),
            (Status::Unauthorized, _) => Err(ClientError::Unauthorized),
            (s, _) => Err(ClientError::Status(s)),
        }
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> Result<(), ClientError> {
        self.reader.get_ref().set_read_timeout(t)?;
        Ok(())
    }

    pub fn send(&mut self, req: &Request) -> Result<(), ClientError> {
        codec::write_frame(&mut self.writer, &codec::encode_request(req))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ClientError> {
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Response, ClientError> {
        read_response(&mut self.reader)
    }

    pub fn call(&mut self, req: &Request) -> Result<Response, ClientError> {
        self.send(req)?;
        self.flush()?;
        self.recv()
    }

    pub(crate) fn into_parts(self) -> (BufReader<TcpStream>, BufWriter<TcpStream>) {
        (self.reader, self.writer)
    }

    /// Partition leaders and broker addresses for `topic`.
    pub fn metadata(&mut self, topic: &str) -> Result<TopicRoute, ClientError> {
        let resp = self.call(&Request::Metadata {
            topic: topic.to_string(),
        })?;
        match (resp.status, resp.body) {
            (
                Status::Ok,
                ResponseBody::Metadata {
                    partitions,
                    brokers,
                },
            ) => Ok(TopicRoute {
                leaders: partitions.iter().map(|p| p.leader).collect(),
                brokers: brokers.into_iter().map(|b| (b.id, b.addr)).collect(),
            }),
            (s, _) => Err(ClientError::Status(s)),
        }
    }
}

pub(crate) fn read_response(r: &mut BufReader<TcpStream>) -> Result<Response, ClientError> {
    let payload = codec::read_frame(r)?.ok_or(ClientError::Closed)?;
    let resp = codec::decode_response(&payload)?;
    if resp.opcode != op::HELLO && resp.status == Status::Malformed {
        return Err(ClientError::Status(Status::Malformed));
    }
    Ok(resp)
}

/// Routing snapshot for one topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRoute {
    /// Leader broker id per partition, −1 when unavailable.
    pub leaders: Vec<i32>,
    pub brokers: HashMap<i32, String>,
}

impl TopicRoute {
    pub fn partitions(&self) -> u32 {
        self.leaders.len() as u32
    }

    pub fn leader_addr(&self, partition: u32) -> Option<&str> {
        let leader = *self.leaders.get(partition as usize)?;
        self.brokers.get(&leader).map(String::as_str)
    }
}

/// Connects to the first reachable address in `addrs`.
pub fn connect_any(
    addrs: &[String],
    key_id: &str,
    secret: &[u8],
) -> Result<Connection, ClientError> {
    let mut last = ClientError::NoBrokers;
    for a in addrs {
        match Connection::connect(a, key_id, secret) {
            Ok(c) => return Ok(c),
            Err(ClientError::Unauthorized) => return Err(ClientError::Unauthorized),
            Err(e) => last = e,
        }
    }
    Err(last)
}
