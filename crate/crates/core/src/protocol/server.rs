//! Per-broker TCP listener. One thread per connection; requests on a
//! connection are processed and answered in order, so clients may pipeline.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;
use rand::RngCore;

use super::auth::{self, CLUSTER_IDENTITY};
use super::codec::{
    self, op, BrokerMeta, PartitionMeta, Redirect, Request, Response, ResponseBody, Status,
    NONCE_LEN,
};
use crate::broker::{
    Acks, BrokerError, BrokerId, Cluster, OffsetTarget, Permission, Principal, RoundRobin,
};

const LONG_POLL: Duration = Duration::from_millis(500);
const MAX_FETCH_RECORDS: u32 = 10_000;
const MAX_FETCH_BYTES: u32 = 7 * 1024 * 1024;
const IO_BUFFER: usize = 256 * 1024;

type Conns = Arc<Mutex<HashMap<u64, TcpStream>>>;

#[derive(Debug)]
pub struct BrokerServer {
    broker: BrokerId,
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    conns: Conns,
    accept: Option<JoinHandle<()>>,
}

impl BrokerServer {
    /// Binds `bind` (port 0 picks a free port) and registers the resulting
    /// address with the cluster.
    pub fn start(cluster: Cluster, broker: BrokerId, bind: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        cluster
            .set_broker_addr(broker, addr)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let conns: Conns = Arc::default();
        let accept = {
            let shutdown = shutdown.clone();
            let conns = conns.clone();
            thread::Builder::new()
                .name(format!("broker-{broker}-accept"))
                .spawn(move || accept_loop(listener, cluster, broker, shutdown, conns))?
        };
        Ok(Self {
            broker,
            addr,
            shutdown,
            conns,
            accept: Some(accept),
        })
    }

    pub fn broker(&self) -> BrokerId {
        self.broker
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Drops every open client connection.
    pub fn close_connections(&self) {
        for (_, s) in self.conns.lock().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    pub fn stop(&mut self) {
        if self.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.close_connections();
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(
    listener: TcpListener,
    cluster: Cluster,
    broker: BrokerId,
    shutdown: Arc<AtomicBool>,
    conns: Conns,
) {
    let ids = AtomicU64::new(0);
    for stream in listener.incoming() {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        if cluster.is_halted(broker) {
            let _ = stream.shutdown(Shutdown::Both);
            continue;
        }
        let id = ids.fetch_add(1, Ordering::Relaxed);
        if let Ok(clone) = stream.try_clone() {
            conns.lock().insert(id, clone);
        }
        let cluster = cluster.clone();
        let shutdown = shutdown.clone();
        let conns = conns.clone();
        let spawned = thread::Builder::new()
            .name(format!("broker-{broker}-conn-{id}"))
            .spawn(move || {
                let mut conn = Connection::new(cluster, broker, shutdown);
                if let Err(e) = conn.serve(stream) {
                    log::debug!("broker {broker} connection {id} closed: {e}");
                }
                conns.lock().remove(&id);
            });
        if let Err(e) = spawned {
            log::warn!("cannot spawn connection thread: {e}");
        }
    }
}

struct Connection {
    cluster: Cluster,
    broker: BrokerId,
    shutdown: Arc<AtomicBool>,
    principal: Option<Principal>,
    round_robin: RoundRobin,
}

/// Maps a broker error to a wire status plus redirect information.
pub fn status_of(err: &BrokerError) -> (Status, Option<Redirect>) {
    match err {
        BrokerError::UnknownTopic(_) => (Status::UnknownTopic, None),
        BrokerError::UnknownPartition { .. } => (Status::UnknownPartition, None),
        BrokerError::Unauthorized { .. } => (Status::Unauthorized, None),
        BrokerError::OffsetOutOfRange { .. } => (Status::OffsetOutOfRange, None),
        BrokerError::ReplicationTimeout => (Status::ReplicationTimeout, None),
        BrokerError::NotLeader { leader, .. } => (
            Status::NotLeader,
            Some(match leader {
                Some(h) => Redirect {
                    leader_id: h.broker as i32,
                    addr: h.addr.map(|a| a.to_string()).unwrap_or_default(),
                },
                None => Redirect {
                    leader_id: -1,
                    addr: String::new(),
                },
            }),
        ),
        BrokerError::NoLeader
        | BrokerError::Shutdown
        | BrokerError::Io(_)
        | BrokerError::UnknownBroker(_) => (Status::NoLeader, None),
        BrokerError::DuplicateTopic(_)
        | BrokerError::InvalidName(_)
        | BrokerError::ReplicationUnsatisfiable { .. }
        | BrokerError::InvalidSpec(_) => (Status::Malformed, None),
    }
}

fn error_response(opcode: u8, err: &BrokerError, body: ResponseBody) -> Response {
    let (status, redirect) = status_of(err);
    Response {
        opcode: opcode | op::RESPONSE,
        status,
        body,
        redirect,
    }
}

fn partition_arg(p: i32) -> Result<u32, BrokerError> {
    u32::try_from(p).map_err(|_| BrokerError::UnknownPartition {
        topic: String::new(),
        partition: i64::from(p),
    })
}

impl Connection {
    fn new(cluster: Cluster, broker: BrokerId, shutdown: Arc<AtomicBool>) -> Self {
        Self {
            cluster,
            broker,
            shutdown,
            principal: None,
            round_robin: RoundRobin::default(),
        }
    }

    fn serve(&mut self, stream: TcpStream) -> Result<(), codec::CodecError> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::with_capacity(IO_BUFFER, stream.try_clone()?);
        let mut writer = BufWriter::with_capacity(IO_BUFFER, stream);
        let mut nonce = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);
        codec::write_frame(&mut writer, &codec::encode_hello(&nonce))?;
        writer.flush()?;

        loop {
            if reader.buffer().is_empty() {
                writer.flush()?;
            }
            let payload = match codec::read_frame(&mut reader) {
                Ok(Some(p)) => p,
                Ok(None) => return Ok(()),
                Err(codec::CodecError::Io(e)) => return Err(e.into()),
                Err(e) => {
                    let _ = codec::write_frame(
                        &mut writer,
                        &codec::encode_response(&Response::bare(0, Status::Malformed)),
                    );
                    let _ = writer.flush();
                    return Err(e);
                }
            };
            if self.shutdown.load(Ordering::SeqCst) || self.cluster.is_halted(self.broker) {
                return Ok(());
            }
            let req = match codec::decode_request(&payload) {
                Ok(r) => r,
                Err(e) => {
                    let resp = Response::bare(payload[0], Status::Malformed);
                    codec::write_frame(&mut writer, &codec::encode_response(&resp))?;
                    writer.flush()?;
                    return Err(e);
                }
            };
            let Some(principal) = self.principal.clone() else {
                let resp = self.authenticate(&req, &nonce);
                let ok = resp.status == Status::Ok;
                codec::write_frame(&mut writer, &codec::encode_response(&resp))?;
                writer.flush()?;
                if !ok {
                    return Ok(());
                }
                continue;
            };
            let more_pending = !reader.buffer().is_empty();
            if let Some(resp) = self.handle(&principal, req, more_pending, &mut writer)? {
                codec::write_frame(&mut writer, &codec::encode_response(&resp))?;
            }
        }
    }

    fn authenticate(&mut self, req: &Request, nonce: &[u8]) -> Response {
        let Request::Auth { key_id, mac } = req else {
            return Response::bare(req.opcode(), Status::Malformed);
        };
        let denied = Response {
            opcode: op::AUTH | op::RESPONSE,
            status: Status::Unauthorized,
            body: ResponseBody::Auth {
                identity: String::new(),
            },
            redirect: None,
        };
        let Some(key) = self.cluster.data_key(key_id) else {
            return denied;
        };
        if !auth::verify(&key.secret, nonce, mac) {
            return denied;
        }
        self.principal = Some(if key.identity_id == CLUSTER_IDENTITY {
            Principal::Internal
        } else {
            Principal::Identity(key.identity_id.clone())
        });
        Response::ok(
            op::AUTH | op::RESPONSE,
            ResponseBody::Auth {
                identity: key.identity_id,
            },
        )
    }

    fn handle(
        &mut self,
        principal: &Principal,
        req: Request,
        more_pending: bool,
        writer: &mut BufWriter<TcpStream>,
    ) -> io::Result<Option<Response>> {
        let opcode = req.opcode();
        let reply = |body| Response::ok(opcode | op::RESPONSE, body);
        let c = &self.cluster;
        let resp = match req {
            Request::Auth { .. } => Response::bare(opcode, Status::Malformed),
            Request::Produce {
                topic,
                partition,
                acks,
                key,
                value,
            } => {
                let Some(acks) = Acks::from_wire(acks) else {
                    return Ok(Some(Response::bare(opcode, Status::Malformed)));
                };
                let target = if partition == -1 {
                    Ok(None)
                } else {
                    partition_arg(partition).map(Some)
                };
                let result = target.and_then(|p| {
                    c.append_on(
                        Some(self.broker),
                        &self.round_robin,
                        principal,
                        &topic,
                        p,
                        &key,
                        &value,
                        acks,
                    )
                });
                if acks == Acks::None {
                    if let Err(e) = result {
                        log::debug!("acks=0 produce to {topic} dropped: {e}");
                    }
                    return Ok(None);
                }
                match result {
                    Ok(a) => reply(ResponseBody::Produce {
                        partition: a.partition as i32,
                        offset: a.offset.map(|o| o as i64).unwrap_or(-1),
                    }),
                    Err(e) => error_response(
                        opcode,
                        &e,
                        ResponseBody::Produce {
                            partition,
                            offset: -1,
                        },
                    ),
                }
            }
            Request::Fetch {
                topic,
                partition,
                offset,
                max_records,
                max_bytes,
            } => {
                let fetch = || -> Result<_, BrokerError> {
                    let p = partition_arg(partition)?;
                    let from =
                        u64::try_from(offset).map_err(|_| BrokerError::OffsetOutOfRange {
                            offset,
                            earliest: 0,
                            latest: 0,
                        })?;
                    c.fetch_on(
                        Some(self.broker),
                        principal,
                        &topic,
                        p,
                        from,
                        max_records.min(MAX_FETCH_RECORDS) as usize,
                        max_bytes.min(MAX_FETCH_BYTES) as usize,
                    )
                };
                let mut result = fetch();
                if matches!(&result, Ok(r) if r.is_empty()) && !more_pending && offset >= 0 {
                    writer.flush()?;
                    if c.wait_for_data(&topic, partition.max(0) as u32, offset as u64, LONG_POLL) {
                        result = fetch();
                    }
                }
                match result {
                    Ok(records) => reply(ResponseBody::Fetch { records }),
                    Err(e) => error_response(
                        opcode,
                        &e,
                        ResponseBody::Fetch {
                            records: Vec::new(),
                        },
                    ),
                }
            }
            Request::Commit {
                group,
                topic,
                partition,
                offset,
            } => {
                let result = partition_arg(partition).and_then(|p| {
                    let off = u64::try_from(offset).map_err(|_| BrokerError::OffsetOutOfRange {
                        offset,
                        earliest: 0,
                        latest: 0,
                    })?;
                    c.commit_offset(principal, &group, &topic, p, off)
                });
                match result {
                    Ok(()) => reply(ResponseBody::Commit),
                    Err(e) => error_response(opcode, &e, ResponseBody::Commit),
                }
            }
            Request::FetchCommitted {
                group,
                topic,
                partition,
            } => {
                match partition_arg(partition)
                    .and_then(|p| c.committed_offset(principal, &group, &topic, p))
                {
                    Ok(o) => reply(ResponseBody::FetchCommitted {
                        offset: o.map(|o| o as i64).unwrap_or(-1),
                    }),
                    Err(e) => {
                        error_response(opcode, &e, ResponseBody::FetchCommitted { offset: -1 })
                    }
                }
            }
            Request::ListOffsets {
                topic,
                partition,
                target,
            } => {
                let result = partition_arg(partition).and_then(|p| {
                    c.lookup_offset(principal, &topic, p, OffsetTarget::from_wire(target))
                });
                match result {
                    Ok(o) => reply(ResponseBody::ListOffsets { offset: o as i64 }),
                    Err(e) => error_response(opcode, &e, ResponseBody::ListOffsets { offset: -1 }),
                }
            }
            Request::Metadata { topic } => {
                let result = c
                    .authorize_any(
                        principal,
                        &topic,
                        &[Permission::Describe, Permission::Read, Permission::Write],
                    )
                    .and_then(|_| c.partition_leaders(&topic));
                match result {
                    Ok(leaders) => reply(ResponseBody::Metadata {
                        partitions: leaders
                            .into_iter()
                            .map(|l| PartitionMeta {
                                leader: l.map(|b| b as i32).unwrap_or(-1),
                            })
                            .collect(),
                        brokers: c
                            .broker_ids()
                            .into_iter()
                            .filter_map(|b| {
                                c.broker_addr(b).map(|a| BrokerMeta {
                                    id: b as i32,
                                    addr: a.to_string(),
                                })
                            })
                            .collect(),
                    }),
                    Err(e) => error_response(
                        opcode,
                        &e,
                        ResponseBody::Metadata {
                            partitions: Vec::new(),
                            brokers: Vec::new(),
                        },
                    ),
                }
            }
            Request::Replicate {
                topic,
                partition,
                records,
            } => {
                let result = internal_only(principal, &topic)
                    .and_then(|_| partition_arg(partition))
                    .and_then(|p| c.apply_replicated(self.broker, &topic, p, &records));
                match result {
                    Ok(end) => reply(ResponseBody::Replicate {
                        end_offset: end as i64,
                    }),
                    Err(e) => {
                        error_response(opcode, &e, ResponseBody::Replicate { end_offset: -1 })
                    }
                }
            }
            Request::Sync {
                topic,
                partition,
                offset,
                max_records,
            } => {
                let result = internal_only(principal, &topic)
                    .and_then(|_| partition_arg(partition))
                    .and_then(|p| {
                        c.sync_records(
                            &topic,
                            p,
                            offset.max(0) as u64,
                            max_records.min(MAX_FETCH_RECORDS) as usize,
                        )
                    });
                match result {
                    Ok((hw, records)) => reply(ResponseBody::Sync {
                        high_watermark: hw as i64,
                        records,
                    }),
                    Err(e) => error_response(
                        opcode,
                        &e,
                        ResponseBody::Sync {
                            high_watermark: -1,
                            records: Vec::new(),
                        },
                    ),
                }
            }
        };
        Ok(Some(resp))
    }
}

fn internal_only(principal: &Principal, topic: &str) -> Result<(), BrokerError> {
    match principal {
        Principal::Internal => Ok(()),
        Principal::Identity(id) => Err(BrokerError::Unauthorized {
            principal: id.clone(),
            topic: topic.to_string(),
            permission: Permission::Write,
        }),
    }
}
