//! Helpers shared by several integration-test targets.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Once};
use std::time::{Duration, Instant};

use octo::broker::{Cluster, ClusterConfig, DataKey, Record};
use octo::protocol::codec::{
    op, BrokerMeta, PartitionMeta, Redirect, Request, Response, ResponseBody, Status, MAC_LEN,
    NONCE_LEN,
};
use octo::protocol::BrokerServer;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

// ---------------------------------------------------------------------------
// Broker environment

pub struct Env {
    pub cluster: Cluster,
    pub servers: Vec<BrokerServer>,
    pub dir: tempfile::TempDir,
}

impl Env {
    pub fn new(brokers: u32) -> Self {
        Self::with(brokers, |_| {})
    }

    pub fn with(brokers: u32, tweak: impl FnOnce(&mut ClusterConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ClusterConfig::new(dir.path(), brokers);
        cfg.heartbeat_interval = Duration::ZERO;
        tweak(&mut cfg);
        let cluster = Cluster::open(cfg).unwrap();
        let servers = (0..brokers)
            .map(|b| {
                BrokerServer::start(cluster.clone(), b, "127.0.0.1:0".parse().unwrap()).unwrap()
            })
            .collect();
        Self {
            cluster,
            servers,
            dir,
        }
    }

    pub fn addrs(&self) -> Vec<String> {
        self.servers.iter().map(|s| s.addr().to_string()).collect()
    }

    pub fn key(&self, identity: &str) -> (String, Vec<u8>) {
        let key_id = format!("key-{identity}");
        let secret = [7u8; 32];
        self.cluster
            .register_key(DataKey {
                key_id: key_id.clone(),
                identity_id: identity.into(),
                secret,
                created_at: 0,
            })
            .unwrap();
        (key_id, secret.to_vec())
    }

    pub fn halt(&self, b: u32) {
        self.cluster.halt_broker(b).unwrap();
        self.servers[b as usize].close_connections();
    }
}

// ---------------------------------------------------------------------------
// Raw wire client

pub struct Wire {
    pub stream: TcpStream,
    pub nonce: [u8; NONCE_LEN],
}

impl Wire {
    pub fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let mut stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        stream.set_nodelay(true)?;
        let hello = octo::protocol::read_frame(&mut stream)
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .ok_or_else(|| std::io::Error::other("no hello"))?;
        let resp = octo::protocol::decode_response(&hello)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let ResponseBody::Hello { nonce, .. } = resp.body else {
            return Err(std::io::Error::other("first frame is not HELLO"));
        };
        Ok(Self { stream, nonce })
    }

    pub fn auth(&mut self, key_id: &str, secret: &[u8]) -> Response {
        let mac = octo::protocol::auth::sign(secret, &self.nonce);
        self.call(&Request::Auth {
            key_id: key_id.into(),
            mac,
        })
        .unwrap()
    }

    pub fn send(&mut self, req: &Request) -> std::io::Result<()> {
        self.stream.write_all(&octo::protocol::encode_request(req))
    }

    pub fn recv(&mut self) -> std::io::Result<Response> {
        let payload = octo::protocol::read_frame(&mut self.stream)
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .ok_or_else(|| std::io::Error::from(std::io::ErrorKind::UnexpectedEof))?;
        octo::protocol::decode_response(&payload).map_err(|e| std::io::Error::other(e.to_string()))
    }

    pub fn call(&mut self, req: &Request) -> std::io::Result<Response> {
        self.send(req)?;
        self.recv()
    }
}

// ---------------------------------------------------------------------------
// Codec strategies

fn name() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9._-]{0,12}"
}

fn bytes() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..24)
}

fn record() -> impl Strategy<Value = Record> {
    (0..=i64::MAX, any::<i64>(), bytes(), bytes()).prop_map(|(offset, timestamp, key, value)| {
        Record {
            offset: offset as u64,
            timestamp,
            key,
            value,
        }
    })
}

fn records() -> impl Strategy<Value = Vec<Record>> {
    prop::collection::vec(record(), 0..4)
}

pub fn request() -> impl Strategy<Value = Request> {
    prop_oneof![
        (name(), any::<[u8; MAC_LEN]>()).prop_map(|(key_id, mac)| Request::Auth { key_id, mac }),
        (name(), any::<i32>(), any::<u8>(), bytes(), bytes()).prop_map(
            |(topic, partition, acks, key, value)| {
                Request::Produce {
                    topic,
                    partition,
                    acks,
                    key,
                    value,
                }
            }
        ),
        (
            name(),
            any::<i32>(),
            any::<i64>(),
            any::<u32>(),
            any::<u32>()
        )
            .prop_map(|(topic, partition, offset, max_records, max_bytes)| {
                Request::Fetch {
                    topic,
                    partition,
                    offset,
                    max_records,
                    max_bytes,
                }
            }),
        (name(), name(), any::<i32>(), any::<i64>()).prop_map(
            |(group, topic, partition, offset)| Request::Commit {
                group,
                topic,
                partition,
                offset,
            }
        ),
        (name(), name(), any::<i32>()).prop_map(|(group, topic, partition)| {
            Request::FetchCommitted {
                group,
                topic,
                partition,
            }
        }),
        (name(), any::<i32>(), any::<i64>()).prop_map(|(topic, partition, target)| {
            Request::ListOffsets {
                topic,
                partition,
                target,
            }
        }),
        name().prop_map(|topic| Request::Metadata { topic }),
        (name(), any::<i32>(), records()).prop_map(|(topic, partition, records)| {
            Request::Replicate {
                topic,
                partition,
                records,
            }
        }),
        (name(), any::<i32>(), any::<i64>(), any::<u32>()).prop_map(
            |(topic, partition, offset, max_records)| {
                Request::Sync {
                    topic,
                    partition,
                    offset,
                    max_records,
                }
            }
        ),
    ]
}

fn body() -> impl Strategy<Value = (u8, ResponseBody)> {
    prop_oneof![
        name().prop_map(|identity| (op::AUTH, ResponseBody::Auth { identity })),
        (any::<i32>(), any::<i64>()).prop_map(|(partition, offset)| (
            op::PRODUCE,
            ResponseBody::Produce { partition, offset }
        )),
        records().prop_map(|records| (op::FETCH, ResponseBody::Fetch { records })),
        Just((op::COMMIT, ResponseBody::Commit)),
        any::<i64>()
            .prop_map(|offset| (op::FETCH_COMMITTED, ResponseBody::FetchCommitted { offset })),
        any::<i64>().prop_map(|offset| (op::LIST_OFFSETS, ResponseBody::ListOffsets { offset })),
        (
            prop::collection::vec(any::<i32>(), 0..6),
            prop::collection::vec((any::<i32>(), name()), 0..4)
        )
            .prop_map(|(leaders, brokers)| (
                op::METADATA,
                ResponseBody::Metadata {
                    partitions: leaders
                        .into_iter()
                        .map(|leader| PartitionMeta { leader })
                        .collect(),
                    brokers: brokers
                        .into_iter()
                        .map(|(id, addr)| BrokerMeta { id, addr })
                        .collect(),
                }
            )),
        any::<i64>().prop_map(|end_offset| (op::REPLICATE, ResponseBody::Replicate { end_offset })),
        (any::<i64>(), records()).prop_map(|(high_watermark, records)| (
            op::SYNC,
            ResponseBody::Sync {
                high_watermark,
                records
            }
        )),
    ]
}

const ERRORS: [Status; 8] = [
    Status::Unauthorized,
    Status::UnknownTopic,
    Status::UnknownPartition,
    Status::OffsetOutOfRange,
    Status::NotLeader,
    Status::Malformed,
    Status::ReplicationTimeout,
    Status::NoLeader,
];

/// Responses in every shape a broker can emit: OK with a body, NOT_LEADER
/// with a body and redirect, other errors with a body, and bare statuses.
pub fn response() -> impl Strategy<Value = Response> {
    let ok = body().prop_map(|(opcode, body)| Response::ok(opcode | op::RESPONSE, body));
    let redirect =
        (body(), any::<i32>(), name()).prop_map(|((opcode, body), leader_id, addr)| Response {
            opcode: opcode | op::RESPONSE,
            status: Status::NotLeader,
            body,
            redirect: Some(Redirect { leader_id, addr }),
        });
    let failed = (body(), 0..ERRORS.len())
        .prop_filter(
            "commit has no body to carry an error",
            |((opcode, _), _)| *opcode != op::COMMIT,
        )
        .prop_map(|((opcode, body), i)| {
            let status = if ERRORS[i] == Status::NotLeader {
                Status::Malformed
            } else {
                ERRORS[i]
            };
            Response {
                opcode: opcode | op::RESPONSE,
                status,
                body,
                redirect: None,
            }
        });
    let bare = (any::<u8>(), 0..ERRORS.len())
        .prop_filter("not-leader always carries a redirect", |(_, i)| {
            ERRORS[*i] != Status::NotLeader
        })
        .prop_filter(
            "a bare commit reply decodes as the commit body",
            |(opcode, _)| opcode & !op::RESPONSE != op::COMMIT,
        )
        .prop_map(|(opcode, i)| Response::bare(opcode, ERRORS[i]));
    let hello = any::<[u8; NONCE_LEN]>().prop_map(|nonce| {
        Response::ok(
            op::HELLO,
            ResponseBody::Hello {
                version: octo::protocol::codec::PROTOCOL_VERSION,
                nonce,
            },
        )
    });
    prop_oneof![4 => ok, 2 => redirect, 2 => failed, 1 => bare, 1 => hello]
}

/// Runs `cases` round-trip cases over requests and responses. Returns the
/// number of cases executed.
pub fn codec_roundtrip(cases: u32) -> Result<u32, String> {
    use proptest::test_runner::{Config, TestRunner};
    let count = Arc::new(AtomicU64::new(0));
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let c = count.clone();
    runner
        .run(&(request(), response()), move |(req, resp)| {
            c.fetch_add(1, Ordering::Relaxed);
            let f = octo::protocol::encode_request(&req);
            prop_assert_eq!(
                u32::from_be_bytes(f[..4].try_into().unwrap()) as usize,
                f.len() - 4
            );
            prop_assert_eq!(f[4], req.opcode());
            prop_assert_eq!(&octo::protocol::decode_request(&f[4..]).unwrap(), &req);
            let g = octo::protocol::encode_response(&resp);
            prop_assert_eq!(
                u32::from_be_bytes(g[..4].try_into().unwrap()) as usize,
                g.len() - 4
            );
            prop_assert_eq!(&octo::protocol::decode_response(&g[4..]).unwrap(), &resp);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(count.load(Ordering::Relaxed) as u32)
}

// ---------------------------------------------------------------------------
// Socket fuzzing

static PANIC_HOOK: Once = Once::new();
static BROKER_PANICS: AtomicU64 = AtomicU64::new(0);

/// Counts panics raised on broker threads from now on.
pub fn broker_panics() -> u64 {
    PANIC_HOOK.call_once(|| {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            if std::thread::current()
                .name()
                .is_some_and(|n| n.starts_with("broker-"))
            {
                BROKER_PANICS.fetch_add(1, Ordering::SeqCst);
            }
            prev(info);
        }));
    });
    BROKER_PANICS.load(Ordering::SeqCst)
}

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub connections: u64,
    pub frames: u64,
    pub answered: u64,
}

fn mutate(rng: &mut StdRng, mut f: Vec<u8>) -> Vec<u8> {
    match rng.gen_range(0..5) {
        0 => {
            let i = rng.gen_range(0..f.len());
            f[i] ^= 1 << rng.gen_range(0..8);
        }
        1 => f.truncate(rng.gen_range(0..f.len())),
        2 => {
            let extra: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
            f.extend(extra);
        }
        3 if f.len() > 5 => {
            let i = rng.gen_range(5..f.len());
            f[i] = rng.gen();
        }
        _ => {
            let len = (f.len() - 4) as u32;
            let n = match rng.gen_range(0..3) {
                0 => 0,
                1 => len.wrapping_add(rng.gen_range(1..64)),
                _ => rng.gen(),
            };
            f[..4].copy_from_slice(&n.to_be_bytes());
        }
    }
    f
}

fn valid_frame(rng: &mut StdRng, topic: &str) -> Vec<u8> {
    let req = match rng.gen_range(0..7) {
        0 => Request::Produce {
            topic: topic.into(),
            partition: rng.gen_range(-2..3),
            acks: [0u8, 1, 255, 7][rng.gen_range(0..4)],
            key: vec![rng.gen(); rng.gen_range(0..8)],
            value: vec![rng.gen(); rng.gen_range(0..64)],
        },
        1 => Request::Fetch {
            topic: topic.into(),
            partition: rng.gen_range(-1..3),
            offset: rng.gen_range(-3..50),
            max_records: rng.gen(),
            max_bytes: rng.gen(),
        },
        2 => Request::Commit {
            group: "g".into(),
            topic: topic.into(),
            partition: rng.gen_range(-1..3),
            offset: rng.gen_range(-2..100),
        },
        3 => Request::FetchCommitted {
            group: "g".into(),
            topic: topic.into(),
            partition: rng.gen_range(-1..3),
        },
        4 => Request::ListOffsets {
            topic: topic.into(),
            partition: rng.gen_range(-1..3),
            target: rng.gen_range(-3..i64::MAX),
        },
        5 => Request::Metadata {
            topic: topic.into(),
        },
        _ => Request::Replicate {
            topic: topic.into(),
            partition: rng.gen_range(-1..3),
            records: vec![Record {
                offset: rng.gen_range(0..100),
                timestamp: rng.gen(),
                key: Vec::new(),
                value: vec![1, 2, 3],
            }],
        },
    };
    octo::protocol::encode_request(&req)
}

/// Hammers `addr` with malformed and semi-valid traffic for `duration`.
/// Half of the connections authenticate first so that post-handshake
/// request handling is exercised too.
pub fn fuzz(
    addr: SocketAddr,
    key_id: &str,
    secret: &[u8],
    topic: &str,
    duration: Duration,
    seed: u64,
) -> FuzzStats {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut stats = FuzzStats::default();
    let deadline = Instant::now() + duration;
    while Instant::now() < deadline {
        let Ok(mut w) = Wire::connect(addr) else {
            continue;
        };
        stats.connections += 1;
        let _ = w.stream.set_read_timeout(Some(Duration::from_millis(700)));
        if rng.gen_bool(0.5) {
            w.auth(key_id, secret);
        }
        for _ in 0..rng.gen_range(1..12) {
            let frame = match rng.gen_range(0..4) {
                0 => (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect(),
                1 => {
                    let f = valid_frame(&mut rng, topic);
                    mutate(&mut rng, f)
                }
                _ => valid_frame(&mut rng, topic),
            };
            stats.frames += 1;
            if w.stream.write_all(&frame).is_err() {
                break;
            }
            let mut buf = [0u8; 4096];
            match w.stream.read(&mut buf) {
                Ok(0) => break,
                Ok(_) => stats.answered += 1,
                Err(_) => {}
            }
        }
    }
    stats
}

// ---------------------------------------------------------------------------
// Brute-force pattern oracle.
//
// Patterns are flattened to (path, allowed literals) constraints. A body
// satisfies a constraint when walking the path through nested mappings ends
// at a scalar equal to one literal, or at a list holding such a scalar.

pub const KEYS: [&str; 2] = ["a", "b"];

pub fn scalars() -> Vec<Value> {
    vec![json!(1), json!("x"), json!(true)]
}

/// Literal alphabet for patterns: the body scalars plus a float that must
/// compare equal to the integer.
pub fn literals() -> Vec<Value> {
    vec![json!(1), json!("x"), json!(true), json!(1.0)]
}

fn subsets(items: &[Value], max: usize) -> Vec<Vec<Value>> {
    let mut out = Vec::new();
    for mask in 1u32..(1 << items.len()) {
        if mask.count_ones() as usize <= max {
            out.push(
                items
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, v)| v.clone())
                    .collect(),
            );
        }
    }
    out
}

fn objects(options: &[Option<Value>]) -> Vec<Value> {
    let mut out = Vec::new();
    for x in options {
        for y in options {
            let mut m = serde_json::Map::new();
            if let Some(v) = x {
                m.insert(KEYS[0].into(), v.clone());
            }
            if let Some(v) = y {
                m.insert(KEYS[1].into(), v.clone());
            }
            out.push(Value::Object(m));
        }
    }
    out
}

/// Every body over the two-key alphabet with nesting depth at most two.
/// Leaves are one of the three scalars or a list holding two of them.
pub fn bodies() -> Vec<Value> {
    let mut leaf: Vec<Option<Value>> = vec![None];
    leaf.extend(scalars().into_iter().map(Some));
    leaf.push(Some(json!([1, "x"])));
    let inner = objects(&leaf);
    let mut top = leaf.clone();
    top.extend(inner.into_iter().map(Some));
    objects(&top)
}

/// Every pattern over the same alphabet with depth at most two.
pub fn patterns() -> Vec<Value> {
    let lists: Vec<Option<Value>> = std::iter::once(None)
        .chain(
            subsets(&literals(), 2)
                .into_iter()
                .map(|s| Some(Value::Array(s))),
        )
        .collect();
    let inner = objects(&lists);
    let mut top = lists.clone();
    top.extend(inner.into_iter().map(Some));
    objects(&top)
}

fn constraints(
    pattern: &Value,
    prefix: &mut Vec<String>,
    out: &mut Vec<(Vec<String>, Vec<Value>)>,
) {
    if let Value::Object(m) = pattern {
        for (k, v) in m {
            prefix.push(k.clone());
            match v {
                Value::Array(lits) => out.push((prefix.clone(), lits.clone())),
                _ => constraints(v, prefix, out),
            }
            prefix.pop();
        }
    }
}

fn scalar_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(_) | Value::Object(_), _) | (_, Value::Array(_) | Value::Object(_)) => false,
        _ => a == b,
    }
}

pub fn oracle(pattern: &Value, body: &Value) -> bool {
    let mut cs = Vec::new();
    constraints(pattern, &mut Vec::new(), &mut cs);
    satisfies(&cs, body)
}

fn satisfies(cs: &[(Vec<String>, Vec<Value>)], body: &Value) -> bool {
    cs.iter().all(|(path, lits)| {
        let mut at = body;
        for seg in path {
            match at {
                Value::Object(m) => match m.get(seg) {
                    Some(v) => at = v,
                    None => return false,
                },
                _ => return false,
            }
        }
        match at {
            Value::Array(items) => items.iter().any(|c| lits.iter().any(|l| scalar_eq(l, c))),
            v => lits.iter().any(|l| scalar_eq(l, v)),
        }
    })
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub pairs: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<(Value, Value, bool)>,
}

/// Compares the engine against the oracle over the full cross product.
pub fn oracle_sweep() -> OracleReport {
    let bodies = bodies();
    let mut report = OracleReport::default();
    for p in patterns() {
        let compiled = octo::pattern::Pattern::from_value(&p).expect("enumerated pattern is valid");
        let mut cs = Vec::new();
        constraints(&p, &mut Vec::new(), &mut cs);
        for b in &bodies {
            report.pairs += 1;
            let got = compiled.matches(b);
            if got != satisfies(&cs, b) {
                report.mismatches += 1;
                report
                    .first_mismatch
                    .get_or_insert((p.clone(), b.clone(), got));
            }
        }
    }
    report
}

pub const LISTING_1: &str = r#"{"value":{"event_type":["created"]}}"#;

/// The Listing 1 filter against created and deleted bodies, as record
/// envelopes. Returns (engine, oracle) verdict pairs.
pub fn listing_1_cases() -> Vec<(bool, bool)> {
    let pattern = octo::pattern::Pattern::parse(LISTING_1).unwrap();
    let pv: Value = serde_json::from_str(LISTING_1).unwrap();
    ["created", "deleted"]
        .iter()
        .map(|kind| {
            let rec = Record {
                offset: 0,
                timestamp: 0,
                key: b"k".to_vec(),
                value: serde_json::to_vec(&json!({"event_type": kind, "path": "/d/f1"})).unwrap(),
            };
            let env = octo::pattern::record_envelope(&rec).unwrap();
            (pattern.matches(&env), oracle(&pv, &env))
        })
        .collect()
}
