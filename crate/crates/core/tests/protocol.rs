mod common;

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use common::{Env, Wire};
use octo::broker::TopicSpec;
use octo::protocol::codec::{op, Request, ResponseBody, Status, MAX_FRAME};

fn env() -> (Env, String, Vec<u8>) {
    let env = Env::new(2);
    env.cluster
        .create_topic(TopicSpec::new("t", 2, 2), "alice")
        .unwrap();
    let (k, s) = env.key("alice");
    (env, k, s)
}

fn produce(w: &mut Wire, partition: i32, value: &[u8]) -> (Status, i64) {
    let resp = w
        .call(&Request::Produce {
            topic: "t".into(),
            partition,
            acks: 255,
            key: Vec::new(),
            value: value.to_vec(),
        })
        .unwrap();
    match resp.body {
        ResponseBody::Produce { offset, .. } => (resp.status, offset),
        _ => (resp.status, -1),
    }
}

fn closed(w: &mut Wire) -> bool {
    let mut b = [0u8; 1];
    matches!(w.stream.read(&mut b), Ok(0) | Err(_))
}

#[test]
fn codec_roundtrip_all_opcodes() {
    let n = common::codec_roundtrip(20_000).unwrap();
    assert_eq!(n, 20_000);
}

#[test]
fn handshake_accepts_a_valid_key() {
    let (env, k, s) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    let resp = w.auth(&k, &s);
    assert_eq!(resp.status, Status::Ok);
    assert_eq!(
        resp.body,
        ResponseBody::Auth {
            identity: "alice".into()
        }
    );
    let resp = w.call(&Request::Metadata { topic: "t".into() }).unwrap();
    assert_eq!(resp.status, Status::Ok);
    let ResponseBody::Metadata {
        partitions,
        brokers,
    } = resp.body
    else {
        panic!("metadata body expected");
    };
    assert_eq!(partitions.len(), 2);
    assert_eq!(brokers.len(), 2);
}

#[test]
fn handshake_rejects_a_wrong_secret_and_closes() {
    let (env, k, _) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    let resp = w.auth(&k, &[9u8; 32]);
    assert_eq!(resp.status, Status::Unauthorized);
    assert!(closed(&mut w));

    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    assert_eq!(
        w.auth("no-such-key", &[7u8; 32]).status,
        Status::Unauthorized
    );
}

#[test]
fn request_before_auth_is_malformed() {
    let (env, _, _) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    let resp = w.call(&Request::Metadata { topic: "t".into() }).unwrap();
    assert_eq!(resp.status, Status::Malformed);
    assert_eq!(resp.opcode, op::METADATA | op::RESPONSE);
    assert!(closed(&mut w));
}

#[test]
fn oversized_length_is_malformed() {
    let (env, k, s) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    w.auth(&k, &s);
    w.stream
        .write_all(&(MAX_FRAME as u32 + 1).to_be_bytes())
        .unwrap();
    assert_eq!(w.recv().unwrap().status, Status::Malformed);
    assert!(closed(&mut w));
}

#[test]
fn fetch_long_poll_returns_empty_ok() {
    let (env, k, s) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    w.auth(&k, &s);
    let leader = env.cluster.partition_leaders("t").unwrap()[0].unwrap();
    let mut w = if leader == 0 {
        w
    } else {
        let mut x = Wire::connect(env.servers[leader as usize].addr()).unwrap();
        x.auth(&k, &s);
        x
    };
    let started = Instant::now();
    let resp = w
        .call(&Request::Fetch {
            topic: "t".into(),
            partition: 0,
            offset: 0,
            max_records: 10,
            max_bytes: 1 << 20,
        })
        .unwrap();
    assert_eq!(resp.status, Status::Ok);
    assert_eq!(
        resp.body,
        ResponseBody::Fetch {
            records: Vec::new()
        }
    );
    assert!(
        started.elapsed() >= Duration::from_millis(300),
        "fetch did not wait"
    );
}

#[test]
fn follower_redirects_to_leader() {
    let (env, k, s) = env();
    let leader = env.cluster.partition_leaders("t").unwrap()[0].unwrap();
    let follower = 1 - leader;
    let mut w = Wire::connect(env.servers[follower as usize].addr()).unwrap();
    w.auth(&k, &s);
    let resp = w
        .call(&Request::Produce {
            topic: "t".into(),
            partition: 0,
            acks: 1,
            key: Vec::new(),
            value: b"v".to_vec(),
        })
        .unwrap();
    assert_eq!(resp.status, Status::NotLeader);
    let r = resp.redirect.unwrap();
    assert_eq!(r.leader_id, leader as i32);
    assert_eq!(r.addr, env.servers[leader as usize].addr().to_string());
}

#[test]
fn list_offsets_and_committed_offsets() {
    let (env, k, s) = env();
    let leader = env.cluster.partition_leaders("t").unwrap()[1].unwrap();
    let mut w = Wire::connect(env.servers[leader as usize].addr()).unwrap();
    w.auth(&k, &s);
    for i in 0..5 {
        assert_eq!(
            produce(&mut w, 1, format!("v{i}").as_bytes()),
            (Status::Ok, i)
        );
    }
    let list = |w: &mut Wire, target: i64| match w
        .call(&Request::ListOffsets {
            topic: "t".into(),
            partition: 1,
            target,
        })
        .unwrap()
        .body
    {
        ResponseBody::ListOffsets { offset } => offset,
        other => panic!("unexpected {other:?}"),
    };
    assert_eq!(list(&mut w, -2), 0);
    assert_eq!(list(&mut w, -1), 5);
    assert_eq!(list(&mut w, 0), 0);
    assert_eq!(list(&mut w, i64::MAX), 5);

    let committed = |w: &mut Wire| {
        w.call(&Request::FetchCommitted {
            group: "g".into(),
            topic: "t".into(),
            partition: 1,
        })
        .unwrap()
        .body
    };
    assert_eq!(
        committed(&mut w),
        ResponseBody::FetchCommitted { offset: -1 }
    );
    let resp = w
        .call(&Request::Commit {
            group: "g".into(),
            topic: "t".into(),
            partition: 1,
            offset: 3,
        })
        .unwrap();
    assert_eq!(resp.status, Status::Ok);
    assert_eq!(
        committed(&mut w),
        ResponseBody::FetchCommitted { offset: 3 }
    );
}

#[test]
fn unknown_topic_and_partition() {
    let (env, k, s) = env();
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    w.auth(&k, &s);
    let resp = w
        .call(&Request::Metadata {
            topic: "nope".into(),
        })
        .unwrap();
    assert_eq!(resp.status, Status::UnknownTopic);
    assert_eq!(produce(&mut w, 9, b"v").0, Status::UnknownPartition);
}

#[test]
fn socket_fuzz_does_not_crash_the_broker() {
    let (env, k, s) = env();
    let before = common::broker_panics();
    let stats = common::fuzz(
        env.servers[0].addr(),
        &k,
        &s,
        "t",
        Duration::from_secs(3),
        11,
    );
    assert!(stats.connections > 10, "{stats:?}");
    assert_eq!(common::broker_panics(), before);
    let mut w = Wire::connect(env.servers[0].addr()).unwrap();
    assert_eq!(w.auth(&k, &s).status, Status::Ok);
}
