use std::time::{Duration, Instant};

use octo::broker::{Acks, Cluster, ClusterConfig, DataKey, Principal, TopicSpec};
use octo::client::{Consumer, ConsumerConfig, Outcome, Producer, ProducerConfig, StartPosition};
use octo::protocol::BrokerServer;

struct Env {
    cluster: Cluster,
    servers: Vec<BrokerServer>,
    _dir: tempfile::TempDir,
}

impl Env {
    fn new(brokers: u32) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ClusterConfig::new(dir.path(), brokers);
        cfg.heartbeat_interval = Duration::ZERO;
        let cluster = Cluster::open(cfg).unwrap();
        let servers = (0..brokers)
            .map(|b| {
                BrokerServer::start(cluster.clone(), b, "127.0.0.1:0".parse().unwrap()).unwrap()
            })
            .collect();
        Self {
            cluster,
            servers,
            _dir: dir,
        }
    }

    fn addrs(&self) -> Vec<String> {
        self.servers.iter().map(|s| s.addr().to_string()).collect()
    }

    fn key(&self, identity: &str) -> (String, Vec<u8>) {
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

    fn halt(&self, b: u32) {
        self.cluster.halt_broker(b).unwrap();
        self.servers[b as usize].close_connections();
    }
}

#[test]
fn produce_then_consume_in_order() {
    let env = Env::new(2);
    env.cluster
        .create_topic(TopicSpec::new("t", 2, 2), "alice")
        .unwrap();
    let (k, s) = env.key("alice");
    let producer = Producer::new(env.addrs(), &k, &s, ProducerConfig::default()).unwrap();
    let handles: Vec<_> = (0..200)
        .map(|i| {
            producer
                .send(
                    "t",
                    format!("k{}", i % 7).as_bytes(),
                    format!("v{i}").as_bytes(),
                )
                .unwrap()
        })
        .collect();
    assert_eq!(producer.flush(Duration::from_secs(10)), 0);
    for h in &handles {
        let r = h.wait();
        assert_eq!(r.outcome, Outcome::Ok, "{r:?}");
        assert!(r.offset >= 0);
        assert_eq!(r.attempts, 1);
    }

    let cfg = ConsumerConfig {
        group_id: Some("g".into()),
        start: StartPosition::Earliest,
        auto_commit_interval_ms: 0,
        ..Default::default()
    };
    let mut c = Consumer::subscribe_all(env.addrs(), &k, &s, "t", cfg.clone()).unwrap();
    let mut got = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while got.len() < 200 && Instant::now() < deadline {
        got.extend(c.poll(500, Duration::from_millis(200)).unwrap());
    }
    assert_eq!(got.len(), 200);
    for p in 0..2 {
        let offs: Vec<u64> = got
            .iter()
            .filter(|r| r.partition == p)
            .map(|r| r.record.offset)
            .collect();
        assert_eq!(offs, (0..offs.len() as u64).collect::<Vec<_>>());
    }
    c.commit_sync().unwrap();
    drop(c);
    let mut again = Consumer::subscribe_all(env.addrs(), &k, &s, "t", cfg).unwrap();
    assert!(again
        .poll(500, Duration::from_millis(100))
        .unwrap()
        .is_empty());
}

#[test]
fn failover_redirects_without_exhaustion() {
    let env = Env::new(2);
    env.cluster
        .create_topic(TopicSpec::new("t", 1, 2), "alice")
        .unwrap();
    let (k, s) = env.key("alice");
    let producer = Producer::new(env.addrs(), &k, &s, ProducerConfig::default()).unwrap();
    let leader = env.cluster.partition_info("t", 0).unwrap().leader.unwrap();
    let mut handles = Vec::new();
    for i in 0..300 {
        if i == 150 {
            env.halt(leader);
        }
        handles.push(producer.send("t", b"", format!("{i}").as_bytes()).unwrap());
        if i % 20 == 0 {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    assert_eq!(producer.flush(Duration::from_secs(30)), 0);
    let exhausted = handles
        .iter()
        .filter(|h| h.wait().outcome != Outcome::Ok)
        .count();
    assert_eq!(exhausted, 0);
    assert_ne!(
        env.cluster.partition_info("t", 0).unwrap().leader,
        Some(leader)
    );
}

#[test]
fn unroutable_broker_exhausts_with_backoff() {
    let cfg = ProducerConfig {
        linger_ms: 0,
        ..Default::default()
    };
    let producer = Producer::new(vec!["127.0.0.1:1".into()], "k", &[0; 32], cfg).unwrap();
    let h = producer.send("t", b"", b"x").unwrap();
    let r = h.wait();
    assert_eq!(r.outcome, Outcome::Exhausted);
    assert_eq!(r.attempts, 6);
    // 100+200+400+800+1600 ms, each ±20%
    assert!(
        r.latency_ms >= 3100.0 * 0.8 && r.latency_ms <= 3100.0 * 1.2 + 500.0,
        "{}",
        r.latency_ms
    );
}

#[test]
fn flush_reports_unresolved_when_halted() {
    let env = Env::new(1);
    env.cluster
        .create_topic(TopicSpec::new("t", 1, 1), "alice")
        .unwrap();
    let (k, s) = env.key("alice");
    let producer = Producer::new(env.addrs(), &k, &s, ProducerConfig::default()).unwrap();
    assert_eq!(producer.flush(Duration::from_millis(10)), 0);
    producer.send("t", b"", b"warm").unwrap().wait();
    env.halt(0);
    for _ in 0..10 {
        producer.send("t", b"", b"x").unwrap();
    }
    assert!(producer.flush(Duration::from_millis(300)) > 0);
}

#[test]
fn acks_zero_resolves_on_transmit() {
    let env = Env::new(1);
    env.cluster
        .create_topic(TopicSpec::new("t", 1, 1), "alice")
        .unwrap();
    let (k, s) = env.key("alice");
    let cfg = ProducerConfig {
        acks: Acks::None,
        ..Default::default()
    };
    let producer = Producer::new(env.addrs(), &k, &s, cfg).unwrap();
    let hs: Vec<_> = (0..50)
        .map(|i| producer.send("t", b"", &[i]).unwrap())
        .collect();
    producer.flush(Duration::from_secs(5));
    assert!(hs.iter().all(|h| h.wait().offset == -1 && h.wait().is_ok()));
    let deadline = Instant::now() + Duration::from_secs(5);
    while env.cluster.offset_range("t", 0).unwrap().1 < 50 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    let recs = env
        .cluster
        .fetch(&Principal::Internal, "t", 0, 0, 100, 1 << 20)
        .unwrap();
    assert_eq!(recs.len(), 50);
}
