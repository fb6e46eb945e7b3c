//! One-process deployment: cluster, per-broker wire servers, trigger engine,
//! control plane and its HTTP listener.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use serde::Deserialize;

use crate::broker::{Cluster, ClusterConfig};
use crate::clock::SharedClock;
use crate::control::{
    ControlConfig, ControlPlane, ControlServer, DEFAULT_PREFIX, DEFAULT_TOKEN_TTL_SECS,
};
use crate::protocol::BrokerServer;
use crate::trigger::TriggerEngine;

pub const ADMIN_TOKEN_ENV: &str = "OCTO_ADMIN_TOKEN";
pub const DATA_DIR_ENV: &str = "OCTO_DATA_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricConfig {
    #[serde(default = "d_listen")]
    pub listen: SocketAddr,
    #[serde(default = "d_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "d_brokers")]
    pub brokers: u32,
    /// Broker `i` listens on this port + `i`; port 0 picks ephemeral ports.
    #[serde(default = "d_broker_listen")]
    pub broker_listen: SocketAddr,
    #[serde(default)]
    pub identities: Option<PathBuf>,
    #[serde(default = "d_prefix")]
    pub api_prefix: String,
    #[serde(default = "d_ttl")]
    pub token_ttl_secs: u64,
    #[serde(default)]
    pub admin_token: Option<String>,
    #[serde(default = "d_heartbeat")]
    pub heartbeat_ms: u64,
    #[serde(default = "d_retention_check")]
    pub retention_check_ms: u64,
    /// Per-broker ingress cap in bytes/s; unset means unlimited.
    #[serde(default)]
    pub broker_ingress_bytes_per_sec: Option<u64>,
    #[serde(skip)]
    pub clock: Option<SharedClock>,
}

fn d_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("static addr")
}
fn d_data_dir() -> PathBuf {
    PathBuf::from("octo-data")
}
fn d_brokers() -> u32 {
    3
}
fn d_broker_listen() -> SocketAddr {
    "127.0.0.1:9321".parse().expect("static addr")
}
fn d_prefix() -> String {
    DEFAULT_PREFIX.into()
}
fn d_ttl() -> u64 {
    DEFAULT_TOKEN_TTL_SECS
}
fn d_heartbeat() -> u64 {
    1000
}
fn d_retention_check() -> u64 {
    60_000
}

impl FabricConfig {
    /// Ephemeral ports everywhere; suitable for tests and demos.
    pub fn local(data_dir: impl Into<PathBuf>, brokers: u32) -> Self {
        Self {
            listen: "127.0.0.1:0".parse().expect("static addr"),
            data_dir: data_dir.into(),
            brokers,
            broker_listen: "127.0.0.1:0".parse().expect("static addr"),
            identities: None,
            api_prefix: d_prefix(),
            token_ttl_secs: d_ttl(),
            admin_token: None,
            heartbeat_ms: d_heartbeat(),
            retention_check_ms: d_retention_check(),
            broker_ingress_bytes_per_sec: None,
            clock: None,
        }
    }

    /// Parses a key=value config file, then applies `OCTO_DATA_DIR` and
    /// `OCTO_ADMIN_TOKEN` overrides.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: FabricConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(ids) = &cfg.identities {
            if ids.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.identities = Some(dir.join(ids));
                }
            }
        }
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(d) = std::env::var(DATA_DIR_ENV) {
            if !d.is_empty() {
                self.data_dir = PathBuf::from(d);
            }
        }
        if let Ok(t) = std::env::var(ADMIN_TOKEN_ENV) {
            if !t.is_empty() {
                self.admin_token = Some(t);
            }
        }
    }
}

pub struct Fabric {
    cluster: Cluster,
    servers: Vec<BrokerServer>,
    engine: TriggerEngine,
    control: ControlPlane,
    http: Option<ControlServer>,
    stop: Arc<AtomicBool>,
    janitor: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for Fabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fabric")
            .field("brokers", &self.broker_addrs())
            .field("control", &self.control_url())
            .finish()
    }
}

impl Fabric {
    /// Brings everything up. Persisted triggers whose local actions are not
    /// registered yet are resumed by a later [`Fabric::resume_triggers`].
    pub fn start(config: FabricConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&config.data_dir)
            .with_context(|| format!("creating data dir {}", config.data_dir.display()))?;
        let mut cc = ClusterConfig::new(config.data_dir.join("cluster"), config.brokers);
        cc.heartbeat_interval = Duration::from_millis(config.heartbeat_ms);
        cc.broker_ingress_bytes_per_sec = config.broker_ingress_bytes_per_sec;
        if let Some(clock) = &config.clock {
            cc = cc.with_clock(clock.clone());
        }
        let cluster = Cluster::open(cc).context("opening cluster")?;
        let mut servers = Vec::new();
        for b in 0..config.brokers {
            let mut addr = config.broker_listen;
            if addr.port() != 0 {
                addr.set_port(addr.port() + b as u16);
            }
            let s = BrokerServer::start(cluster.clone(), b, addr)
                .with_context(|| format!("binding broker {b} on {addr}"))?;
            servers.push(s);
        }
        let engine =
            TriggerEngine::with_store(cluster.clone(), config.data_dir.join("triggers.json"));
        let control = ControlPlane::new(
            cluster.clone(),
            engine.clone(),
            ControlConfig {
                prefix: config.api_prefix.clone(),
                token_ttl_secs: config.token_ttl_secs,
                admin_token: config.admin_token.clone(),
                ..ControlConfig::default()
            },
        );
        if let Some(ids) = &config.identities {
            control.identities().load_seed(ids)?;
        }
        control.set_broker_addrs(servers.iter().map(|s| s.addr().to_string()).collect());
        let http = control
            .serve(config.listen)
            .with_context(|| format!("binding control plane on {}", config.listen))?;

        let stop = Arc::new(AtomicBool::new(false));
        let janitor = (config.retention_check_ms > 0).then(|| {
            let (cluster, stop) = (cluster.clone(), Arc::clone(&stop));
            let every = Duration::from_millis(config.retention_check_ms);
            std::thread::Builder::new()
                .name("retention".into())
                .spawn(move || {
                    let mut next = Instant::now() + every;
                    while !stop.load(Ordering::Acquire) {
                        std::thread::sleep(Duration::from_millis(100).min(every));
                        if Instant::now() >= next {
                            next = Instant::now() + every;
                            let now = cluster.clock().now_ms();
                            match cluster.enforce_retention(now) {
                                Ok(0) => {}
                                Ok(n) => log::info!("retention purged {n} records"),
                                Err(e) => log::warn!("retention pass failed: {e}"),
                            }
                        }
                    }
                })
                .expect("spawn retention thread")
        });
        let fabric = Self {
            cluster,
            servers,
            engine,
            control,
            http: Some(http),
            stop,
            janitor,
        };
        fabric.resume_triggers();
        Ok(fabric)
    }

    pub fn resume_triggers(&self) -> usize {
        match self.engine.resume() {
            Ok(n) => n,
            Err(e) => {
                log::warn!("resuming triggers failed: {e}");
                0
            }
        }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn engine(&self) -> &TriggerEngine {
        &self.engine
    }

    pub fn control(&self) -> &ControlPlane {
        &self.control
    }

    pub fn control_url(&self) -> String {
        self.http
            .as_ref()
            .map(ControlServer::url)
            .unwrap_or_default()
    }

    pub fn api_url(&self) -> String {
        format!(
            "{}{}",
            self.control_url(),
            self.control.config().prefix.trim_end_matches('/')
        )
    }

    pub fn broker_addrs(&self) -> Vec<String> {
        self.servers.iter().map(|s| s.addr().to_string()).collect()
    }

    /// Stops a broker: its replicas leave the in-sync sets and its client
    /// connections are dropped.
    pub fn halt_broker(&self, b: u32) -> anyhow::Result<()> {
        self.cluster.halt_broker(b)?;
        if let Some(s) = self.servers.get(b as usize) {
            s.close_connections();
        }
        Ok(())
    }

    pub fn resume_broker(&self, b: u32) -> anyhow::Result<()> {
        self.cluster.resume_broker(b)?;
        Ok(())
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.engine.shutdown();
        if let Some(mut h) = self.http.take() {
            h.stop();
        }
        for s in &mut self.servers {
            s.stop();
        }
        if let Some(j) = self.janitor.take() {
            let _ = j.join();
        }
        self.cluster.shutdown();
    }
}

impl Drop for Fabric {
    fn drop(&mut self) {
        self.shutdown();
    }
}
