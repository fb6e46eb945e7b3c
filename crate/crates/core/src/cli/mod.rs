//! `octo` command-line client. Every subcommand is a thin wrapper over a
//! control-plane route or the data-plane SDK.

mod output;
mod signal;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::aggregator::{
    replay_file, Aggregator, AggregatorConfig, DirWatcher, ProducerForwarder, SocketSource,
    SourceConfig,
};
use crate::bench::{run_experiment, BenchError, ExperimentSpec};
use crate::broker::Acks;
use crate::client::{
    ApiError, ClientError, Consumer, ConsumerConfig, ControlClient, Credentials, Outcome, Producer,
    ProducerConfig, StartPosition,
};
use crate::control::hash_password_random_salt;
use crate::demo::{run_scenario, DemoOptions, SCENARIOS};
use crate::fabric::{Fabric, FabricConfig};
use crate::protocol::Status;

use output::{print_table, Out};

#[derive(Debug, Parser)]
#[command(name = "octo", version, about = "Event fabric command-line client")]
pub struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Profile file (defaults to $OCTO_PROFILE, then ~/.octo/profile).
    #[arg(long, global = true)]
    pub profile: Option<PathBuf>,
    /// Control-plane URL, overriding the profile.
    #[arg(long, global = true)]
    pub url: Option<String>,
    /// Bearer token, overriding the profile (e.g. the operator token).
    #[arg(long, global = true, env = "OCTO_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exchange identity credentials for a bearer token and cache it.
    Login(LoginArgs),
    /// Data keys for the wire protocol.
    #[command(subcommand)]
    Key(KeyCmd),
    #[command(subcommand)]
    Topic(TopicCmd),
    /// Publish stdin lines, one record per line.
    Produce(ProduceArgs),
    /// Print records until the idle timeout.
    Consume(ConsumeArgs),
    #[command(subcommand)]
    Trigger(TriggerCmd),
    /// Edge aggregator.
    #[command(subcommand)]
    Agg(AggCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Run a scripted end-to-end scenario.
    Demo(DemoArgs),
    /// Run brokers, trigger engine and control plane in this process.
    Serve(ServeArgs),
    /// Print a salted password hash for an identities seed file.
    Passwd(PasswdArgs),
}

#[derive(Debug, Args)]
pub struct LoginArgs {
    #[arg(long)]
    pub identity: String,
    #[arg(long, env = "OCTO_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
    /// Read the password from the first line of stdin.
    #[arg(long)]
    pub password_stdin: bool,
}

#[derive(Debug, Subcommand)]
pub enum KeyCmd {
    /// Issue a data key and store it in the profile.
    Create,
}

#[derive(Debug, Subcommand)]
pub enum TopicCmd {
    Create {
        name: String,
        #[arg(long)]
        partitions: Option<u32>,
        #[arg(long)]
        replication_factor: Option<u32>,
        #[arg(long)]
        retention_ms: Option<i64>,
    },
    List,
    Describe {
        name: String,
    },
    Config {
        name: String,
        #[arg(long)]
        retention_ms: Option<i64>,
    },
    /// Grow a topic to `count` partitions.
    Partitions {
        name: String,
        count: u32,
    },
    Grant {
        name: String,
        identity: String,
        /// Comma-separated: read, write, describe.
        #[arg(long, value_delimiter = ',', required = true)]
        perm: Vec<String>,
        #[arg(long)]
        revoke: bool,
    },
}

#[derive(Debug, Args)]
pub struct ProduceArgs {
    pub topic: String,
    #[arg(long, default_value = "")]
    pub key: String,
    /// 0, 1 or all.
    #[arg(long, default_value = "1")]
    pub acks: Acks,
    #[arg(long)]
    pub partition: Option<u32>,
    #[arg(long, default_value_t = 5)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct ConsumeArgs {
    pub topic: String,
    /// earliest, latest, or a timestamp in ms.
    #[arg(long, default_value = "latest")]
    pub from: StartPosition,
    /// Resume from and commit to this consumer group.
    #[arg(long)]
    pub group: Option<String>,
    /// Partitions to read; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub partition: Vec<u32>,
    #[arg(long)]
    pub max_records: Option<usize>,
    /// Exit after this long without new records.
    #[arg(long, default_value_t = 2000)]
    pub idle_timeout_ms: u64,
}

#[derive(Debug, Args, Default)]
pub struct TriggerTuning {
    #[arg(long)]
    pub batch_max_records: Option<u32>,
    #[arg(long)]
    pub batch_max_bytes: Option<u64>,
    #[arg(long)]
    pub batch_window_ms: Option<u64>,
    #[arg(long)]
    pub eval_interval_ms: Option<u64>,
    #[arg(long)]
    pub target_lag_per_worker: Option<u64>,
    #[arg(long)]
    pub min_concurrency: Option<u32>,
    #[arg(long)]
    pub max_concurrency: Option<u32>,
    #[arg(long)]
    pub retry_max_attempts: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum TriggerCmd {
    Register {
        #[arg(long)]
        topic: String,
        /// A pattern document or a `[{"Pattern": ...}]` list.
        #[arg(long)]
        pattern_file: Option<PathBuf>,
        #[arg(long, conflicts_with = "local", required_unless_present = "local")]
        webhook: Option<String>,
        /// Name of an action registered inside the serving process.
        #[arg(long)]
        local: Option<String>,
        /// Extra webhook header, `Name: value`.
        #[arg(long)]
        header: Vec<String>,
        #[arg(long)]
        start_earliest: bool,
        #[command(flatten)]
        tuning: TriggerTuning,
    },
    List,
    Describe {
        id: String,
    },
    Update {
        id: String,
        #[arg(long)]
        pattern_file: Option<PathBuf>,
        #[arg(long)]
        webhook: Option<String>,
        #[command(flatten)]
        tuning: TriggerTuning,
    },
    Delete {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum AggCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many seconds (watch and socket sources otherwise
        /// run until interrupted).
        #[arg(long)]
        duration_secs: Option<f64>,
        /// How long to keep retrying spooled batches on exit.
        #[arg(long, default_value_t = 10_000)]
        drain_timeout_ms: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "bench/results")]
        results: PathBuf,
        #[arg(long)]
        rounds: Option<u32>,
    },
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// One of data-automation, task-telemetry, workflow-monitor.
    pub name: String,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub brokers: Option<u32>,
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub broker_listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub identities: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PasswdArgs {
    #[arg(long, env = "OCTO_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
}

/// Failure with its process exit code: 2 auth, 3 not found, 4 invalid,
/// 5 server or transport, 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Api(#[from] ApiError),
    #[error("{0}")]
    Client(#[from] ClientError),
    #[error("{0}")]
    Auth(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Server(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Api(e) => match e.status {
                401 | 403 => 2,
                404 => 3,
                400..=499 => 4,
                _ => 5,
            },
            CliError::Client(e) => match e.status() {
                Some(Status::Unauthorized) => 2,
                Some(Status::UnknownTopic | Status::UnknownPartition) => 3,
                Some(Status::Malformed | Status::OffsetOutOfRange) => 4,
                Some(_) => 5,
                None if matches!(e, ClientError::Config(_)) => 4,
                None => 5,
            },
            CliError::Auth(_) => 2,
            CliError::NotFound(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Server(_) => 5,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(format!("{e:#}"))
    }
}

fn status_error(s: Status, detail: impl std::fmt::Display) -> CliError {
    CliError::Client(ClientError::Status(s)).with_detail(detail)
}

impl CliError {
    fn with_detail(self, detail: impl std::fmt::Display) -> Self {
        match self.exit_code() {
            2 => CliError::Auth(format!("{}: {detail}", self)),
            3 => CliError::NotFound(format!("{}: {detail}", self)),
            4 => CliError::Invalid(format!("{}: {detail}", self)),
            5 => CliError::Server(format!("{}: {detail}", self)),
            _ => CliError::Failed(format!("{}: {detail}", self)),
        }
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 4 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut out = Out::new(stdout.lock(), cli.json);
    match run(&cli, &mut out) {
        Ok(code) => code,
        Err(e) => {
            out.flush();
            if cli.json {
                let body = match &e {
                    CliError::Api(a) => {
                        json!({"error": a.code, "detail": a.detail, "status": a.status})
                    }
                    other => json!({"error": other.to_string(), "exit_code": other.exit_code()}),
                };
                eprintln!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    path: PathBuf,
    profile: Credentials,
}

impl Ctx<'_> {
    fn control_url(&self) -> Result<String, CliError> {
        self.cli
            .url
            .clone()
            .or_else(|| Some(self.profile.control_url.clone()).filter(|u| !u.is_empty()))
            .ok_or_else(|| {
                CliError::Invalid("no control URL: pass --url or run `octo login --url ...`".into())
            })
    }

    fn api(&self) -> Result<ControlClient, CliError> {
        let client = ControlClient::new(&self.control_url()?);
        match self
            .cli
            .token
            .clone()
            .or_else(|| self.profile.token.clone())
        {
            Some(t) => Ok(client.with_token(t)),
            None => Err(CliError::Auth(
                "not logged in: run `octo login` first".into(),
            )),
        }
    }

    fn data_key(&self) -> Result<(Vec<String>, String, Vec<u8>), CliError> {
        let p = &self.profile;
        if p.key_id.is_empty() || p.secret.is_empty() {
            return Err(CliError::Auth(
                "no data key in profile: run `octo key create` first".into(),
            ));
        }
        if p.broker_addrs.is_empty() {
            return Err(CliError::Invalid("profile has no broker_addrs".into()));
        }
        Ok((p.broker_addrs.clone(), p.key_id.clone(), p.secret.clone()))
    }

    fn save(&self) -> Result<(), CliError> {
        self.profile.save(&self.path).map_err(CliError::from)
    }
}

fn run<W: Write>(cli: &Cli, out: &mut Out<W>) -> Result<i32, CliError> {
    let path = cli
        .profile
        .clone()
        .unwrap_or_else(Credentials::default_path);
    let profile = Credentials::load_or_default(&path)?;
    if !cli.json && profile.format.as_deref() == Some("json") {
        out.json = true;
    }
    let mut ctx = Ctx { cli, path, profile };
    match &cli.command {
        Command::Login(a) => login(&mut ctx, a, out),
        Command::Key(KeyCmd::Create) => key_create(&mut ctx, out),
        Command::Topic(t) => topic(&ctx, t, out),
        Command::Produce(a) => produce(&ctx, a, out),
        Command::Consume(a) => consume(&ctx, a, out),
        Command::Trigger(t) => trigger(&ctx, t, out),
        Command::Agg(AggCmd::Run {
            config,
            duration_secs,
            drain_timeout_ms,
        }) => agg_run(&ctx, config, *duration_secs, *drain_timeout_ms, out),
        Command::Bench(BenchCmd::Run {
            spec,
            results,
            rounds,
        }) => bench_run(spec, results, *rounds, out),
        Command::Demo(a) => demo(a, out),
        Command::Serve(a) => serve(a, out),
        Command::Passwd(a) => {
            let pw = match &a.password {
                Some(p) => p.clone(),
                None => read_line_stdin()?,
            };
            out.line(hash_password_random_salt(&pw));
            Ok(0)
        }
    }
}

fn read_line_stdin() -> Result<String, CliError> {
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line)?;
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

fn login<W: Write>(ctx: &mut Ctx, a: &LoginArgs, out: &mut Out<W>) -> Result<i32, CliError> {
    let url = ctx.control_url()?;
    let password = match (&a.password, a.password_stdin) {
        (_, true) => read_line_stdin()?,
        (Some(p), false) => p.clone(),
        (None, false) => {
            return Err(CliError::Invalid(
                "pass --password, OCTO_PASSWORD or --password-stdin".into(),
            ))
        }
    };
    let mut api = ControlClient::new(&url);
    let body = api.login(&a.identity, &password)?;
    ctx.profile.control_url = url;
    ctx.profile.token = api.token().map(str::to_string);
    ctx.save()?;
    out.emit(
        &json!({"identity_id": a.identity, "expires_in": body["expires_in"], "profile": ctx.path}),
        |o| {
            o.line(format!(
                "logged in as {}; token saved to {}",
                a.identity,
                ctx.path.display()
            ))
        },
    );
    Ok(0)
}

fn key_create<W: Write>(ctx: &mut Ctx, out: &mut Out<W>) -> Result<i32, CliError> {
    let v = ctx.api()?.create_key()?;
    let key_id = v["key_id"].as_str().unwrap_or_default().to_string();
    let secret = hex::decode(v["secret"].as_str().unwrap_or_default())
        .map_err(|e| CliError::Server(format!("bad secret in response: {e}")))?;
    ctx.profile.key_id = key_id.clone();
    ctx.profile.secret = secret;
    if let Some(b) = v["brokers"].as_array() {
        ctx.profile.broker_addrs = b
            .iter()
            .filter_map(|s| s.as_str().map(str::to_string))
            .collect();
    }
    ctx.save()?;
    // The one place a secret is printed.
    out.emit(&v, |o| {
        o.line(format!("key_id: {key_id}"));
        o.line(format!(
            "secret: {}",
            v["secret"].as_str().unwrap_or_default()
        ));
        o.line(format!("saved to {}", ctx.path.display()));
    });
    Ok(0)
}

fn topic<W: Write>(ctx: &Ctx, cmd: &TopicCmd, out: &mut Out<W>) -> Result<i32, CliError> {
    let api = ctx.api()?;
    match cmd {
        TopicCmd::Create {
            name,
            partitions,
            replication_factor,
            retention_ms,
        } => {
            let mut body = json!({});
            if let Some(p) = partitions {
                body["partitions"] = json!(p);
            }
            if let Some(r) = replication_factor {
                body["replication_factor"] = json!(r);
            }
            if let Some(r) = retention_ms {
                body["retention_ms"] = json!(r);
            }
            let v = api.create_topic(name, &body)?;
            out.emit(&v, |o| o.line(output::topic_summary(&v)));
        }
        TopicCmd::List => {
            let v = api.list_topics()?;
            out.emit(&v, |o| {
                let rows: Vec<Vec<String>> = v
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|n| vec![n.as_str().unwrap_or_default().to_string()])
                    .collect();
                print_table(o, &["TOPIC"], &rows);
            });
        }
        TopicCmd::Describe { name } => {
            let v = api.describe_topic(name)?;
            out.emit(&v, |o| output::describe_topic(o, &v));
        }
        TopicCmd::Config { name, retention_ms } => {
            let mut body = json!({});
            if let Some(r) = retention_ms {
                body["retention_ms"] = json!(r);
            }
            let v = api.configure_topic(name, &body)?;
            out.emit(&v, |o| o.line(output::topic_summary(&v)));
        }
        TopicCmd::Partitions { name, count } => {
            let v = api.set_partitions(name, *count)?;
            out.emit(&v, |o| o.line(output::topic_summary(&v)));
        }
        TopicCmd::Grant {
            name,
            identity,
            perm,
            revoke,
        } => {
            let perms: Vec<&str> = perm.iter().map(String::as_str).collect();
            let v = api.grant(name, identity, &perms, *revoke)?;
            out.emit(&v, |o| {
                o.line(format!(
                    "{} {} on {name} {} {identity}",
                    if *revoke { "revoked" } else { "granted" },
                    perm.join(","),
                    if *revoke { "from" } else { "to" }
                ))
            });
        }
    }
    Ok(0)
}

fn produce<W: Write>(ctx: &Ctx, a: &ProduceArgs, out: &mut Out<W>) -> Result<i32, CliError> {
    let (brokers, key_id, secret) = ctx.data_key()?;
    let producer = Producer::new(
        brokers,
        &key_id,
        &secret,
        ProducerConfig {
            acks: a.acks,
            retries: a.retries,
            ..ProducerConfig::default()
        },
    )?;
    let stdin = std::io::stdin();
    let mut pending = Vec::new();
    let mut sent = 0;
    for line in stdin.lock().lines() {
        let line = line?;
        let d = producer.send_to(&a.topic, a.partition, a.key.as_bytes(), line.as_bytes())?;
        pending.push(d);
        // Bound what is outstanding so huge inputs stream.
        if pending.len() >= 1000 {
            sent += report(&mut pending, out)?;
        }
    }
    sent += report(&mut pending, out)?;
    if !out.json {
        out.line(format!(
            "produced {sent} records to {} (acks={})",
            a.topic, a.acks
        ));
    }
    Ok(0)
}

/// Waits for every delivery; fails on the first non-OK outcome.
fn report<W: Write>(
    pending: &mut Vec<crate::client::Delivery>,
    out: &mut Out<W>,
) -> Result<usize, CliError> {
    let mut ok = 0;
    for d in pending.drain(..) {
        let r = d.wait();
        match r.outcome {
            Outcome::Ok => {
                ok += 1;
                if out.json {
                    out.line(
                        json!({"topic": r.topic, "partition": r.partition, "offset": r.offset})
                            .to_string(),
                    );
                }
            }
            Outcome::Failed(s) => return Err(status_error(s, format!("producing to {}", r.topic))),
            other => {
                return Err(CliError::Server(format!(
                    "delivery to {} failed: {other:?}",
                    r.topic
                )))
            }
        }
    }
    Ok(ok)
}

fn consume<W: Write>(ctx: &Ctx, a: &ConsumeArgs, out: &mut Out<W>) -> Result<i32, CliError> {
    let (brokers, key_id, secret) = ctx.data_key()?;
    let config = ConsumerConfig {
        group_id: a.group.clone(),
        start: a.from,
        auto_commit_interval_ms: 0,
        ..ConsumerConfig::default()
    };
    let mut c = if a.partition.is_empty() {
        Consumer::subscribe_all(brokers, &key_id, &secret, &a.topic, config)?
    } else {
        Consumer::new(
            brokers,
            &key_id,
            &secret,
            &a.topic,
            a.partition.clone(),
            config,
        )?
    };
    let idle = Duration::from_millis(a.idle_timeout_ms);
    let limit = a.max_records.unwrap_or(usize::MAX);
    let mut last = Instant::now();
    let mut count = 0usize;
    while count < limit && last.elapsed() < idle {
        let batch = c.poll(
            (limit - count).min(500),
            Duration::from_millis(100).min(idle),
        )?;
        if !batch.is_empty() {
            last = Instant::now();
        }
        for r in batch {
            count += 1;
            if out.json {
                out.line(
                    json!({
                        "partition": r.partition,
                        "offset": r.record.offset,
                        "timestamp": r.record.timestamp,
                        "key": String::from_utf8_lossy(&r.record.key),
                        "value": String::from_utf8_lossy(&r.record.value),
                    })
                    .to_string(),
                );
            } else {
                out.line(String::from_utf8_lossy(&r.record.value).into_owned());
            }
        }
        out.flush();
    }
    if a.group.is_some() {
        c.commit_sync()?;
    }
    Ok(0)
}

/// Pattern files hold one pattern document or a full filter list.
fn read_pattern_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}: not JSON: {e}", path.display())))?;
    Ok(match v {
        Value::Array(_) => v,
        Value::Object(ref m) if m.contains_key("Filters") => m["Filters"].clone(),
        other => json!([{ "Pattern": other.to_string() }]),
    })
}

fn tuning_fields(t: &TriggerTuning, body: &mut Value) {
    let fields = [
        ("batch_max_records", t.batch_max_records.map(u64::from)),
        ("batch_max_bytes", t.batch_max_bytes),
        ("batch_window_ms", t.batch_window_ms),
        ("eval_interval_ms", t.eval_interval_ms),
        ("target_lag_per_worker", t.target_lag_per_worker),
        ("min_concurrency", t.min_concurrency.map(u64::from)),
        ("max_concurrency", t.max_concurrency.map(u64::from)),
        ("retry_max_attempts", t.retry_max_attempts.map(u64::from)),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            body[k] = json!(v);
        }
    }
}

fn webhook_action(url: &str, headers: &[String]) -> Result<Value, CliError> {
    let mut h = serde_json::Map::new();
    for raw in headers {
        let (k, v) = raw
            .split_once(':')
            .ok_or_else(|| CliError::Invalid(format!("header {raw:?} is not `Name: value`")))?;
        h.insert(k.trim().to_string(), json!(v.trim()));
    }
    Ok(json!({"kind": "WEBHOOK", "url": url, "headers": h}))
}

fn trigger<W: Write>(ctx: &Ctx, cmd: &TriggerCmd, out: &mut Out<W>) -> Result<i32, CliError> {
    let api = ctx.api()?;
    match cmd {
        TriggerCmd::Register {
            topic,
            pattern_file,
            webhook,
            local,
            header,
            start_earliest,
            tuning,
        } => {
            let action = match (webhook, local) {
                (Some(url), _) => webhook_action(url, header)?,
                (None, Some(name)) => json!({"kind": "LOCAL", "name": name}),
                (None, None) => return Err(CliError::Invalid("pass --webhook or --local".into())),
            };
            let mut body =
                json!({"topic": topic, "action": action, "start_earliest": start_earliest});
            if let Some(p) = pattern_file {
                body["pattern"] = read_pattern_file(p)?;
            }
            tuning_fields(tuning, &mut body);
            let v = api.register_trigger(&body)?;
            out.emit(&v, |o| {
                o.line(v["trigger_id"].as_str().unwrap_or_default().to_string())
            });
        }
        TriggerCmd::List => {
            let v = api.list_triggers()?;
            out.emit(&v, |o| output::trigger_table(o, &v));
        }
        TriggerCmd::Describe { id } => {
            let (status, v) = api.call("GET", &format!("/trigger/{id}"), None)?;
            if !(200..300).contains(&status) {
                return Err(ApiError {
                    status,
                    code: v["error"].as_str().unwrap_or("ERROR").into(),
                    detail: v["detail"].as_str().unwrap_or_default().into(),
                }
                .into());
            }
            out.emit(&v, |o| {
                o.line(serde_json::to_string_pretty(&v).unwrap_or_default())
            });
        }
        TriggerCmd::Update {
            id,
            pattern_file,
            webhook,
            tuning,
        } => {
            let mut body = json!({});
            if let Some(p) = pattern_file {
                body["pattern"] = read_pattern_file(p)?;
            }
            if let Some(url) = webhook {
                body["action"] = webhook_action(url, &[])?;
            }
            tuning_fields(tuning, &mut body);
            let v = api.update_trigger(id, &body)?;
            out.emit(&v, |o| o.line(format!("updated trigger {id}")));
        }
        TriggerCmd::Delete { id } => {
            let v = api.delete_trigger(id)?;
            out.emit(&v, |o| o.line(format!("deleted trigger {id}")));
        }
    }
    Ok(0)
}

fn agg_run<W: Write>(
    ctx: &Ctx,
    config: &Path,
    duration_secs: Option<f64>,
    drain_timeout_ms: u64,
    out: &mut Out<W>,
) -> Result<i32, CliError> {
    let cfg =
        AggregatorConfig::from_file(config).map_err(|e| CliError::Invalid(format!("{e:#}")))?;
    let source_cfg = cfg
        .source
        .clone()
        .ok_or_else(|| CliError::Invalid("aggregator config needs a [source] section".into()))?;
    let fwd = ProducerForwarder::from_config(cfg.fabric.as_ref(), &ctx.profile)
        .map_err(|e| CliError::Invalid(format!("{e:#}")))?;
    let agg = Aggregator::start(cfg, Box::new(fwd))?;
    let stop = signal::install();
    let deadline = duration_secs.map(|s| Instant::now() + Duration::from_secs_f64(s));
    let wait = |stop: &std::sync::atomic::AtomicBool| {
        while !stop.load(Ordering::Acquire) && deadline.map_or(true, |d| Instant::now() < d) {
            std::thread::sleep(Duration::from_millis(50));
        }
    };
    match source_cfg {
        SourceConfig::Replay { path } => {
            let (acc, dup, filt) = replay_file(&agg, &path)?;
            log::info!(
                "replayed {}: {acc} accepted, {dup} duplicate, {filt} filtered",
                path.display()
            );
        }
        SourceConfig::Dir {
            path,
            poll_ms,
            duplicate_factor,
        } => {
            let watcher = DirWatcher::new(&path, duplicate_factor)?;
            let agg2 = std::sync::Arc::clone(&agg);
            let runner = std::thread::spawn(move || {
                watcher.run(&agg2, Duration::from_millis(poll_ms), stop)
            });
            wait(stop);
            stop.store(true, Ordering::Release);
            runner
                .join()
                .map_err(|_| CliError::Failed("watcher panicked".into()))??;
        }
        SourceConfig::Socket { path } => {
            let mut s = SocketSource::start(&path, std::sync::Arc::clone(&agg))?;
            wait(stop);
            s.stop();
        }
    }
    let stats = agg.shutdown(Duration::from_millis(drain_timeout_ms));
    let v = serde_json::to_value(&stats).unwrap_or_default();
    out.emit(&v, |o| {
        o.line(format!(
            "ingested {} accepted {} duplicates {} filtered {} malformed {} forwarded {} spool_pending {}",
            stats.ingested,
            stats.accepted,
            stats.duplicates,
            stats.filtered,
            stats.malformed,
            stats.forwarded,
            stats.spool_pending_records
        ))
    });
    Ok(0)
}

fn bench_run<W: Write>(
    spec: &Path,
    results: &Path,
    rounds: Option<u32>,
    out: &mut Out<W>,
) -> Result<i32, CliError> {
    let mut spec =
        ExperimentSpec::from_file(spec).map_err(|e| CliError::Invalid(format!("{e:#}")))?;
    if let Some(r) = rounds {
        spec.rounds = r;
    }
    let result = run_experiment(&spec).map_err(|e| match e {
        BenchError::Invalid(m) => CliError::Invalid(m),
        other => CliError::Failed(format!("{}: {other}", other.code())),
    })?;
    let files = result.write(results)?;
    let v = serde_json::to_value(&result).unwrap_or_default();
    out.emit(&json!({"result": v, "files": files}), |o| {
        for c in &result.checks {
            let tag = match (c.ok, c.gating) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "INFO",
            };
            o.line(format!("{tag} {}: {}", c.name, c.detail));
        }
        for f in &files {
            o.line(format!("wrote {}", f.display()));
        }
    });
    match result.verdict() {
        Ok(()) => Ok(0),
        Err(e) => Err(CliError::Failed(format!("{}: {e}", e.code()))),
    }
}

fn demo<W: Write>(a: &DemoArgs, out: &mut Out<W>) -> Result<i32, CliError> {
    if !SCENARIOS.contains(&a.name.as_str()) {
        return Err(CliError::Invalid(format!(
            "unknown scenario {:?}; choose from {}",
            a.name,
            SCENARIOS.join(", ")
        )));
    }
    let opts = DemoOptions {
        data_dir: a.data_dir.clone(),
        transcript: a.transcript.clone(),
        echo: !out.json,
        seed: a.seed,
    };
    let r = run_scenario(&a.name, &opts)?;
    out.emit(&serde_json::to_value(&r).unwrap_or_default(), |_| {});
    if r.passed {
        Ok(0)
    } else {
        Err(CliError::Failed(format!("scenario {} failed", a.name)))
    }
}

fn serve<W: Write>(a: &ServeArgs, out: &mut Out<W>) -> Result<i32, CliError> {
    let mut cfg = match &a.config {
        Some(p) => FabricConfig::from_file(p).map_err(|e| CliError::Invalid(format!("{e:#}")))?,
        None => {
            let mut c: FabricConfig =
                toml::from_str("").map_err(|e| CliError::Invalid(e.to_string()))?;
            c.apply_env();
            c
        }
    };
    if let Some(d) = &a.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(b) = a.brokers {
        cfg.brokers = b;
    }
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(l) = a.broker_listen {
        cfg.broker_listen = l;
    }
    if let Some(i) = &a.identities {
        cfg.identities = Some(i.clone());
    }
    let stop = signal::install();
    let mut fabric = Fabric::start(cfg).map_err(|e| CliError::Server(format!("{e:#}")))?;
    let info = json!({"control_url": fabric.control_url(), "brokers": fabric.broker_addrs()});
    out.emit(&info, |o| {
        o.line(format!("control plane: {}", fabric.control_url()));
        o.line(format!("brokers: {}", fabric.broker_addrs().join(",")));
    });
    out.flush();
    while !stop.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(100));
    }
    fabric.shutdown();
    Ok(0)
}
