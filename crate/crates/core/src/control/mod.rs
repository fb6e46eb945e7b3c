//! Management API: identities and tokens, data-key issuance, topic
//! provisioning and sharing, and trigger management over HTTP/JSON.

mod identity;
mod server;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::RngCore;
use serde::Deserialize;
use serde_json::{json, Value};

pub use identity::{
    hash_password, hash_password_random_salt, verify_password, IdentityError, IdentityInfo,
    IdentityRegistry, IdentitySeed,
};
pub use server::ControlServer;

use crate::broker::{
    Acks, BrokerError, Cluster, DataKey, Permission, Principal, TopicSpec, AUDIT_TOPIC,
};
use crate::pattern::parse_filter_criteria;
use crate::trigger::{TriggerEngine, TriggerError, TriggerSpec, TriggerUpdate};

pub const DEFAULT_PREFIX: &str = "/api/v1";
pub const DEFAULT_TOKEN_TTL_SECS: u64 = 86_400;
pub const ADMIN_IDENTITY: &str = "admin";

#[derive(Debug, Clone)]
pub struct ControlConfig {
    pub prefix: String,
    pub token_ttl_secs: u64,
    /// Static bearer token with administrative rights.
    pub admin_token: Option<String>,
    pub http_threads: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            prefix: DEFAULT_PREFIX.into(),
            token_ttl_secs: DEFAULT_TOKEN_TTL_SECS,
            admin_token: None,
            http_threads: 4,
        }
    }
}

/// A response ready to serialize: status plus JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn created(body: Value) -> Self {
        Self { status: 201, body }
    }

    fn error(status: u16, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": code, "detail": detail.into()}),
        }
    }
}

type Reply = Result<ApiResponse, ApiResponse>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Caller {
    Admin,
    User(String),
}

impl Caller {
    fn principal(&self) -> Principal {
        match self {
            Caller::Admin => Principal::Internal,
            Caller::User(id) => Principal::identity(id.clone()),
        }
    }

    fn id(&self) -> &str {
        match self {
            Caller::Admin => ADMIN_IDENTITY,
            Caller::User(id) => id,
        }
    }
}

struct State {
    cluster: Cluster,
    engine: TriggerEngine,
    identities: IdentityRegistry,
    tokens: Mutex<HashMap<String, (String, i64)>>,
    config: ControlConfig,
    broker_addrs: Mutex<Vec<String>>,
}

#[derive(Clone)]
pub struct ControlPlane {
    state: Arc<State>,
}

impl std::fmt::Debug for ControlPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlPlane")
            .field("prefix", &self.state.config.prefix)
            .finish()
    }
}

fn random_hex(n: usize) -> String {
    let mut buf = vec![0u8; n];
    rand::thread_rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

fn broker_error(e: BrokerError) -> ApiResponse {
    match e {
        BrokerError::UnknownTopic(t) => {
            ApiResponse::error(404, "UNKNOWN_TOPIC", format!("unknown topic {t:?}"))
        }
        e @ BrokerError::Unauthorized { .. } => {
            ApiResponse::error(403, "UNAUTHORIZED", e.to_string())
        }
        e @ BrokerError::DuplicateTopic(_) => {
            ApiResponse::error(409, "DUPLICATE_TOPIC", e.to_string())
        }
        e @ BrokerError::InvalidName(_) => ApiResponse::error(400, "INVALID_NAME", e.to_string()),
        e @ BrokerError::ReplicationUnsatisfiable { .. } => {
            ApiResponse::error(400, "REPLICATION_UNSATISFIABLE", e.to_string())
        }
        e @ BrokerError::InvalidSpec(_) => ApiResponse::error(400, "INVALID", e.to_string()),
        e => ApiResponse::error(500, "INTERNAL", e.to_string()),
    }
}

fn trigger_error(e: TriggerError) -> ApiResponse {
    let code = e.code();
    let status = match &e {
        TriggerError::Unauthorized(_) => 403,
        TriggerError::UnknownTopic(_) | TriggerError::UnknownTrigger(_) => 404,
        TriggerError::LimitExceeded(_) | TriggerError::BadAction(_) | TriggerError::Invalid(_) => {
            400
        }
        TriggerError::Broker(_) => 500,
    };
    ApiResponse::error(status, code, e.to_string())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiResponse> {
    let text = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        body
    };
    serde_json::from_slice(text)
        .map_err(|e| ApiResponse::error(400, "INVALID", format!("bad request body: {e}")))
}

/// Pattern errors surface with their own code and path.
fn pattern_error(body: &Value) -> Option<ApiResponse> {
    let filters = body.get("filters").or_else(|| body.get("pattern"))?;
    if filters.is_null() {
        return None;
    }
    parse_filter_criteria(filters)
        .err()
        .map(|e| ApiResponse::error(400, e.code(), e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateTopic {
    partitions: Option<u32>,
    replication_factor: Option<u32>,
    retention_ms: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigureTopic {
    retention_ms: Option<i64>,
    replication_factor: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct SetPartitions {
    partitions: u32,
}

#[derive(Debug, Deserialize)]
struct GrantBody {
    identity_id: String,
    permissions: Vec<String>,
    #[serde(default)]
    revoke: bool,
}

#[derive(Debug, Deserialize)]
struct Login {
    identity_id: String,
    password: String,
}

impl ControlPlane {
    pub fn new(cluster: Cluster, engine: TriggerEngine, config: ControlConfig) -> Self {
        Self {
            state: Arc::new(State {
                cluster,
                engine,
                identities: IdentityRegistry::new(),
                tokens: Mutex::new(HashMap::new()),
                config,
                broker_addrs: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn identities(&self) -> &IdentityRegistry {
        &self.state.identities
    }

    pub fn config(&self) -> &ControlConfig {
        &self.state.config
    }

    pub fn cluster(&self) -> &Cluster {
        &self.state.cluster
    }

    /// Broker addresses advertised with newly created keys.
    pub fn set_broker_addrs(&self, addrs: Vec<String>) {
        *self.state.broker_addrs.lock() = addrs;
    }

    /// Issues a bearer token without HTTP, for in-process drivers.
    pub fn issue_token(&self, identity: &str, password: &str) -> Option<String> {
        if !self.state.identities.check_password(identity, password) {
            return None;
        }
        let token = random_hex(32);
        let expiry = self.now_ms() + (self.state.config.token_ttl_secs as i64) * 1000;
        self.state
            .tokens
            .lock()
            .insert(token.clone(), (identity.to_string(), expiry));
        Some(token)
    }

    pub fn serve(&self, addr: std::net::SocketAddr) -> std::io::Result<ControlServer> {
        ControlServer::start(self.clone(), addr)
    }

    fn now_ms(&self) -> i64 {
        self.state.cluster.clock().now_ms()
    }

    fn authenticate(&self, authorization: Option<&str>) -> Result<Caller, ApiResponse> {
        let unauth = |d: &str| ApiResponse::error(401, "UNAUTHENTICATED", d);
        let header = authorization.ok_or_else(|| unauth("missing bearer token"))?;
        let token = header
            .strip_prefix("Bearer ")
            .or_else(|| header.strip_prefix("bearer "))
            .ok_or_else(|| unauth("expected `Authorization: Bearer <token>`"))?
            .trim();
        if let Some(admin) = &self.state.config.admin_token {
            if !admin.is_empty() && token == admin {
                return Ok(Caller::Admin);
            }
        }
        let mut tokens = self.state.tokens.lock();
        match tokens.get(token) {
            Some((id, expiry)) if *expiry > self.now_ms() => Ok(Caller::User(id.clone())),
            Some(_) => {
                tokens.remove(token);
                Err(unauth("token expired"))
            }
            None => Err(unauth("unknown token")),
        }
    }

    /// Routes one request. `path` may include a query string, which is ignored.
    pub fn handle(
        &self,
        method: &str,
        path: &str,
        authorization: Option<&str>,
        body: &[u8],
    ) -> ApiResponse {
        let path = path.split('?').next().unwrap_or("");
        let prefix = self.state.config.prefix.trim_end_matches('/');
        let Some(route) = path.strip_prefix(prefix) else {
            return ApiResponse::error(404, "NOT_FOUND", format!("no route {path}"));
        };
        let segs: Vec<&str> = route.split('/').filter(|s| !s.is_empty()).collect();
        let mutating = method != "GET" || segs.as_slice() == ["create_key"];
        let mut who = String::from("-");
        let reply = self.dispatch(method, &segs, authorization, body, &mut who);
        let resp = reply.unwrap_or_else(|e| e);
        if mutating {
            self.audit(&who, method, path, resp.status);
        }
        resp
    }

    fn dispatch(
        &self,
        method: &str,
        segs: &[&str],
        authz: Option<&str>,
        body: &[u8],
        who: &mut String,
    ) -> Reply {
        if let (["auth", "token"], "POST") = (segs, method) {
            let login: Login = parse_body(body)?;
            *who = login.identity_id.clone();
            return match self.issue_token(&login.identity_id, &login.password) {
                Some(token) => Ok(ApiResponse::ok(json!({
                    "token": token,
                    "expires_in": self.state.config.token_ttl_secs,
                }))),
                None => Err(ApiResponse::error(
                    401,
                    "UNAUTHENTICATED",
                    "bad identity or password",
                )),
            };
        }
        let caller = self.authenticate(authz)?;
        *who = caller.id().to_string();
        match (method, segs) {
            ("GET", ["topics"]) => self.list_topics(&caller),
            ("PUT", ["topic", t]) => self.create_topic(&caller, t, body),
            ("GET", ["topic", t]) => self.describe_topic(&caller, t),
            ("POST", ["topic", t]) => self.configure_topic(&caller, t, body),
            ("POST", ["topic", t, "partitions"]) => self.set_partitions(&caller, t, body),
            ("POST", ["topic", t, "user"]) => self.grant(&caller, t, body),
            ("GET", ["create_key"]) => self.create_key(&caller),
            ("PUT", ["trigger"]) => self.register_trigger(&caller, body),
            ("GET", ["triggers"]) => Ok(ApiResponse::ok(
                serde_json::to_value(self.state.engine.list(&caller.principal()))
                    .expect("serializable"),
            )),
            ("GET", ["trigger", id]) => self.describe_trigger(&caller, id),
            ("POST", ["trigger", id]) => self.update_trigger(&caller, id, body),
            ("DELETE", ["trigger", id]) => {
                self.state
                    .engine
                    .delete(&caller.principal(), id)
                    .map_err(trigger_error)?;
                Ok(ApiResponse::ok(json!({"deleted": id})))
            }
            _ => Err(ApiResponse::error(
                404,
                "NOT_FOUND",
                format!("no route {method} /{}", segs.join("/")),
            )),
        }
    }

    fn audit(&self, who: &str, method: &str, path: &str, status: u16) {
        let entry = json!({
            "ts": self.now_ms(),
            "who": who,
            "what": format!("{method} {path}"),
            "status": status,
            "outcome": if status < 400 { "ok" } else { "error" },
        });
        if let Err(e) = self.state.cluster.append(
            &Principal::Internal,
            AUDIT_TOPIC,
            Some(0),
            who.as_bytes(),
            entry.to_string().as_bytes(),
            Acks::Leader,
        ) {
            log::warn!("audit append failed: {e}");
        }
    }

    fn owned_topic(&self, caller: &Caller, t: &str) -> Result<TopicSpec, ApiResponse> {
        let spec = self.state.cluster.topic(t).ok_or_else(|| {
            ApiResponse::error(404, "UNKNOWN_TOPIC", format!("unknown topic {t:?}"))
        })?;
        match caller {
            Caller::Admin => Ok(spec),
            Caller::User(id) if *id == spec.owner => Ok(spec),
            Caller::User(id) => Err(ApiResponse::error(
                403,
                "UNAUTHORIZED",
                format!("{id} does not own {t:?}"),
            )),
        }
    }

    fn list_topics(&self, caller: &Caller) -> Reply {
        let names: Vec<String> = self
            .state
            .cluster
            .topics()
            .into_iter()
            .filter(|t| match caller {
                Caller::Admin => true,
                Caller::User(id) => t.allows(id, Permission::Describe),
            })
            .map(|t| t.name)
            .collect();
        Ok(ApiResponse::ok(json!(names)))
    }

    fn create_topic(&self, caller: &Caller, t: &str, body: &[u8]) -> Reply {
        let req: CreateTopic = parse_body(body)?;
        if let Some(existing) = self.state.cluster.topic(t) {
            return if existing.owner == caller.id() {
                Ok(ApiResponse::ok(
                    serde_json::to_value(existing).expect("serializable"),
                ))
            } else {
                Err(ApiResponse::error(
                    409,
                    "DUPLICATE_TOPIC",
                    format!("topic {t:?} is owned by another identity"),
                ))
            };
        }
        let brokers = self.state.cluster.broker_count();
        let mut spec = TopicSpec::new(
            t,
            req.partitions.unwrap_or(1),
            req.replication_factor.unwrap_or(brokers.min(2)),
        );
        if let Some(r) = req.retention_ms {
            spec.retention_ms = r;
        }
        match self.state.cluster.create_topic(spec, caller.id()) {
            Ok(spec) => Ok(ApiResponse::created(
                serde_json::to_value(spec).expect("serializable"),
            )),
            // lost a creation race; re-run the idempotency check
            Err(BrokerError::DuplicateTopic(_)) => self.create_topic(caller, t, b""),
            Err(e) => Err(broker_error(e)),
        }
    }

    fn describe_topic(&self, caller: &Caller, t: &str) -> Reply {
        let spec = self
            .state
            .cluster
            .authorize(&caller.principal(), t, Permission::Describe)
            .map_err(broker_error)?;
        let mut v = serde_json::to_value(&spec).expect("serializable");
        let parts: Vec<Value> = (0..spec.partitions)
            .filter_map(|p| self.state.cluster.partition_info(t, p).ok())
            .map(|i| serde_json::to_value(i).expect("serializable"))
            .collect();
        v["partition_info"] = Value::Array(parts);
        Ok(ApiResponse::ok(v))
    }

    fn configure_topic(&self, caller: &Caller, t: &str, body: &[u8]) -> Reply {
        let spec = self.owned_topic(caller, t)?;
        let req: ConfigureTopic = parse_body(body)?;
        if let Some(rf) = req.replication_factor {
            if rf != spec.replication_factor {
                return Err(ApiResponse::error(
                    400,
                    "INVALID",
                    "replication_factor cannot be changed after creation",
                ));
            }
        }
        let spec = match req.retention_ms {
            Some(r) => self
                .state
                .cluster
                .set_retention(t, r)
                .map_err(broker_error)?,
            None => spec,
        };
        Ok(ApiResponse::ok(
            serde_json::to_value(spec).expect("serializable"),
        ))
    }

    fn set_partitions(&self, caller: &Caller, t: &str, body: &[u8]) -> Reply {
        let spec = self.owned_topic(caller, t)?;
        let req: SetPartitions = parse_body(body)?;
        if req.partitions < spec.partitions {
            return Err(ApiResponse::error(
                400,
                "INVALID",
                format!(
                    "partition count may only increase ({} -> {})",
                    spec.partitions, req.partitions
                ),
            ));
        }
        let spec = self
            .state
            .cluster
            .add_partitions(t, req.partitions)
            .map_err(broker_error)?;
        Ok(ApiResponse::ok(
            serde_json::to_value(spec).expect("serializable"),
        ))
    }

    fn grant(&self, caller: &Caller, t: &str, body: &[u8]) -> Reply {
        let spec = self.owned_topic(caller, t)?;
        let req: GrantBody = parse_body(body)?;
        if !self.state.identities.contains(&req.identity_id) && req.identity_id != spec.owner {
            return Err(ApiResponse::error(
                404,
                "UNKNOWN_IDENTITY",
                format!("unknown identity {:?}", req.identity_id),
            ));
        }
        let perms = req
            .permissions
            .iter()
            .map(|p| p.parse::<Permission>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiResponse::error(400, "INVALID", e))?;
        if perms.is_empty() {
            return Err(ApiResponse::error(
                400,
                "INVALID",
                "permissions must be non-empty",
            ));
        }
        if req.revoke && req.identity_id == spec.owner {
            return Err(ApiResponse::error(
                400,
                "INVALID",
                "the owner's grants cannot be revoked",
            ));
        }
        let mut last = spec;
        for p in perms {
            last = self
                .state
                .cluster
                .set_grant(t, &req.identity_id, p, req.revoke)
                .map_err(broker_error)?;
        }
        Ok(ApiResponse::ok(
            serde_json::to_value(last).expect("serializable"),
        ))
    }

    fn create_key(&self, caller: &Caller) -> Reply {
        let mut secret = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut secret);
        let key_id = format!("OK{}", random_hex(10).to_uppercase());
        self.state
            .cluster
            .register_key(DataKey {
                key_id: key_id.clone(),
                identity_id: caller.id().to_string(),
                secret,
                created_at: self.now_ms(),
            })
            .map_err(broker_error)?;
        Ok(ApiResponse::ok(json!({
            "key_id": key_id,
            "secret": hex::encode(secret),
            "identity_id": caller.id(),
            "brokers": *self.state.broker_addrs.lock(),
        })))
    }

    fn register_trigger(&self, caller: &Caller, body: &[u8]) -> Reply {
        let raw: Value = parse_body(body)?;
        if let Some(e) = pattern_error(&raw) {
            return Err(e);
        }
        let spec: TriggerSpec = serde_json::from_value(raw)
            .map_err(|e| ApiResponse::error(400, "INVALID", format!("bad trigger spec: {e}")))?;
        let id = self
            .state
            .engine
            .register(&caller.principal(), spec)
            .map_err(trigger_error)?;
        let status = self.state.engine.get(&id).map_err(trigger_error)?;
        Ok(ApiResponse::created(json!({
            "trigger_id": id,
            "trigger": status,
        })))
    }

    fn describe_trigger(&self, caller: &Caller, id: &str) -> Reply {
        let status = self.state.engine.get(id).map_err(trigger_error)?;
        if let Caller::User(u) = caller {
            if status.spec.owner != *u {
                return Err(ApiResponse::error(
                    403,
                    "UNAUTHORIZED",
                    format!("{u} does not own trigger {id}"),
                ));
            }
        }
        Ok(ApiResponse::ok(
            serde_json::to_value(status).expect("serializable"),
        ))
    }

    fn update_trigger(&self, caller: &Caller, id: &str, body: &[u8]) -> Reply {
        let raw: Value = parse_body(body)?;
        if let Some(e) = pattern_error(&raw) {
            return Err(e);
        }
        let update: TriggerUpdate = serde_json::from_value(raw)
            .map_err(|e| ApiResponse::error(400, "INVALID", format!("bad trigger update: {e}")))?;
        self.state
            .engine
            .update(&caller.principal(), id, &update)
            .map_err(trigger_error)?;
        let status = self.state.engine.get(id).map_err(trigger_error)?;
        Ok(ApiResponse::ok(
            serde_json::to_value(status).expect("serializable"),
        ))
    }
}
