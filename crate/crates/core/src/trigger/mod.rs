//! Trigger engine: per-trigger consumer groups that filter, batch and
//! deliver records to webhook or in-process actions, with lag-driven
//! worker autoscaling, retries and a dead-letter topic.

mod action;
mod runtime;
mod spec;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

pub use action::{Batch, BatchEvent, LocalAction, DELIVERY_HEADER};
pub use runtime::{CrashPoint, InvocationOutcome, InvocationRecord, TimelinePoint, TriggerStats};
pub use spec::{
    rescale, ActionRef, TriggerSpec, TriggerUpdate, HARD_MAX_BYTES, HARD_MAX_RECORDS,
    MIN_EVAL_INTERVAL_MS,
};

use crate::broker::{BrokerError, Cluster, Permission, Principal};
use runtime::Runtime;

#[derive(Debug, thiserror::Error)]
pub enum TriggerError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("limit exceeded: {0}")]
    LimitExceeded(String),
    #[error("bad action: {0}")]
    BadAction(String),
    #[error("unknown trigger {0:?}")]
    UnknownTrigger(String),
    #[error("invalid trigger: {0}")]
    Invalid(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

impl TriggerError {
    pub fn code(&self) -> &'static str {
        match self {
            TriggerError::Unauthorized(_) => "UNAUTHORIZED",
            TriggerError::UnknownTopic(_) => "UNKNOWN_TOPIC",
            TriggerError::LimitExceeded(_) => "LIMIT_EXCEEDED",
            TriggerError::BadAction(_) => "BAD_ACTION",
            TriggerError::UnknownTrigger(_) => "UNKNOWN_TRIGGER",
            TriggerError::Invalid(_) => "INVALID",
            TriggerError::Broker(_) => "BROKER_ERROR",
        }
    }
}

/// Snapshot returned by `list` and `get`.
#[derive(Debug, Clone, Serialize)]
pub struct TriggerStatus {
    pub spec: TriggerSpec,
    pub concurrency: u32,
    pub lag: u64,
    pub stats: TriggerStats,
}

pub(crate) struct EngineInner {
    pub(crate) cluster: Cluster,
    triggers: RwLock<BTreeMap<String, Arc<Runtime>>>,
    actions: RwLock<HashMap<String, Arc<dyn LocalAction>>>,
    pub(crate) retry_base: Mutex<Duration>,
    pub(crate) next_batch_id: AtomicU64,
    store: Option<PathBuf>,
    admin_lock: Mutex<()>,
}

impl EngineInner {
    pub(crate) fn local_action(&self, name: &str) -> Option<Arc<dyn LocalAction>> {
        self.actions.read().get(name).cloned()
    }
}

#[derive(Clone)]
pub struct TriggerEngine {
    inner: Arc<EngineInner>,
}

impl std::fmt::Debug for TriggerEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriggerEngine")
            .field("triggers", &self.inner.triggers.read().len())
            .finish()
    }
}

impl TriggerEngine {
    pub fn new(cluster: Cluster) -> Self {
        Self::build(cluster, None)
    }

    /// Engine that persists trigger specs to `path` so `resume` can restart
    /// them after a process restart.
    pub fn with_store(cluster: Cluster, path: impl Into<PathBuf>) -> Self {
        Self::build(cluster, Some(path.into()))
    }

    fn build(cluster: Cluster, store: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(EngineInner {
                cluster,
                triggers: RwLock::new(BTreeMap::new()),
                actions: RwLock::new(HashMap::new()),
                retry_base: Mutex::new(Duration::from_secs(1)),
                next_batch_id: AtomicU64::new(0),
                store,
                admin_lock: Mutex::new(()),
            }),
        }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.inner.cluster
    }

    /// Base delay of the retry schedule (doubling per attempt).
    pub fn set_retry_base(&self, base: Duration) {
        *self.inner.retry_base.lock() = base;
    }

    pub fn register_local_action(&self, name: &str, action: impl LocalAction + 'static) {
        self.inner
            .actions
            .write()
            .insert(name.to_string(), Arc::new(action));
    }

    /// Restarts persisted triggers. Local actions must be registered first.
    pub fn resume(&self) -> Result<usize, TriggerError> {
        let Some(path) = &self.inner.store else {
            return Ok(0);
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(BrokerError::Io(e).into()),
        };
        let specs: Vec<TriggerSpec> = serde_json::from_str(&text)
            .map_err(|e| TriggerError::Invalid(format!("trigger store: {e}")))?;
        let _g = self.inner.admin_lock.lock();
        let mut n = 0;
        for spec in specs {
            if self.inner.triggers.read().contains_key(&spec.trigger_id) {
                continue;
            }
            let Some(topic) = self.inner.cluster.topic(&spec.topic) else {
                log::warn!(
                    "trigger {}: topic {} is gone; not resumed",
                    spec.trigger_id,
                    spec.topic
                );
                continue;
            };
            let rt = Runtime::start(&self.inner, spec, topic.partitions);
            self.inner.triggers.write().insert(rt.id.clone(), rt);
            n += 1;
        }
        Ok(n)
    }

    pub fn register(
        &self,
        caller: &Principal,
        mut spec: TriggerSpec,
    ) -> Result<String, TriggerError> {
        if let Principal::Identity(id) = caller {
            spec.owner = id.clone();
        } else if spec.owner.is_empty() {
            spec.owner = "admin".into();
        }
        spec.validate()?;
        let topic = self
            .inner
            .cluster
            .topic(&spec.topic)
            .ok_or_else(|| TriggerError::UnknownTopic(spec.topic.clone()))?;
        self.check_read(caller, &spec.topic)?;
        self.check_action(&spec.action)?;

        let _g = self.inner.admin_lock.lock();
        spec.trigger_id = uuid::Uuid::new_v4().simple().to_string();
        let cluster = &self.inner.cluster;
        cluster.ensure_sibling_topic(&topic, &format!("{}.dlq", spec.topic))?;
        let group = spec.group_id();
        for p in 0..topic.partitions {
            let (start, _) = cluster.offset_range(&spec.topic, p)?;
            let at = if spec.start_earliest {
                start
            } else {
                cluster.partition_info(&spec.topic, p)?.high_watermark
            };
            cluster.commit_offset(&Principal::Internal, &group, &spec.topic, p, at)?;
        }
        let id = spec.trigger_id.clone();
        let rt = Runtime::start(&self.inner, spec, topic.partitions);
        self.inner.triggers.write().insert(id.clone(), rt);
        self.persist();
        log::info!("registered trigger {id}");
        Ok(id)
    }

    pub fn update(
        &self,
        caller: &Principal,
        id: &str,
        update: &TriggerUpdate,
    ) -> Result<TriggerSpec, TriggerError> {
        let rt = self.runtime(id)?;
        let current = rt.spec();
        self.check_owner(caller, &current)?;
        let next = update.apply(&current);
        next.validate()?;
        self.check_action(&next.action)?;
        rt.replace_spec(next.clone());
        self.persist();
        Ok(next)
    }

    /// Stops workers. Group offsets and the dead-letter topic are kept.
    pub fn delete(&self, caller: &Principal, id: &str) -> Result<(), TriggerError> {
        let rt = self.runtime(id)?;
        self.check_owner(caller, &rt.spec())?;
        self.inner.triggers.write().remove(id);
        rt.shutdown();
        self.persist();
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<TriggerStatus, TriggerError> {
        Ok(status(&self.runtime(id)?))
    }

    /// Triggers visible to `caller`: its own, or all for internal callers.
    pub fn list(&self, caller: &Principal) -> Vec<TriggerStatus> {
        let rts: Vec<_> = self.inner.triggers.read().values().cloned().collect();
        rts.iter()
            .filter(|rt| match caller {
                Principal::Internal => true,
                Principal::Identity(id) => rt.spec().owner == *id,
            })
            .map(|rt| status(rt))
            .collect()
    }

    pub fn compute_pressure(&self, id: &str) -> Result<u64, TriggerError> {
        Ok(self.runtime(id)?.compute_pressure())
    }

    /// Runs one autoscaler evaluation immediately.
    pub fn evaluate_now(&self, id: &str) -> Result<u32, TriggerError> {
        Ok(self.runtime(id)?.evaluate())
    }

    pub fn timeline(&self, id: &str) -> Result<Vec<TimelinePoint>, TriggerError> {
        Ok(self.runtime(id)?.timeline())
    }

    pub fn invocations(&self, id: &str) -> Result<Vec<InvocationRecord>, TriggerError> {
        Ok(self.runtime(id)?.invocations())
    }

    pub fn stats(&self, id: &str) -> Result<TriggerStats, TriggerError> {
        Ok(self.runtime(id)?.stats())
    }

    /// Makes a worker crash the `after`+1-th time it reaches `point`.
    pub fn inject_crash(
        &self,
        id: &str,
        point: CrashPoint,
        after: u64,
    ) -> Result<(), TriggerError> {
        self.runtime(id)?.inject_crash(point, after);
        Ok(())
    }

    /// Stops every trigger without forgetting persisted specs.
    pub fn shutdown(&self) {
        let rts: Vec<_> = std::mem::take(&mut *self.inner.triggers.write())
            .into_values()
            .collect();
        for rt in rts {
            rt.shutdown();
        }
    }

    fn runtime(&self, id: &str) -> Result<Arc<Runtime>, TriggerError> {
        self.inner
            .triggers
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| TriggerError::UnknownTrigger(id.to_string()))
    }

    fn check_read(&self, caller: &Principal, topic: &str) -> Result<(), TriggerError> {
        match self
            .inner
            .cluster
            .authorize(caller, topic, Permission::Read)
        {
            Ok(_) => Ok(()),
            Err(BrokerError::UnknownTopic(t)) => Err(TriggerError::UnknownTopic(t)),
            Err(e @ BrokerError::Unauthorized { .. }) => {
                Err(TriggerError::Unauthorized(e.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn check_owner(&self, caller: &Principal, spec: &TriggerSpec) -> Result<(), TriggerError> {
        match caller {
            Principal::Internal => Ok(()),
            Principal::Identity(id) if *id == spec.owner => Ok(()),
            Principal::Identity(id) => Err(TriggerError::Unauthorized(format!(
                "{id} does not own trigger {}",
                spec.trigger_id
            ))),
        }
    }

    fn check_action(&self, action: &ActionRef) -> Result<(), TriggerError> {
        if let ActionRef::Local { name } = action {
            if self.inner.local_action(name).is_none() {
                return Err(TriggerError::BadAction(format!(
                    "no local action named {name:?}"
                )));
            }
        }
        Ok(())
    }

    fn persist(&self) {
        let Some(path) = &self.inner.store else {
            return;
        };
        let specs: Vec<TriggerSpec> = self
            .inner
            .triggers
            .read()
            .values()
            .map(|rt| (*rt.spec()).clone())
            .collect();
        let body = serde_json::to_string_pretty(&specs).expect("serializable specs");
        let tmp = path.with_extension("tmp");
        if let Err(e) = std::fs::write(&tmp, body).and_then(|_| std::fs::rename(&tmp, path)) {
            log::warn!("persisting triggers to {} failed: {e}", path.display());
        }
    }
}

fn status(rt: &Arc<Runtime>) -> TriggerStatus {
    TriggerStatus {
        spec: (*rt.spec()).clone(),
        concurrency: rt.concurrency(),
        lag: rt.compute_pressure(),
        stats: rt.stats(),
    }
}
