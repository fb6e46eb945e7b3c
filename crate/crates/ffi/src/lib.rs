//! C ABI over the octo client SDK, pattern matcher and an embeddable
//! in-process fabric.
//!
//! Every function returns an [`OctoStatus`]. On failure a description is
//! kept per thread and can be read with [`octo_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use octo::broker::{Acks, DataKey, TopicSpec};
use octo::client::{
    ClientError, Consumer, ConsumerConfig, Outcome, Producer, ProducerConfig, StartPosition,
};
use octo::pattern::Pattern;
use octo::protocol::Status;
use octo::{Fabric, FabricConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OctoStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Unauthorized = 3,
    NotFound = 4,
    Transport = 5,
    Timeout = 6,
    Failed = 7,
    Panic = 8,
}

pub struct OctoPattern {
    inner: Pattern,
}

pub struct OctoProducer {
    inner: Producer,
}

pub struct OctoConsumer {
    inner: Consumer,
    pending: std::collections::VecDeque<octo::client::ConsumedRecord>,
}

pub struct OctoFabric {
    inner: Fabric,
}

/// Result of a blocking send.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OctoDelivery {
    /// -1 when the broker did not report one (acks=0).
    pub partition: i32,
    /// -1 when sent with acks=0.
    pub offset: i64,
    pub latency_ms: f64,
}

/// One consumed record. `key` and `value` are owned by the record; release
/// them with [`octo_record_clear`].
#[repr(C)]
#[derive(Debug)]
pub struct OctoRecord {
    pub partition: u32,
    pub offset: u64,
    pub timestamp_ms: i64,
    pub key: *mut u8,
    pub key_len: usize,
    pub value: *mut u8,
    pub value_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(OctoStatus, String);

impl From<ClientError> for Fail {
    fn from(e: ClientError) -> Self {
        let code = match e.status() {
            Some(Status::Unauthorized) => OctoStatus::Unauthorized,
            Some(Status::UnknownTopic | Status::UnknownPartition) => OctoStatus::NotFound,
            Some(_) => OctoStatus::Failed,
            None => match e {
                ClientError::Config(_) => OctoStatus::InvalidArgument,
                _ => OctoStatus::Transport,
            },
        };
        Fail(code, e.to_string())
    }
}

fn invalid(msg: impl std::fmt::Display) -> Fail {
    Fail(OctoStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OctoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OctoStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside octo");
            OctoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(OctoStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, name: &str) -> Result<&'a [u8], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(OctoStatus::NullArgument, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(OctoStatus::NullArgument, format!("{name} is NULL")))
}

fn brokers(csv: &str) -> Vec<String> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn octo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from an octo function documented as returning an owned
/// string, and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn octo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Compiles a pattern document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn octo_pattern_compile(
    json: *const c_char,
    out: *mut *mut OctoPattern,
) -> OctoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = Pattern::parse(str_arg(json, "json")?).map_err(invalid)?;
        *out = Box::into_raw(Box::new(OctoPattern { inner: p }));
        Ok(())
    })
}

/// Tests a JSON body against a compiled pattern.
///
/// # Safety
/// `pattern` must come from [`octo_pattern_compile`]; `body` must be a
/// NUL-terminated string and `matched` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn octo_pattern_matches(
    pattern: *const OctoPattern,
    body: *const c_char,
    matched: *mut bool,
) -> OctoStatus {
    guard(|| {
        let p = pattern
            .as_ref()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "pattern is NULL".into()))?;
        let matched = out_arg(matched, "matched")?;
        let v: serde_json::Value = serde_json::from_str(str_arg(body, "body")?)
            .map_err(|e| invalid(format!("body is not JSON: {e}")))?;
        *matched = p.inner.matches(&v);
        Ok(())
    })
}

/// # Safety
/// `pattern` must come from [`octo_pattern_compile`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn octo_pattern_free(pattern: *mut OctoPattern) {
    if !pattern.is_null() {
        drop(Box::from_raw(pattern));
    }
}

/// Connects a producer. `acks` is 0, 1, or -1 for all in-sync replicas.
///
/// # Safety
/// String arguments must be NUL-terminated, `secret` must point to
/// `secret_len` bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn octo_producer_new(
    brokers_csv: *const c_char,
    key_id: *const c_char,
    secret: *const u8,
    secret_len: usize,
    acks: i32,
    out: *mut *mut OctoProducer,
) -> OctoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let acks = match acks {
            0 => Acks::None,
            1 => Acks::Leader,
            -1 => Acks::All,
            other => return Err(invalid(format!("acks must be 0, 1 or -1, got {other}"))),
        };
        let p = Producer::new(
            brokers(str_arg(brokers_csv, "brokers_csv")?),
            str_arg(key_id, "key_id")?,
            bytes_arg(secret, secret_len, "secret")?,
            ProducerConfig {
                acks,
                ..ProducerConfig::default()
            },
        )?;
        *out = Box::into_raw(Box::new(OctoProducer { inner: p }));
        Ok(())
    })
}

/// Sends one record and waits up to `timeout_ms` for its delivery report.
///
/// # Safety
/// `producer` must be live, `topic` NUL-terminated, `key`/`value` valid for
/// their lengths, and `report` valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn octo_producer_send(
    producer: *const OctoProducer,
    topic: *const c_char,
    key: *const u8,
    key_len: usize,
    value: *const u8,
    value_len: usize,
    timeout_ms: u32,
    report: *mut OctoDelivery,
) -> OctoStatus {
    guard(|| {
        let p = producer
            .as_ref()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "producer is NULL".into()))?;
        let d = p.inner.send(
            str_arg(topic, "topic")?,
            bytes_arg(key, key_len, "key")?,
            bytes_arg(value, value_len, "value")?,
        )?;
        let r = d
            .wait_timeout(Duration::from_millis(timeout_ms.into()))
            .ok_or_else(|| {
                Fail(
                    OctoStatus::Timeout,
                    "no delivery report before timeout".into(),
                )
            })?;
        match r.outcome {
            Outcome::Ok => {}
            Outcome::Failed(s) => return Err(ClientError::Status(s).into()),
            other => {
                return Err(Fail(
                    OctoStatus::Transport,
                    format!("delivery failed: {other:?}"),
                ))
            }
        }
        if let Some(out) = report.as_mut() {
            *out = OctoDelivery {
                partition: r.partition,
                offset: r.offset,
                latency_ms: r.latency_ms,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `producer` must come from [`octo_producer_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn octo_producer_free(producer: *mut OctoProducer) {
    if !producer.is_null() {
        drop(Box::from_raw(producer));
    }
}

/// Subscribes to every partition of `topic`. `group` may be NULL. `start`
/// is 0 for earliest, 1 for latest.
///
/// # Safety
/// String arguments must be NUL-terminated (except a NULL `group`),
/// `secret` valid for `secret_len` bytes and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn octo_consumer_new(
    brokers_csv: *const c_char,
    key_id: *const c_char,
    secret: *const u8,
    secret_len: usize,
    topic: *const c_char,
    group: *const c_char,
    start: i32,
    out: *mut *mut OctoConsumer,
) -> OctoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let group = if group.is_null() {
            None
        } else {
            Some(str_arg(group, "group")?.to_string())
        };
        let start = match start {
            0 => StartPosition::Earliest,
            1 => StartPosition::Latest,
            other => return Err(invalid(format!("start must be 0 or 1, got {other}"))),
        };
        let c = Consumer::subscribe_all(
            brokers(str_arg(brokers_csv, "brokers_csv")?),
            str_arg(key_id, "key_id")?,
            bytes_arg(secret, secret_len, "secret")?,
            str_arg(topic, "topic")?,
            ConsumerConfig {
                group_id: group,
                start,
                ..ConsumerConfig::default()
            },
        )?;
        *out = Box::into_raw(Box::new(OctoConsumer {
            inner: c,
            pending: Default::default(),
        }));
        Ok(())
    })
}

/// Fills `record` with the next record, waiting up to `timeout_ms`. Sets
/// `*got` to false when nothing arrived.
///
/// # Safety
/// `consumer` must be live and used from one thread at a time; `record` and
/// `got` must be valid.
#[no_mangle]
pub unsafe extern "C" fn octo_consumer_next(
    consumer: *mut OctoConsumer,
    timeout_ms: u32,
    record: *mut OctoRecord,
    got: *mut bool,
) -> OctoStatus {
    guard(|| {
        let c = consumer
            .as_mut()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "consumer is NULL".into()))?;
        let got = out_arg(got, "got")?;
        let record = out_arg(record, "record")?;
        *got = false;
        if c.pending.is_empty() {
            c.pending.extend(
                c.inner
                    .poll(500, Duration::from_millis(timeout_ms.into()))?,
            );
        }
        if let Some(r) = c.pending.pop_front() {
            let (key, key_len) = leak(r.record.key);
            let (value, value_len) = leak(r.record.value);
            *record = OctoRecord {
                partition: r.partition,
                offset: r.record.offset,
                timestamp_ms: r.record.timestamp,
                key,
                key_len,
                value,
                value_len,
            };
            *got = true;
        }
        Ok(())
    })
}

fn leak(v: Vec<u8>) -> (*mut u8, usize) {
    if v.is_empty() {
        return (ptr::null_mut(), 0);
    }
    let b = v.into_boxed_slice();
    let len = b.len();
    (Box::into_raw(b) as *mut u8, len)
}

/// Releases the buffers of a record filled by [`octo_consumer_next`].
///
/// # Safety
/// `record` must be valid; its buffers must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn octo_record_clear(record: *mut OctoRecord) {
    let Some(r) = record.as_mut() else { return };
    for (p, len) in [
        (&mut r.key, &mut r.key_len),
        (&mut r.value, &mut r.value_len),
    ] {
        if !p.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(*p, *len)));
        }
        *p = ptr::null_mut();
        *len = 0;
    }
}

/// Commits the positions of everything returned so far.
///
/// # Safety
/// `consumer` must be live.
#[no_mangle]
pub unsafe extern "C" fn octo_consumer_commit(consumer: *mut OctoConsumer) -> OctoStatus {
    guard(|| {
        let c = consumer
            .as_mut()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "consumer is NULL".into()))?;
        c.inner.commit_sync()?;
        Ok(())
    })
}

/// # Safety
/// `consumer` must come from [`octo_consumer_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn octo_consumer_free(consumer: *mut OctoConsumer) {
    if !consumer.is_null() {
        drop(Box::from_raw(consumer));
    }
}

/// Starts brokers, trigger engine and control plane on ephemeral local
/// ports, keeping data under `data_dir`.
///
/// # Safety
/// `data_dir` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_start(
    data_dir: *const c_char,
    brokers: u32,
    out: *mut *mut OctoFabric,
) -> OctoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if brokers == 0 {
            return Err(invalid("brokers must be >= 1"));
        }
        let f = Fabric::start(FabricConfig::local(str_arg(data_dir, "data_dir")?, brokers))
            .map_err(|e| Fail(OctoStatus::Failed, format!("{e:#}")))?;
        *out = Box::into_raw(Box::new(OctoFabric { inner: f }));
        Ok(())
    })
}

/// Comma-separated broker addresses; free with [`octo_string_free`].
///
/// # Safety
/// `fabric` must be live.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_broker_addrs(fabric: *const OctoFabric) -> *mut c_char {
    match fabric.as_ref() {
        Some(f) => into_c_string(f.inner.broker_addrs().join(",")),
        None => ptr::null_mut(),
    }
}

/// Control-plane base URL; free with [`octo_string_free`].
///
/// # Safety
/// `fabric` must be live.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_control_url(fabric: *const OctoFabric) -> *mut c_char {
    match fabric.as_ref() {
        Some(f) => into_c_string(f.inner.control_url()),
        None => ptr::null_mut(),
    }
}

/// Adds a login identity.
///
/// # Safety
/// `fabric` must be live and the strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_add_identity(
    fabric: *const OctoFabric,
    identity: *const c_char,
    password: *const c_char,
) -> OctoStatus {
    guard(|| {
        let f = fabric
            .as_ref()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "fabric is NULL".into()))?;
        let id = str_arg(identity, "identity")?;
        f.inner
            .control()
            .identities()
            .add(id, id, str_arg(password, "password")?)
            .map_err(invalid)
    })
}

/// Registers a 32-byte data key for `identity`.
///
/// # Safety
/// `fabric` must be live, strings NUL-terminated and `secret` 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_register_key(
    fabric: *const OctoFabric,
    identity: *const c_char,
    key_id: *const c_char,
    secret: *const u8,
) -> OctoStatus {
    guard(|| {
        let f = fabric
            .as_ref()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "fabric is NULL".into()))?;
        let mut s = [0u8; 32];
        s.copy_from_slice(bytes_arg(secret, 32, "secret")?);
        let cluster = f.inner.cluster();
        cluster
            .register_key(DataKey {
                key_id: str_arg(key_id, "key_id")?.to_string(),
                identity_id: str_arg(identity, "identity")?.to_string(),
                secret: s,
                created_at: cluster.clock().now_ms(),
            })
            .map_err(|e| Fail(OctoStatus::Failed, e.to_string()))
    })
}

/// Creates a topic owned by `owner`.
///
/// # Safety
/// `fabric` must be live and strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_create_topic(
    fabric: *const OctoFabric,
    name: *const c_char,
    partitions: u32,
    replication_factor: u32,
    owner: *const c_char,
) -> OctoStatus {
    guard(|| {
        let f = fabric
            .as_ref()
            .ok_or_else(|| Fail(OctoStatus::NullArgument, "fabric is NULL".into()))?;
        f.inner
            .cluster()
            .create_topic(
                TopicSpec::new(str_arg(name, "name")?, partitions, replication_factor),
                str_arg(owner, "owner")?,
            )
            .map(drop)
            .map_err(invalid)
    })
}

/// Stops the fabric and releases the handle.
///
/// # Safety
/// `fabric` must come from [`octo_fabric_start`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn octo_fabric_stop(fabric: *mut OctoFabric) {
    if !fabric.is_null() {
        let mut f = Box::from_raw(fabric);
        f.inner.shutdown();
    }
}
