use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TriggerError;
use crate::pattern::{filter_criteria_value, parse_filter_criteria, Pattern};

pub const HARD_MAX_RECORDS: u32 = 10_000;
pub const HARD_MAX_BYTES: u64 = 6_291_456;
pub const MIN_EVAL_INTERVAL_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionRef {
    Webhook {
        url: String,
        #[serde(default)]
        headers: BTreeMap<String, String>,
        #[serde(default = "default_webhook_timeout")]
        timeout_ms: u64,
    },
    Local {
        name: String,
    },
}

fn default_webhook_timeout() -> u64 {
    10_000
}

mod filters_serde {
    use super::*;

    pub fn serialize<S: serde::Serializer>(v: &[Pattern], s: S) -> Result<S::Ok, S::Error> {
        filter_criteria_value(v).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<Pattern>, D::Error> {
        let v = Value::deserialize(d)?;
        if v.is_null() {
            return Ok(Vec::new());
        }
        parse_filter_criteria(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    #[serde(default)]
    pub trigger_id: String,
    pub topic: String,
    /// Filter criteria; OR-ed. Empty means deliver everything.
    #[serde(default, alias = "pattern", with = "filters_serde")]
    pub filters: Vec<Pattern>,
    pub action: ActionRef,
    #[serde(default = "d_batch_records")]
    pub batch_max_records: u32,
    #[serde(default = "d_batch_bytes")]
    pub batch_max_bytes: u64,
    #[serde(default = "d_window")]
    pub batch_window_ms: u64,
    #[serde(default = "d_eval")]
    pub eval_interval_ms: u64,
    #[serde(default = "d_target")]
    pub target_lag_per_worker: u64,
    #[serde(default = "d_one")]
    pub min_concurrency: u32,
    /// Defaults to the topic's partition count.
    #[serde(default)]
    pub max_concurrency: Option<u32>,
    #[serde(default = "d_retries")]
    pub retry_max_attempts: u32,
    #[serde(default)]
    pub owner: String,
    /// Start the consumer group at the earliest retained offset instead of
    /// the latest.
    #[serde(default)]
    pub start_earliest: bool,
}

fn d_batch_records() -> u32 {
    100
}
fn d_batch_bytes() -> u64 {
    HARD_MAX_BYTES
}
fn d_window() -> u64 {
    500
}
fn d_eval() -> u64 {
    60_000
}
fn d_target() -> u64 {
    1000
}
fn d_one() -> u32 {
    1
}
fn d_retries() -> u32 {
    3
}

impl TriggerSpec {
    pub fn new(topic: &str, action: ActionRef) -> Self {
        Self {
            trigger_id: String::new(),
            topic: topic.to_string(),
            filters: Vec::new(),
            action,
            batch_max_records: d_batch_records(),
            batch_max_bytes: d_batch_bytes(),
            batch_window_ms: d_window(),
            eval_interval_ms: d_eval(),
            target_lag_per_worker: d_target(),
            min_concurrency: 1,
            max_concurrency: None,
            retry_max_attempts: d_retries(),
            owner: String::new(),
            start_earliest: false,
        }
    }

    pub fn group_id(&self) -> String {
        format!("trigger.{}", self.trigger_id)
    }

    pub fn validate(&self) -> Result<(), TriggerError> {
        if self.batch_max_records == 0 || self.batch_max_records > HARD_MAX_RECORDS {
            return Err(TriggerError::LimitExceeded(format!(
                "batch_max_records must be in [1, {HARD_MAX_RECORDS}], got {}",
                self.batch_max_records
            )));
        }
        if self.batch_max_bytes == 0 || self.batch_max_bytes > HARD_MAX_BYTES {
            return Err(TriggerError::LimitExceeded(format!(
                "batch_max_bytes must be in [1, {HARD_MAX_BYTES}], got {}",
                self.batch_max_bytes
            )));
        }
        let invalid = |m: String| Err(TriggerError::Invalid(m));
        if self.eval_interval_ms < MIN_EVAL_INTERVAL_MS {
            return invalid(format!(
                "eval_interval_ms must be >= {MIN_EVAL_INTERVAL_MS}"
            ));
        }
        if self.target_lag_per_worker == 0 {
            return invalid("target_lag_per_worker must be >= 1".into());
        }
        if self.min_concurrency == 0 {
            return invalid("min_concurrency must be >= 1".into());
        }
        if let Some(max) = self.max_concurrency {
            if max < self.min_concurrency {
                return invalid("max_concurrency must be >= min_concurrency".into());
            }
        }
        if self.retry_max_attempts == 0 {
            return invalid("retry_max_attempts must be >= 1".into());
        }
        if let ActionRef::Webhook { url, .. } = &self.action {
            if !(url.starts_with("http://") || url.starts_with("https://"))
                || url.len() <= "https://".len()
            {
                return Err(TriggerError::BadAction(format!(
                    "webhook url must be absolute http(s): {url:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Partial update accepted by `update_trigger`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerUpdate {
    #[serde(
        default,
        alias = "pattern",
        skip_serializing_if = "Option::is_none",
        with = "opt_filters"
    )]
    pub filters: Option<Vec<Pattern>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_max_records: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_max_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_window_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_interval_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_lag_per_worker: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_concurrency: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_max_attempts: Option<u32>,
}

mod opt_filters {
    use super::*;

    pub fn serialize<S: serde::Serializer>(
        v: &Option<Vec<Pattern>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|p| filter_criteria_value(p)).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<Pattern>>, D::Error> {
        let v = Value::deserialize(d)?;
        if v.is_null() {
            return Ok(None);
        }
        parse_filter_criteria(&v)
            .map(Some)
            .map_err(serde::de::Error::custom)
    }
}

impl TriggerUpdate {
    pub fn apply(&self, spec: &TriggerSpec) -> TriggerSpec {
        let mut s = spec.clone();
        if let Some(f) = &self.filters {
            s.filters = f.clone();
        }
        if let Some(a) = &self.action {
            s.action = a.clone();
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { s.$f = v; })*};
        }
        set!(
            batch_max_records,
            batch_max_bytes,
            batch_window_ms,
            eval_interval_ms,
            target_lag_per_worker,
            min_concurrency,
            retry_max_attempts
        );
        if let Some(m) = self.max_concurrency {
            s.max_concurrency = Some(m);
        }
        s
    }
}

/// Concurrency after one evaluation: the lag-derived target clamped to
/// the allowed range, growing at most 4× per step and shrinking at once.
pub fn rescale(
    current: u32,
    lag: u64,
    target_lag_per_worker: u64,
    min: u32,
    max: u32,
    partitions: u32,
) -> u32 {
    let upper = max.min(partitions).max(min.min(partitions)).max(1);
    let lower = min.min(upper);
    let wanted = lag
        .div_ceil(target_lag_per_worker.max(1))
        .min(u64::from(u32::MAX)) as u32;
    let desired = wanted.clamp(lower, upper);
    if desired > current {
        desired.min(current.max(1).saturating_mul(4))
    } else {
        desired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn scaling_law() {
        assert_eq!(rescale(5, 0, 1000, 1, 16, 16), 1);
        assert_eq!(rescale(3, 128, 1, 1, 128, 128), 12);
        let mut c = 3;
        let mut path = vec![c];
        for _ in 0..4 {
            c = rescale(c, 128, 1, 1, 128, 128);
            path.push(c);
        }
        assert_eq!(path, vec![3, 12, 48, 128, 128]);
        let mut c = 1;
        let mut path = vec![c];
        for _ in 0..3 {
            c = rescale(c, 1000, 1, 1, 16, 16);
            path.push(c);
        }
        assert_eq!(path, vec![1, 4, 16, 16]);
        // bounded by partitions even when max is larger
        assert_eq!(rescale(16, 10_000, 1, 1, 64, 8), 8);
        assert_eq!(rescale(1, 2500, 1000, 1, 8, 8), 3);
    }

    #[test]
    fn limits() {
        let mut s = TriggerSpec::new("t", ActionRef::Local { name: "x".into() });
        assert!(s.validate().is_ok());
        s.batch_max_records = 20_000;
        assert!(matches!(s.validate(), Err(TriggerError::LimitExceeded(_))));
        s.batch_max_records = 10_000;
        s.batch_max_bytes = HARD_MAX_BYTES + 1;
        assert!(matches!(s.validate(), Err(TriggerError::LimitExceeded(_))));
        s.batch_max_bytes = HARD_MAX_BYTES;
        s.action = ActionRef::Webhook {
            url: "example.org/hook".into(),
            headers: Default::default(),
            timeout_ms: 1,
        };
        assert!(matches!(s.validate(), Err(TriggerError::BadAction(_))));
    }

    #[test]
    fn listing_shaped_json() {
        let v = json!({
            "topic": "fsmon",
            "action": {"kind": "WEBHOOK", "url": "http://127.0.0.1:1/h"},
            "filters": [{"Pattern": "{\"value\":\n {\"event_type\": [\"created\"]}}"}]
        });
        let s: TriggerSpec = serde_json::from_value(v).unwrap();
        assert_eq!(s.filters.len(), 1);
        assert_eq!(s.batch_max_records, 100);
        assert_eq!(s.eval_interval_ms, 60_000);
        let back: TriggerSpec = serde_json::from_value(serde_json::to_value(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        let bad = json!({"topic": "t", "action": {"kind": "LOCAL", "name": "a"}, "filters": [{"Pattern": "{\"a\": 1}"}]});
        let err = serde_json::from_value::<TriggerSpec>(bad)
            .unwrap_err()
            .to_string();
        assert!(err.contains("invalid leaf at `a`"), "{err}");
    }
}
