use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};

use crate::broker::Record;

/// One record handed to an action.
#[derive(Debug, Clone)]
pub struct BatchEvent {
    pub offset: u64,
    pub timestamp_ms: i64,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    /// Decoded body when the value is a JSON document.
    pub decoded: Option<Value>,
}

impl BatchEvent {
    pub fn from_record(r: Record) -> Self {
        let decoded = serde_json::from_slice(&r.value).ok();
        Self {
            offset: r.offset,
            timestamp_ms: r.timestamp,
            key: r.key,
            value: r.value,
            decoded,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.key.len() + self.value.len()
    }

    pub fn to_json(&self) -> Value {
        let value = match &self.decoded {
            Some(v) => v.clone(),
            None => Value::from(B64.encode(&self.value)),
        };
        json!({
            "offset": self.offset,
            "timestamp_ms": self.timestamp_ms,
            "key_b64": B64.encode(&self.key),
            "value": value,
            "structured": self.decoded.is_some(),
        })
    }
}

/// A batch of records from one partition, in offset order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch_id: u64,
    pub trigger_id: String,
    pub topic: String,
    pub partition: u32,
    pub events: Vec<BatchEvent>,
    pub attempt: u32,
}

impl Batch {
    pub fn first_offset(&self) -> u64 {
        self.events.first().map_or(0, |e| e.offset)
    }

    pub fn last_offset(&self) -> u64 {
        self.events.last().map_or(0, |e| e.offset)
    }

    pub fn payload_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.payload_len() as u64).sum()
    }

    pub fn delivery_id(&self) -> String {
        format!(
            "{}:{}:{}",
            self.trigger_id,
            self.partition,
            self.first_offset()
        )
    }

    /// The JSON body posted to webhooks.
    pub fn envelope(&self) -> Value {
        json!({
            "trigger_id": self.trigger_id,
            "topic": self.topic,
            "partition": self.partition,
            "events": self.events.iter().map(BatchEvent::to_json).collect::<Vec<_>>(),
            "attempt": self.attempt,
        })
    }
}

/// In-process action. `Err` counts as a failed attempt.
pub trait LocalAction: Send + Sync {
    fn invoke(&self, batch: &Batch) -> Result<(), String>;
}

impl<F> LocalAction for F
where
    F: Fn(&Batch) -> Result<(), String> + Send + Sync,
{
    fn invoke(&self, batch: &Batch) -> Result<(), String> {
        self(batch)
    }
}

pub const DELIVERY_HEADER: &str = "X-Octo-Delivery";

pub(crate) fn post_webhook(
    url: &str,
    headers: &BTreeMap<String, String>,
    timeout_ms: u64,
    batch: &Batch,
) -> Result<(), String> {
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(timeout_ms.max(1)))
        .build();
    let mut req = agent.post(url).set("Content-Type", "application/json");
    for (k, v) in headers {
        req = req.set(k, v);
    }
    req = req.set(DELIVERY_HEADER, &batch.delivery_id());
    match req.send_string(&batch.envelope().to_string()) {
        Ok(resp) if (200..300).contains(&resp.status()) => Ok(()),
        Ok(resp) => Err(format!("webhook returned {}", resp.status())),
        Err(ureq::Error::Status(code, _)) => Err(format!("webhook returned {code}")),
        Err(e) => Err(format!("webhook transport error: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_shape() {
        let b = Batch {
            batch_id: 1,
            trigger_id: "t1".into(),
            topic: "fs".into(),
            partition: 2,
            events: vec![
                BatchEvent::from_record(Record {
                    offset: 7,
                    timestamp: 1000,
                    key: b"k".to_vec(),
                    value: br#"{"a":1}"#.to_vec(),
                }),
                BatchEvent::from_record(Record {
                    offset: 8,
                    timestamp: 1001,
                    key: Vec::new(),
                    value: vec![0xff, 0x00],
                }),
            ],
            attempt: 1,
        };
        let env = b.envelope();
        assert_eq!(env["events"][0]["value"], json!({"a": 1}));
        assert_eq!(env["events"][0]["key_b64"], "aw==");
        assert_eq!(env["events"][1]["value"], "/wA=");
        assert_eq!(env["events"][1]["structured"], false);
        assert_eq!(b.delivery_id(), "t1:2:7");
    }
}
