//! Consumer group offsets, persisted as records of the internal `__offsets`
//! topic and cached in memory. Replayed on open; compacted by rewriting the
//! live entries at the head and advancing the log start past the old ones.

use std::collections::HashMap;

use parking_lot::{Mutex, RwLock};

pub const OFFSETS_TOPIC: &str = "__offsets";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct GroupKey {
    pub group: String,
    pub topic: String,
    pub partition: u32,
}

impl GroupKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.group.len() + self.topic.len());
        out.extend_from_slice(&(self.group.len() as u16).to_be_bytes());
        out.extend_from_slice(self.group.as_bytes());
        out.extend_from_slice(&(self.topic.len() as u16).to_be_bytes());
        out.extend_from_slice(self.topic.as_bytes());
        out.extend_from_slice(&self.partition.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Option<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Option<&[u8]> {
            let s = buf.get(pos..pos + n)?;
            pos += n;
            Some(s)
        };
        let glen = u16::from_be_bytes(take(2)?.try_into().ok()?) as usize;
        let group = String::from_utf8(take(glen)?.to_vec()).ok()?;
        let tlen = u16::from_be_bytes(take(2)?.try_into().ok()?) as usize;
        let topic = String::from_utf8(take(tlen)?.to_vec()).ok()?;
        let partition = u32::from_be_bytes(take(4)?.try_into().ok()?);
        Some(Self {
            group,
            topic,
            partition,
        })
    }
}

#[derive(Debug)]
pub(crate) struct OffsetStore {
    pub committed: RwLock<HashMap<GroupKey, u64>>,
    /// One lock per `__offsets` partition; serializes commits with compaction.
    pub locks: Vec<Mutex<()>>,
    pub compact_threshold: u64,
}

impl OffsetStore {
    pub fn new(partitions: u32, compact_threshold: u64) -> Self {
        Self {
            committed: RwLock::new(HashMap::new()),
            locks: (0..partitions).map(|_| Mutex::new(())).collect(),
            compact_threshold,
        }
    }

    pub fn partition_for(&self, group: &str) -> u32 {
        super::partition_for_key(group.as_bytes(), self.locks.len() as u32)
    }

    pub fn apply(&self, key: &[u8], value: &[u8]) {
        if let (Some(k), Ok(v)) = (GroupKey::decode(key), <[u8; 8]>::try_from(value)) {
            self.committed.write().insert(k, u64::from_be_bytes(v));
        }
    }
}
