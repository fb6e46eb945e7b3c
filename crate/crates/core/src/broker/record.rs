use serde::{Deserialize, Serialize};

/// An immutable event stored at a partition position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub offset: u64,
    /// Milliseconds since the Unix epoch, assigned by the leader at append.
    pub timestamp: i64,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl Record {
    /// Payload size used for batch byte accounting (key plus value).
    pub fn payload_len(&self) -> usize {
        self.key.len() + self.value.len()
    }
}
