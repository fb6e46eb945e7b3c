//! Single-writer, multi-reader metadata store: topics, replica assignments,
//! grants and data-plane keys. Written through to `metadata.json` on every
//! mutation; brokers read it per request.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{BrokerId, TopicSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataKey {
    pub key_id: String,
    pub identity_id: String,
    #[serde(with = "hex_secret")]
    pub secret: [u8; 32],
    pub created_at: i64,
}

mod hex_secret {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("secret must be 32 bytes"))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct MetaState {
    pub topics: BTreeMap<String, TopicSpec>,
    /// topic -> per-partition ordered replica list (first = preferred leader)
    pub assignments: BTreeMap<String, Vec<Vec<BrokerId>>>,
    pub keys: BTreeMap<String, DataKey>,
    pub placement_cursor: u32,
}

#[derive(Debug)]
pub(crate) struct Metadata {
    path: PathBuf,
    state: RwLock<MetaState>,
}

impl Metadata {
    pub fn open(path: PathBuf) -> io::Result<Self> {
        let state = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => MetaState::default(),
            Err(e) => return Err(e),
        };
        Ok(Self {
            path,
            state: RwLock::new(state),
        })
    }

    pub fn read<R>(&self, f: impl FnOnce(&MetaState) -> R) -> R {
        f(&self.state.read())
    }

    /// Applies a mutation and persists the result before releasing the
    /// writer lock. The mutation is rolled back if it returns an error.
    pub fn write<R, E>(&self, f: impl FnOnce(&mut MetaState) -> Result<R, E>) -> Result<R, E>
    where
        E: From<io::Error>,
    {
        let mut guard = self.state.write();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        persist(&self.path, &next)?;
        *guard = next;
        Ok(out)
    }
}

fn persist(path: &PathBuf, state: &MetaState) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let bytes = serde_json::to_vec_pretty(state).map_err(io::Error::other)?;
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
