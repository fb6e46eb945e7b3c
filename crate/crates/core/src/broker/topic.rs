use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const DEFAULT_RETENTION_MS: i64 = 7 * 24 * 60 * 60 * 1000;
pub const MAX_TOPIC_NAME_LEN: usize = 249;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Permission {
    Read,
    Write,
    Describe,
}

impl Permission {
    pub const ALL: [Permission; 3] = [Permission::Read, Permission::Write, Permission::Describe];
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Permission::Read => "READ",
            Permission::Write => "WRITE",
            Permission::Describe => "DESCRIBE",
        })
    }
}

impl FromStr for Permission {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "READ" => Ok(Permission::Read),
            "WRITE" => Ok(Permission::Write),
            "DESCRIBE" => Ok(Permission::Describe),
            other => Err(format!("unknown permission {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Grant {
    pub identity_id: String,
    pub permission: Permission,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub name: String,
    pub partitions: u32,
    pub replication_factor: u32,
    pub retention_ms: i64,
    #[serde(default)]
    pub owner: String,
    #[serde(default)]
    pub grants: BTreeSet<Grant>,
}

impl TopicSpec {
    pub fn new(name: impl Into<String>, partitions: u32, replication_factor: u32) -> Self {
        Self {
            name: name.into(),
            partitions,
            replication_factor,
            retention_ms: DEFAULT_RETENTION_MS,
            owner: String::new(),
            grants: BTreeSet::new(),
        }
    }

    pub fn with_retention(mut self, retention_ms: i64) -> Self {
        self.retention_ms = retention_ms;
        self
    }

    pub fn allows(&self, identity: &str, permission: Permission) -> bool {
        self.grants
            .iter()
            .any(|g| g.identity_id == identity && g.permission == permission)
    }

    pub fn grant(&mut self, identity: &str, permission: Permission) {
        self.grants.insert(Grant {
            identity_id: identity.to_string(),
            permission,
        });
    }

    pub fn revoke(&mut self, identity: &str, permission: Permission) {
        self.grants
            .retain(|g| !(g.identity_id == identity && g.permission == permission));
    }
}

/// `[A-Za-z0-9._-]{1,249}`
pub fn valid_topic_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_TOPIC_NAME_LEN
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

/// Internal topics are not user-creatable.
pub fn is_internal(name: &str) -> bool {
    name.starts_with("__")
}
