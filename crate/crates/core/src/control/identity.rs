use std::collections::BTreeMap;
use std::path::Path;

use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("cannot read identity seed {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid identity seed: {0}")]
    Parse(String),
    #[error("identity {0:?} already exists")]
    Duplicate(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentitySeed {
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    /// `sha256$<salt hex>$<digest hex>` where digest = sha256(salt || password).
    pub password_hash: String,
}

#[derive(Debug, Default, Deserialize)]
struct SeedFile {
    #[serde(default)]
    identity: Vec<IdentitySeed>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityInfo {
    pub identity_id: String,
    pub display_name: String,
}

pub fn hash_password(password: &str, salt: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    format!("sha256${}${}", hex::encode(salt), hex::encode(h.finalize()))
}

pub fn hash_password_random_salt(password: &str) -> String {
    let mut salt = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut salt);
    hash_password(password, &salt)
}

pub fn verify_password(stored: &str, password: &str) -> bool {
    let mut parts = stored.split('$');
    let (Some("sha256"), Some(salt), Some(_), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    let Ok(salt) = hex::decode(salt) else {
        return false;
    };
    let expected = hash_password(password, &salt);
    // length-independent comparison of equal-format strings
    expected.len() == stored.len()
        && expected
            .bytes()
            .zip(stored.bytes())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
}

/// Registered identities; seeded from a TOML file and extendable at runtime.
#[derive(Debug, Default)]
pub struct IdentityRegistry {
    entries: RwLock<BTreeMap<String, IdentitySeed>>,
}

impl IdentityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `[[identity]]` tables with `id`, `display_name`, `password_hash`.
    pub fn load_seed(&self, path: &Path) -> Result<usize, IdentityError> {
        let text = std::fs::read_to_string(path).map_err(|source| IdentityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let seed: SeedFile =
            toml::from_str(&text).map_err(|e| IdentityError::Parse(e.to_string()))?;
        let mut entries = self.entries.write();
        let n = seed.identity.len();
        for s in seed.identity {
            if s.id.is_empty() {
                return Err(IdentityError::Parse("identity id must be non-empty".into()));
            }
            if !s.password_hash.starts_with("sha256$") {
                return Err(IdentityError::Parse(format!(
                    "{}: password_hash must be sha256$salt$digest",
                    s.id
                )));
            }
            entries.insert(s.id.clone(), s);
        }
        Ok(n)
    }

    pub fn add(&self, id: &str, display_name: &str, password: &str) -> Result<(), IdentityError> {
        let mut entries = self.entries.write();
        if entries.contains_key(id) {
            return Err(IdentityError::Duplicate(id.to_string()));
        }
        entries.insert(
            id.to_string(),
            IdentitySeed {
                id: id.to_string(),
                display_name: display_name.to_string(),
                password_hash: hash_password_random_salt(password),
            },
        );
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.read().contains_key(id)
    }

    pub fn check_password(&self, id: &str, password: &str) -> bool {
        self.entries
            .read()
            .get(id)
            .is_some_and(|s| verify_password(&s.password_hash, password))
    }

    pub fn list(&self) -> Vec<IdentityInfo> {
        self.entries
            .read()
            .values()
            .map(|s| IdentityInfo {
                identity_id: s.id.clone(),
                display_name: s.display_name.clone(),
            })
            .collect()
    }
}
