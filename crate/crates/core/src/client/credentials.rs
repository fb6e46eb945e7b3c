//! Local credential/profile file: plain `key=value` lines, written with
//! owner-only permissions.

use std::fs;
use std::io::Write;
use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
use std::path::{Path, PathBuf};

use super::ClientError;

pub const PROFILE_ENV: &str = "OCTO_PROFILE";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Credentials {
    pub key_id: String,
    pub secret: Vec<u8>,
    pub control_url: String,
    pub broker_addrs: Vec<String>,
    /// Bearer token for the control plane, cached by `login`.
    pub token: Option<String>,
    /// Default CLI output format (`table` or `json`).
    pub format: Option<String>,
}

impl Credentials {
    /// Profile path: `$OCTO_PROFILE`, else `~/.octo/profile`.
    pub fn default_path() -> PathBuf {
        if let Ok(p) = std::env::var(PROFILE_ENV) {
            return PathBuf::from(p);
        }
        let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
        PathBuf::from(home).join(".octo").join("profile")
    }

    pub fn parse(text: &str) -> Result<Self, ClientError> {
        let mut c = Credentials::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ClientError::Config(format!("line {}: expected key=value", n + 1))
            })?;
            let v = v.trim();
            match k.trim() {
                "key_id" => c.key_id = v.to_string(),
                "secret_hex" => {
                    c.secret = hex::decode(v)
                        .map_err(|e| ClientError::Config(format!("secret_hex: {e}")))?
                }
                "control_url" => c.control_url = v.to_string(),
                "broker_addrs" => {
                    c.broker_addrs = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "token" => c.token = Some(v.to_string()).filter(|s| !s.is_empty()),
                "format" => c.format = Some(v.to_string()),
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        };
        line("key_id", &self.key_id);
        line("secret_hex", &hex::encode(&self.secret));
        line("control_url", &self.control_url);
        line("broker_addrs", &self.broker_addrs.join(","));
        if let Some(t) = &self.token {
            line("token", t);
        }
        if let Some(f) = &self.format {
            line("format", f);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = fs::read_to_string(path).map_err(|e| {
            ClientError::Config(format!("cannot read profile {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Loads the file if present, else returns an empty profile.
    pub fn load_or_default(path: &Path) -> Result<Self, ClientError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    /// Writes the profile with mode 0600.
    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .mode(0o600)
            .open(&tmp)?;
        f.write_all(self.render().as_bytes())?;
        f.sync_all()?;
        fs::set_permissions(&tmp, fs::Permissions::from_mode(0o600))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
