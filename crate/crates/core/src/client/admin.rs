use std::time::Duration;

use serde_json::{json, Value};

/// Error body returned by the control plane, or a transport failure
/// (status 0).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{status} {code}: {detail}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub detail: String,
}

/// Thin HTTP client over the management routes.
#[derive(Debug, Clone)]
pub struct ControlClient {
    api: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ControlClient {
    /// `base` is the service root (e.g. `http://host:8080`) or a full API
    /// prefix ending in `/api/v1`.
    pub fn new(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        let api = if base.ends_with("/api/v1") {
            base.to_string()
        } else {
            format!("{base}/api/v1")
        };
        Self {
            api,
            token: None,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn api_url(&self) -> &str {
        &self.api
    }

    /// Raw call returning `(status, body)` for any HTTP status.
    pub fn call(
        &self,
        method: &str,
        path: &str,
        body: Option<&Value>,
    ) -> Result<(u16, Value), ApiError> {
        let mut req = self.agent.request(method, &format!("{}{path}", self.api));
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let result = match body {
            Some(b) => req
                .set("Content-Type", "application/json")
                .send_string(&b.to_string()),
            None => req.call(),
        };
        let resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => {
                return Err(ApiError {
                    status: 0,
                    code: "TRANSPORT".into(),
                    detail: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = resp.into_string().unwrap_or_default();
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok((status, value))
    }

    fn expect(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Value, ApiError> {
        let (status, v) = self.call(method, path, body)?;
        if (200..300).contains(&status) {
            Ok(v)
        } else {
            Err(ApiError {
                status,
                code: v["error"].as_str().unwrap_or("ERROR").to_string(),
                detail: v["detail"]
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| v.to_string()),
            })
        }
    }

    pub fn login(&mut self, identity_id: &str, password: &str) -> Result<Value, ApiError> {
        let v = self.expect(
            "POST",
            "/auth/token",
            Some(&json!({"identity_id": identity_id, "password": password})),
        )?;
        self.token = v["token"].as_str().map(str::to_string);
        Ok(v)
    }

    pub fn create_topic(&self, name: &str, body: &Value) -> Result<Value, ApiError> {
        self.expect("PUT", &format!("/topic/{name}"), Some(body))
    }

    pub fn list_topics(&self) -> Result<Value, ApiError> {
        self.expect("GET", "/topics", None)
    }

    pub fn describe_topic(&self, name: &str) -> Result<Value, ApiError> {
        self.expect("GET", &format!("/topic/{name}"), None)
    }

    pub fn configure_topic(&self, name: &str, body: &Value) -> Result<Value, ApiError> {
        self.expect("POST", &format!("/topic/{name}"), Some(body))
    }

    pub fn set_partitions(&self, name: &str, partitions: u32) -> Result<Value, ApiError> {
        self.expect(
            "POST",
            &format!("/topic/{name}/partitions"),
            Some(&json!({"partitions": partitions})),
        )
    }

    pub fn grant(
        &self,
        name: &str,
        identity_id: &str,
        permissions: &[&str],
        revoke: bool,
    ) -> Result<Value, ApiError> {
        self.expect(
            "POST",
            &format!("/topic/{name}/user"),
            Some(
                &json!({"identity_id": identity_id, "permissions": permissions, "revoke": revoke}),
            ),
        )
    }

    pub fn create_key(&self) -> Result<Value, ApiError> {
        self.expect("GET", "/create_key", None)
    }

    pub fn register_trigger(&self, spec: &Value) -> Result<Value, ApiError> {
        self.expect("PUT", "/trigger", Some(spec))
    }

    pub fn list_triggers(&self) -> Result<Value, ApiError> {
        self.expect("GET", "/triggers", None)
    }

    pub fn update_trigger(&self, id: &str, update: &Value) -> Result<Value, ApiError> {
        self.expect("POST", &format!("/trigger/{id}"), Some(update))
    }

    pub fn delete_trigger(&self, id: &str) -> Result<Value, ApiError> {
        self.expect("DELETE", &format!("/trigger/{id}"), None)
    }
}
