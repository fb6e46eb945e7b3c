use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde_json::Value;

use crate::trigger::DELIVERY_HEADER;

#[derive(Debug, Clone)]
pub struct WebhookDelivery {
    /// Value of the delivery-id header, if sent.
    pub delivery_id: Option<String>,
    pub body: Value,
}

/// HTTP endpoint that answers 200 to every POST and remembers what it got.
pub struct WebhookSink {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    received: Arc<Mutex<Vec<WebhookDelivery>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for WebhookSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebhookSink")
            .field("addr", &self.addr)
            .finish()
    }
}

impl WebhookSink {
    pub fn start(addr: &str) -> anyhow::Result<Self> {
        let server = Arc::new(
            tiny_http::Server::http(addr).map_err(|e| anyhow::anyhow!("binding sink: {e}"))?,
        );
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| anyhow::anyhow!("sink is not on an IP socket"))?;
        let received: Arc<Mutex<Vec<WebhookDelivery>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (server, received, stop) = (
                Arc::clone(&server),
                Arc::clone(&received),
                Arc::clone(&stop),
            );
            std::thread::Builder::new()
                .name("webhook-sink".into())
                .spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        let mut req = match server.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(r)) => r,
                            Ok(None) => continue,
                            Err(_) => break,
                        };
                        let mut text = String::new();
                        let _ = req.as_reader().read_to_string(&mut text);
                        let delivery_id = req
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv(DELIVERY_HEADER))
                            .map(|h| h.value.to_string());
                        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
                        received.lock().push(WebhookDelivery { delivery_id, body });
                        let _ = req.respond(tiny_http::Response::from_string("ok"));
                    }
                })?
        };
        Ok(Self {
            addr,
            server,
            received,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/hook", self.addr)
    }

    pub fn deliveries(&self) -> Vec<WebhookDelivery> {
        self.received.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.received.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WebhookSink {
    fn drop(&mut self) {
        self.stop();
    }
}
