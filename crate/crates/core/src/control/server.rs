use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use super::ControlPlane;

const MAX_BODY: u64 = 8 << 20;

/// HTTP front end for a [`ControlPlane`].
pub struct ControlServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for ControlServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlServer")
            .field("addr", &self.addr)
            .finish()
    }
}

impl ControlServer {
    pub fn start(plane: ControlPlane, addr: SocketAddr) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("control server bound to a non-IP address"))?;
        let server = Arc::new(server);
        let threads = (0..plane.config().http_threads.max(1))
            .map(|i| {
                let server = Arc::clone(&server);
                let plane = plane.clone();
                std::thread::Builder::new()
                    .name(format!("control-http-{i}"))
                    .spawn(move || {
                        for req in server.incoming_requests() {
                            serve_one(&plane, req);
                        }
                    })
                    .expect("spawn http worker")
            })
            .collect();
        Ok(Self {
            server,
            addr,
            threads,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(&mut self) {
        for _ in 0..self.threads.len() {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_one(plane: &ControlPlane, mut req: tiny_http::Request) {
    let method = req.method().as_str().to_ascii_uppercase();
    let url = req.url().to_string();
    let auth = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let mut body = Vec::new();
    let resp = match req.as_reader().take(MAX_BODY + 1).read_to_end(&mut body) {
        Ok(_) if body.len() as u64 > MAX_BODY => {
            super::ApiResponse::error(413, "INVALID", "request body too large")
        }
        Ok(_) => plane.handle(&method, &url, auth.as_deref(), &body),
        Err(e) => super::ApiResponse::error(400, "INVALID", format!("cannot read body: {e}")),
    };
    log::debug!("{method} {url} -> {}", resp.status);
    let payload = resp.body.to_string();
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(resp.status)
        .with_header(
            "Content-Type: application/json"
                .parse::<tiny_http::Header>()
                .expect("static header"),
        );
    if let Err(e) = req.respond(response) {
        log::debug!("writing response failed: {e}");
    }
}
