//! Small blocking HTTP layer shared by every service endpoint.
//!
//! Servers run on `tiny_http` with a fixed worker pool; outgoing calls go
//! through a shared `ureq` agent.

use serde::Serialize;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;
use std::time::Duration;

pub const JSON: &str = "application/json";
pub const PROTOBUF: &str = "application/x-protobuf";
pub const ZIP: &str = "application/zip";

#[derive(Debug, Clone)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn new(method: &str, target: &str) -> Self {
        let (path, query) = match target.split_once('?') {
            Some((p, q)) => (p, q),
            None => (target, ""),
        };
        Request {
            method: method.to_ascii_uppercase(),
            path: path.to_string(),
            query: url::form_urlencoded::parse(query.as_bytes()).into_owned().collect(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn with_body(mut self, body: Vec<u8>) -> Self {
        self.body = body;
        self
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Non-empty, percent-decoded path segments.
    pub fn segments(&self) -> Vec<String> {
        self.path
            .split('/')
            .filter(|s| !s.is_empty())
            .map(|s| {
                url::form_urlencoded::parse(format!("x={s}").as_bytes())
                    .next()
                    .map(|(_, v)| v.into_owned())
                    .unwrap_or_default()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub content_type: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn bytes(status: u16, content_type: &str, body: Vec<u8>) -> Self {
        Response { status, content_type: content_type.to_string(), headers: Vec::new(), body }
    }

    pub fn json<T: Serialize + ?Sized>(status: u16, value: &T) -> Self {
        match serde_json::to_vec(value) {
            Ok(body) => Response::bytes(status, JSON, body),
            Err(e) => Response::error(500, &e.to_string()),
        }
    }

    pub fn empty(status: u16) -> Self {
        Response::bytes(status, "text/plain", Vec::new())
    }

    pub fn error(status: u16, message: &str) -> Self {
        Response::json(status, &serde_json::json!({ "error": message }))
    }

    pub fn not_found() -> Self {
        Response::error(404, "not found")
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    pub fn json_body(&self) -> serde_json::Result<serde_json::Value> {
        serde_json::from_slice(&self.body)
    }
}

pub trait Handler: Send + Sync + 'static {
    fn handle(&self, req: Request) -> Response;
}

impl<F> Handler for F
where
    F: Fn(Request) -> Response + Send + Sync + 'static,
{
    fn handle(&self, req: Request) -> Response {
        self(req)
    }
}

/// A running HTTP listener. Dropping it stops the workers.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    pub fn bind(addr: &str, handler: Arc<dyn Handler>, workers: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("listener has no IP address"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..workers.max(1))
            .map(|i| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let handler = Arc::clone(&handler);
                std::thread::Builder::new()
                    .name(format!("http-{}-{i}", bound.port()))
                    .spawn(move || serve_loop(&server, &stop, handler.as_ref()))
                    .expect("spawn http worker")
            })
            .collect();
        Ok(HttpServer { addr: bound, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn serve_loop(server: &tiny_http::Server, stop: &AtomicBool, handler: &dyn Handler) {
    while !stop.load(Ordering::SeqCst) {
        let mut raw = match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("http accept failed: {e}");
                continue;
            }
        };
        let mut req = Request::new(raw.method().as_str(), raw.url());
        req.headers = raw
            .headers()
            .iter()
            .map(|h| (h.field.as_str().as_str().to_string(), h.value.as_str().to_string()))
            .collect();
        if let Err(e) = raw.as_reader().read_to_end(&mut req.body) {
            let _ = raw.respond(tiny_http::Response::from_string(e.to_string()).with_status_code(400));
            continue;
        }
        let resp = handler.handle(req);
        let mut out = tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
        if let Ok(h) = tiny_http::Header::from_bytes("Content-Type", resp.content_type.as_bytes()) {
            out.add_header(h);
        }
        // no keep-alive: a stopped server must not keep answering on pooled sockets
        if let Ok(h) = tiny_http::Header::from_bytes("Connection", "close") {
            out.add_header(h);
        }
        for (k, v) in &resp.headers {
            if let Ok(h) = tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()) {
                out.add_header(h);
            }
        }
        if let Err(e) = raw.respond(out) {
            log::debug!("client went away: {e}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

fn agent() -> &'static ureq::Agent {
    static AGENT: OnceLock<ureq::Agent> = OnceLock::new();
    AGENT.get_or_init(|| {
        ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(2))
            .timeout(Duration::from_secs(15))
            .max_idle_connections(0)
            .build()
    })
}

/// Performs a blocking request and returns the response, mapping non-2xx
/// statuses to [`ClientError::Status`].
pub fn call(method: &str, url: &str, headers: &[(&str, &str)], body: Option<(&str, &[u8])>) -> Result<Response, ClientError> {
    let mut req = agent().request(method, url);
    for (k, v) in headers {
        req = req.set(k, v);
    }
    let result = match body {
        Some((ctype, bytes)) => req.set("Content-Type", ctype).send_bytes(bytes),
        None => req.call(),
    };
    match result {
        Ok(resp) => read_response(resp),
        Err(ureq::Error::Status(status, resp)) => {
            let body = resp.into_string().unwrap_or_default();
            Err(ClientError::Status { status, body })
        }
        Err(ureq::Error::Transport(t)) => Err(ClientError::Transport(t.to_string())),
    }
}

fn read_response(resp: ureq::Response) -> Result<Response, ClientError> {
    let status = resp.status();
    let content_type = resp.content_type().to_string();
    let headers = resp
        .headers_names()
        .into_iter()
        .filter_map(|n| resp.header(&n).map(|v| (n.clone(), v.to_string())))
        .collect();
    let mut body = Vec::new();
    resp.into_reader()
        .read_to_end(&mut body)
        .map_err(|e| ClientError::Transport(e.to_string()))?;
    Ok(Response { status, content_type, headers, body })
}

pub fn get(url: &str) -> Result<Response, ClientError> {
    call("GET", url, &[], None)
}

pub fn post_json<T: Serialize + ?Sized>(url: &str, value: &T) -> Result<Response, ClientError> {
    let body = serde_json::to_vec(value).map_err(|e| ClientError::Transport(e.to_string()))?;
    call("POST", url, &[], Some((JSON, &body)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_parsing() {
        let r = Request::new("get", "/v2/entities/urn%3Angsi%3AX?type=Stop&q=a%3D%3D1");
        assert_eq!(r.method, "GET");
        assert_eq!(r.segments(), vec!["v2", "entities", "urn:ngsi:X"]);
        assert_eq!(r.param("type"), Some("Stop"));
        assert_eq!(r.param("q"), Some("a==1"));
        assert_eq!(r.param("missing"), None);
    }

    #[test]
    fn serves_and_calls() {
        let handler: Arc<dyn Handler> = Arc::new(|req: Request| {
            Response::json(200, &serde_json::json!({ "path": req.path, "len": req.body.len() }))
        });
        let server = HttpServer::bind("127.0.0.1:0", handler, 2).unwrap();
        let url = format!("{}/echo", server.base_url());
        let resp = call("POST", &url, &[], Some(("text/plain", b"hello"))).unwrap();
        assert_eq!(resp.status, 200);
        let v = resp.json_body().unwrap();
        assert_eq!(v["path"], "/echo");
        assert_eq!(v["len"], 5);
        server.shutdown();
        assert!(matches!(get(&url), Err(ClientError::Transport(_))));
    }
}
