//! HTTP query service: reverse and forward retrieval plus metrics, served
//! from one shared engine so answers match the CLI bit for bit.
//!
//! The listener binds before the engine loads; `/healthz` answers 503 until
//! indexes are in memory. Shutdown stops accepting and lets in-flight
//! requests finish.

use std::io::Read;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use tiny_http::{Header, Response, Server};

use vpg_core::config::EngineConfig;
use vpg_core::engine::{forward_result_to_json, reverse_result_to_json, Engine};
use vpg_core::error::{Result, VpgError};
use vpg_core::forward::{Gender, UserContext};
use vpg_core::types::ImageSignature;

use crate::logging;

const LATENCY_BUCKETS_MS: [u64; 9] = [1, 2, 5, 10, 25, 50, 100, 250, 1000];

#[derive(Default)]
struct EndpointStats {
    requests: AtomicU64,
    errors: AtomicU64,
    total_ms: AtomicU64,
    buckets: [AtomicU64; 10],
}

impl EndpointStats {
    fn record(&self, elapsed: Duration, ok: bool) {
        let ms = elapsed.as_millis() as u64;
        self.requests.fetch_add(1, Ordering::Relaxed);
        if !ok {
            self.errors.fetch_add(1, Ordering::Relaxed);
        }
        self.total_ms.fetch_add(ms, Ordering::Relaxed);
        let idx = LATENCY_BUCKETS_MS
            .iter()
            .position(|&b| ms <= b)
            .unwrap_or(LATENCY_BUCKETS_MS.len());
        self.buckets[idx].fetch_add(1, Ordering::Relaxed);
    }

    fn histogram_json(&self) -> serde_json::Value {
        let mut buckets = serde_json::Map::new();
        for (i, bound) in LATENCY_BUCKETS_MS.iter().enumerate() {
            buckets.insert(
                format!("le_{bound}ms"),
                self.buckets[i].load(Ordering::Relaxed).into(),
            );
        }
        buckets.insert(
            "le_inf".into(),
            self.buckets[LATENCY_BUCKETS_MS.len()]
                .load(Ordering::Relaxed)
                .into(),
        );
        serde_json::json!({
            "requests": self.requests.load(Ordering::Relaxed),
            "errors": self.errors.load(Ordering::Relaxed),
            "total_ms": self.total_ms.load(Ordering::Relaxed),
            "buckets": buckets,
        })
    }
}

struct ServerState {
    engine: OnceLock<Arc<Engine>>,
    load_error: Mutex<Option<String>>,
    reverse: EndpointStats,
    forward: EndpointStats,
    request_seq: AtomicU64,
}

impl ServerState {
    fn ready(&self) -> bool {
        self.engine
            .get()
            .map(|e| e.ready_to_serve())
            .unwrap_or(false)
    }
}

pub struct VpgServer {
    server: Arc<Server>,
    state: Arc<ServerState>,
    shutdown: Arc<AtomicBool>,
    workers: Vec<std::thread::JoinHandle<()>>,
    loader: Option<std::thread::JoinHandle<()>>,
    addr: String,
}

enum Reply {
    Json(u16, serde_json::Value),
    Text(u16, String),
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap()
}

fn text_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"text/plain; charset=utf-8"[..]).unwrap()
}

fn parse_query(url: &str) -> (String, Vec<(String, String)>) {
    match url.split_once('?') {
        None => (url.to_string(), Vec::new()),
        Some((path, query)) => {
            let params = query
                .split('&')
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            (path.to_string(), params)
        }
    }
}

fn param<'a>(params: &'a [(String, String)], key: &str) -> Option<&'a str> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn error_reply(state: &ServerState, endpoint: &str, err: VpgError) -> Reply {
    match &err {
        VpgError::UnknownEntity(_) | VpgError::Extraction(_) => Reply::Json(
            404,
            serde_json::json!({ "error": "unknown signature", "detail": err.to_string() }),
        ),
        VpgError::InvalidArgument(_) | VpgError::DimensionMismatch { .. } => Reply::Json(
            400,
            serde_json::json!({ "error": "bad request", "detail": err.to_string() }),
        ),
        _ => {
            let id = format!("req-{}", state.request_seq.fetch_add(1, Ordering::Relaxed));
            logging::error(
                "internal_error",
                &[
                    ("endpoint", endpoint),
                    ("id", &id),
                    ("error", &err.to_string()),
                ],
            );
            Reply::Json(500, serde_json::json!({ "error": "internal", "id": id }))
        }
    }
}

fn handle_reverse(state: &ServerState, params: &[(String, String)]) -> Reply {
    let engine = state.engine.get().expect("ready checked");
    let Some(product) = param(params, "product") else {
        return Reply::Json(
            400,
            serde_json::json!({ "error": "missing product parameter" }),
        );
    };
    let sig: ImageSignature = match product.parse() {
        Ok(s) => s,
        Err(e) => return error_reply(state, "reverse", e),
    };
    match engine.reverse_query(&sig) {
        Ok(result) => Reply::Json(200, reverse_result_to_json(&result)),
        Err(e) => error_reply(state, "reverse", e),
    }
}

fn handle_forward(state: &ServerState, params: &[(String, String)]) -> Reply {
    let engine = state.engine.get().expect("ready checked");
    let Some(scene) = param(params, "scene") else {
        return Reply::Json(
            400,
            serde_json::json!({ "error": "missing scene parameter" }),
        );
    };
    let sig: ImageSignature = match scene.parse() {
        Ok(s) => s,
        Err(e) => return error_reply(state, "forward", e),
    };
    let gender = match param(params, "gender").unwrap_or("").parse::<Gender>() {
        Ok(g) => g,
        Err(e) => return error_reply(state, "forward", e),
    };
    let ctx = UserContext::new(gender, param(params, "country").unwrap_or(""));
    match engine.forward_query(&sig, &ctx) {
        Ok((products, cached)) => {
            Reply::Json(200, forward_result_to_json(&sig, &ctx, &products, cached))
        }
        Err(e) => error_reply(state, "forward", e),
    }
}

fn metrics_json(state: &ServerState) -> serde_json::Value {
    let engine_metrics = state
        .engine
        .get()
        .map(|e| serde_json::to_value(e.metrics()).unwrap_or_default())
        .unwrap_or(serde_json::Value::Null);
    serde_json::json!({
        "engine": engine_metrics,
        "endpoints": {
            "reverse": state.reverse.histogram_json(),
            "forward": state.forward.histogram_json(),
        },
        "ready": state.ready(),
    })
}

fn metrics_text(state: &ServerState) -> String {
    let mut out = String::new();
    for (name, stats) in [("reverse", &state.reverse), ("forward", &state.forward)] {
        out.push_str(&format!(
            "vpg_requests_total{{endpoint=\"{name}\"}} {}\n",
            stats.requests.load(Ordering::Relaxed)
        ));
        out.push_str(&format!(
            "vpg_request_errors_total{{endpoint=\"{name}\"}} {}\n",
            stats.errors.load(Ordering::Relaxed)
        ));
        out.push_str(&format!(
            "vpg_request_ms_total{{endpoint=\"{name}\"}} {}\n",
            stats.total_ms.load(Ordering::Relaxed)
        ));
        let mut cumulative = 0u64;
        for (i, bound) in LATENCY_BUCKETS_MS.iter().enumerate() {
            cumulative += stats.buckets[i].load(Ordering::Relaxed);
            out.push_str(&format!(
                "vpg_request_ms_bucket{{endpoint=\"{name}\",le=\"{bound}\"}} {cumulative}\n"
            ));
        }
        cumulative += stats.buckets[LATENCY_BUCKETS_MS.len()].load(Ordering::Relaxed);
        out.push_str(&format!(
            "vpg_request_ms_bucket{{endpoint=\"{name}\",le=\"+Inf\"}} {cumulative}\n"
        ));
    }
    if let Some(engine) = state.engine.get() {
        let m = engine.metrics();
        out.push_str(&format!("vpg_store_lookups_total {}\n", m.store.lookups));
        out.push_str(&format!("vpg_store_hits_total {}\n", m.store.hits));
        out.push_str(&format!("vpg_store_hit_rate {}\n", m.store_hit_rate));
        out.push_str(&format!(
            "vpg_store_fallback_extractions_total {}\n",
            m.store.fallback_extractions
        ));
        if let (Some(cache), Some(rate)) = (&m.cache, m.cache_hit_rate) {
            out.push_str(&format!("vpg_cache_hits_total {}\n", cache.hits));
            out.push_str(&format!("vpg_cache_misses_total {}\n", cache.misses));
            out.push_str(&format!("vpg_cache_hit_rate {rate}\n"));
        }
        if let Some(q) = m.object_index_queries {
            out.push_str(&format!("vpg_object_index_queries_total {q}\n"));
        }
        if let Some(q) = m.product_index_queries {
            out.push_str(&format!("vpg_product_index_queries_total {q}\n"));
        }
    }
    out.push_str(&format!("vpg_ready {}\n", state.ready() as u8));
    out
}

fn route(state: &ServerState, url: &str) -> Reply {
    let (path, params) = parse_query(url);
    match path.as_str() {
        "/healthz" => {
            if state.ready() {
                Reply::Text(200, "ok\n".into())
            } else if let Some(err) = state.load_error.lock().unwrap().clone() {
                Reply::Text(503, format!("engine failed to load: {err}\n"))
            } else {
                Reply::Text(503, "loading\n".into())
            }
        }
        "/v1/metrics" => Reply::Json(200, metrics_json(state)),
        "/metrics" => Reply::Text(200, metrics_text(state)),
        "/v1/reverse" => {
            if !state.ready() {
                return Reply::Json(503, serde_json::json!({ "error": "not ready" }));
            }
            let start = Instant::now();
            let reply = handle_reverse(state, &params);
            let ok = matches!(reply, Reply::Json(200, _));
            state.reverse.record(start.elapsed(), ok);
            reply
        }
        "/v1/forward" => {
            if !state.ready() {
                return Reply::Json(503, serde_json::json!({ "error": "not ready" }));
            }
            let start = Instant::now();
            let reply = handle_forward(state, &params);
            let ok = matches!(reply, Reply::Json(200, _));
            state.forward.record(start.elapsed(), ok);
            reply
        }
        _ => Reply::Json(404, serde_json::json!({ "error": "no such endpoint" })),
    }
}

impl VpgServer {
    /// Bind the listener, start the engine loader and worker threads.
    pub fn start(config: EngineConfig, workers: usize) -> Result<VpgServer> {
        let addr = format!("{}:{}", config.server.bind, config.server.port);
        let server = Arc::new(
            Server::http(&addr).map_err(|e| VpgError::Store(format!("bind {addr}: {e}")))?,
        );
        let bound = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => a.to_string(),
            other => other.to_string(),
        };
        let state = Arc::new(ServerState {
            engine: OnceLock::new(),
            load_error: Mutex::new(None),
            reverse: EndpointStats::default(),
            forward: EndpointStats::default(),
            request_seq: AtomicU64::new(1),
        });
        let shutdown = Arc::new(AtomicBool::new(false));

        let loader = {
            let state = Arc::clone(&state);
            std::thread::spawn(move || match Engine::open(config) {
                Ok(engine) => {
                    let _ = state.engine.set(Arc::new(engine));
                    logging::info("engine_loaded", &[]);
                }
                Err(e) => {
                    *state.load_error.lock().unwrap() = Some(e.to_string());
                    logging::error("engine_load_failed", &[("error", &e.to_string())]);
                }
            })
        };

        let mut handles = Vec::new();
        for _ in 0..workers.max(1) {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            let shutdown = Arc::clone(&shutdown);
            handles.push(std::thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(request)) => {
                            let reply = route(&state, request.url());
                            let outcome = match reply {
                                Reply::Json(code, body) => request.respond(
                                    Response::from_string(body.to_string())
                                        .with_status_code(code)
                                        .with_header(json_header()),
                                ),
                                Reply::Text(code, body) => request.respond(
                                    Response::from_string(body)
                                        .with_status_code(code)
                                        .with_header(text_header()),
                                ),
                            };
                            if let Err(e) = outcome {
                                logging::error("respond_failed", &[("error", &e.to_string())]);
                            }
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            }));
        }

        Ok(VpgServer {
            server,
            state,
            shutdown,
            workers: handles,
            loader: Some(loader),
            addr: bound,
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn ready(&self) -> bool {
        self.state.ready()
    }

    /// Stop accepting and drain in-flight requests.
    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.server.unblock();
        for handle in self.workers.drain(..) {
            let _ = handle.join();
        }
        if let Some(loader) = self.loader.take() {
            let _ = loader.join();
        }
        logging::info("server_stopped", &[]);
    }
}

/// Blocking entrypoint for `vpg serve`: runs until SIGINT/SIGTERM, then
/// drains.
pub fn run_server(config: EngineConfig) -> Result<()> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(4);
    let server = VpgServer::start(config, workers)?;
    logging::info("serving", &[("addr", server.addr())]);

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || {
            stop.store(true, Ordering::SeqCst);
        })
        .map_err(|e| VpgError::Store(format!("install signal handler: {e}")))?;
    }
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    logging::info("draining", &[]);
    server.shutdown();
    Ok(())
}

/// Minimal HTTP GET for tests and smoke checks.
pub fn http_get(addr: &str, path: &str) -> Result<(u16, String)> {
    use std::io::Write;
    let mut stream = std::net::TcpStream::connect(addr)
        .map_err(|e| VpgError::Store(format!("connect {addr}: {e}")))?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw)?;
    let status: u16 = raw
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| VpgError::Store(format!("malformed http response: {raw:.120}")))?;
    let body = raw
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    Ok((status, body))
}
