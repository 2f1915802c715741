//! In-memory HTTP job service running the qexec simulators.
//!
//! Jobs are accepted with `POST /jobs`, held QUEUED for the configured
//! artificial delay, then executed on a blocking worker. State lives only in
//! memory; a restart forgets every job.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qexec_core::counts::Counts;
use qexec_core::provider::{JobState, IDEAL_BACKEND, NOISY_BACKEND};
use qexec_core::simulator::{NoiseSpec, Simulator, DEFAULT_MAX_WIDTH};
use qexec_core::wire::{
    BackendInfo, ErrorBody, JobStateResponse, SubmitRequest, SubmitResponse, API_KEY_HEADER,
};
use qexec_core::{parse_qasm, Circuit};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKernel {
    Ideal,
    Noisy { p_depolarizing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerBackend {
    pub name: String,
    pub kernel: BackendKernel,
    pub max_qubits: usize,
}

impl ServerBackend {
    pub fn ideal(name: impl Into<String>) -> Self {
        ServerBackend { name: name.into(), kernel: BackendKernel::Ideal, max_qubits: DEFAULT_MAX_WIDTH }
    }

    pub fn noisy(name: impl Into<String>, p_depolarizing: f64) -> Self {
        ServerBackend {
            name: name.into(),
            kernel: BackendKernel::Noisy { p_depolarizing },
            max_qubits: DEFAULT_MAX_WIDTH,
        }
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: self.name.clone(),
            online: true,
            max_qubits: self.max_qubits,
            is_ideal_simulator: self.kernel == BackendKernel::Ideal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub host: String,
    /// `0` picks a free port.
    pub port: u16,
    /// Time every job spends QUEUED before it runs.
    pub delay: Duration,
    pub backends: Vec<ServerBackend>,
    pub api_key: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            delay: Duration::ZERO,
            backends: vec![ServerBackend::ideal(IDEAL_BACKEND), ServerBackend::noisy(NOISY_BACKEND, 0.05)],
            api_key: None,
        }
    }
}

impl ServerConfig {
    pub fn ideal_only() -> Self {
        ServerConfig { backends: vec![ServerBackend::ideal(IDEAL_BACKEND)], ..Default::default() }
    }

    /// Default backends on an ephemeral localhost port.
    pub fn ephemeral() -> Self {
        ServerConfig { port: 0, ..Default::default() }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WireJob {
    pub job_id: String,
    pub backend: String,
    pub qasm: String,
    pub shots: u64,
    pub seed: u64,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    #[serde(skip)]
    error: Option<String>,
}

struct AppState {
    config: ServerConfig,
    simulator: Simulator,
    jobs: Mutex<HashMap<String, WireJob>>,
    next_id: AtomicU64,
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn require_key(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.config.api_key {
        let given = req.headers().get(API_KEY_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "missing or invalid api key");
        }
    }
    next.run(req).await
}

async fn list_backends(State(state): State<Shared>) -> Json<Vec<BackendInfo>> {
    Json(state.config.backends.iter().map(ServerBackend::info).collect())
}

async fn submit(State(state): State<Shared>, body: Bytes) -> Response {
    let req: SubmitRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad request body: {e}")),
    };
    let Some(backend) = state.config.backends.iter().find(|b| b.name == req.backend).cloned() else {
        return error(StatusCode::NOT_FOUND, format!("unknown backend `{}`", req.backend));
    };
    if req.shots == 0 {
        return error(StatusCode::BAD_REQUEST, "shots must be at least 1");
    }
    let circuit = match parse_qasm(&req.qasm) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad qasm: {e}")),
    };
    if circuit.width > backend.max_qubits {
        return error(
            StatusCode::BAD_REQUEST,
            format!("circuit width {} exceeds backend capacity of {}", circuit.width, backend.max_qubits),
        );
    }
    let job_id = format!("job-{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    state.jobs.lock().unwrap().insert(
        job_id.clone(),
        WireJob {
            job_id: job_id.clone(),
            backend: backend.name.clone(),
            qasm: req.qasm,
            shots: req.shots,
            seed: req.seed,
            state: JobState::Queued,
            counts: None,
            error: None,
        },
    );
    tokio::spawn(execute(state.clone(), job_id.clone(), backend, circuit, req.shots, req.seed));
    (StatusCode::CREATED, Json(SubmitResponse { job_id, state: JobState::Queued })).into_response()
}

async fn execute(state: Shared, job_id: String, backend: ServerBackend, circuit: Circuit, shots: u64, seed: u64) {
    if !state.config.delay.is_zero() {
        tokio::time::sleep(state.config.delay).await;
    }
    set_state(&state, &job_id, JobState::Running, None, None);
    let sim = state.simulator;
    let outcome = tokio::task::spawn_blocking(move || match backend.kernel {
        BackendKernel::Ideal => sim.sample(&circuit, shots, seed),
        BackendKernel::Noisy { p_depolarizing } => {
            sim.sample_noisy(&circuit, shots, NoiseSpec { p_depolarizing }, seed)
        }
    })
    .await;
    match outcome {
        Ok(Ok(counts)) => set_state(&state, &job_id, JobState::Done, Some(counts), None),
        Ok(Err(e)) => set_state(&state, &job_id, JobState::Failed, None, Some(e.to_string())),
        Err(e) => set_state(&state, &job_id, JobState::Failed, None, Some(format!("worker crashed: {e}"))),
    }
}

fn set_state(state: &AppState, job_id: &str, to: JobState, counts: Option<Counts>, err: Option<String>) {
    if let Some(job) = state.jobs.lock().unwrap().get_mut(job_id) {
        job.state = to;
        job.counts = counts;
        job.error = err;
    }
}

async fn job_status(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    match state.jobs.lock().unwrap().get(&id) {
        Some(job) => Json(JobStateResponse {
            job_id: job.job_id.clone(),
            state: job.state,
            error_message: job.error.clone(),
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job `{id}`")),
    }
}

async fn job_result(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let jobs = state.jobs.lock().unwrap();
    let Some(job) = jobs.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job `{id}`"));
    };
    match job.state {
        JobState::Done => Json(job.counts.clone().unwrap_or_default()).into_response(),
        JobState::Failed => error(StatusCode::GONE, job.error.clone().unwrap_or_else(|| "job failed".into())),
        _ => error(StatusCode::CONFLICT, "not ready"),
    }
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(config: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        config,
        simulator: Simulator::default(),
        jobs: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/backends", get(list_backends))
        .route("/jobs", post(submit))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/result", get(job_result))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_key))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: ServerConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(config)).with_graceful_shutdown(shutdown).await
}

/// Server running on a background thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for a `remote_http` provider endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()
}

/// Binds the configured address and serves on a background thread.
pub fn spawn(config: ServerConfig) -> std::io::Result<ServerHandle> {
    let rt = runtime()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind((config.host.as_str(), config.port)))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("qexec-server".into()).spawn(move || {
        rt.block_on(serve(listener, config, async {
            let _ = rx.await;
        }))
    })?;
    Ok(ServerHandle { addr, stop: Some(tx), thread: Some(thread) })
}

/// Serves on the current thread until the process receives Ctrl-C.
pub fn run_blocking(config: ServerConfig, on_ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
        on_ready(listener.local_addr()?);
        serve(listener, config, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}
