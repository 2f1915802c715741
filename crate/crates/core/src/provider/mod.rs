//! Uniform access to heterogeneous execution providers: discovery,
//! configuration and job submission behind one registry.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::Circuit;
use crate::counts::Counts;
use crate::simulator::NoiseSpec;
use crate::Params;

mod local;
mod remote;

pub use local::LocalProvider;
pub use remote::RemoteProvider;

/// Option key carrying the sampling seed of a job.
pub const SEED_OPTION: &str = "seed";

pub const IDEAL_BACKEND: &str = "statevector";
pub const NOISY_BACKEND: &str = "noisy_statevector";
pub const MOCK_BACKEND: &str = "mock_statevector";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub provider_id: String,
    pub backend_name: String,
    pub online: bool,
    pub max_qubits: usize,
    pub is_ideal_simulator: bool,
    #[serde(default, with = "duration_ms", skip_serializing_if = "Option::is_none")]
    pub queue_latency_hint: Option<Duration>,
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&(d.as_millis() as u64)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    LocalIdeal,
    LocalNoisy,
    MockDelay,
    RemoteHttp,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::LocalIdeal => "local_ideal",
            ProviderKind::LocalNoisy => "local_noisy",
            ProviderKind::MockDelay => "mock_delay",
            ProviderKind::RemoteHttp => "remote_http",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub kind: ProviderKind,
    /// Session-only secrets such as `api_key`.
    pub credentials: BTreeMap<String, String>,
    /// Base URL, `remote_http` only.
    pub endpoint: Option<String>,
    /// `local_noisy` only.
    pub noise: Option<NoiseSpec>,
    /// Completion latency, `mock_delay` only.
    pub delay: Option<Duration>,
    /// Advertised availability for local kinds; they default to online.
    pub online: Option<bool>,
    /// Advertised qubit capacity override for local kinds. Execution still
    /// enforces the simulator's own limit.
    pub max_qubits: Option<usize>,
}

impl ProviderConfig {
    pub fn new(provider_id: impl Into<String>, kind: ProviderKind) -> Self {
        ProviderConfig {
            provider_id: provider_id.into(),
            kind,
            credentials: BTreeMap::new(),
            endpoint: None,
            noise: None,
            delay: None,
            online: None,
            max_qubits: None,
        }
    }

    pub fn local_ideal(id: impl Into<String>) -> Self {
        Self::new(id, ProviderKind::LocalIdeal)
    }

    pub fn local_noisy(id: impl Into<String>, noise: NoiseSpec) -> Self {
        ProviderConfig { noise: Some(noise), ..Self::new(id, ProviderKind::LocalNoisy) }
    }

    pub fn mock_delay(id: impl Into<String>, delay: Duration) -> Self {
        ProviderConfig { delay: Some(delay), ..Self::new(id, ProviderKind::MockDelay) }
    }

    pub fn remote_http(id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        ProviderConfig { endpoint: Some(endpoint.into()), ..Self::new(id, ProviderKind::RemoteHttp) }
    }

    pub fn with_credential(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.credentials.insert(key.into(), value.into());
        self
    }

    pub fn with_online(mut self, online: bool) -> Self {
        self.online = Some(online);
        self
    }

    pub fn with_max_qubits(mut self, n: usize) -> Self {
        self.max_qubits = Some(n);
        self
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        let malformed = |msg: String| Err(ProviderError::MalformedConfig(msg));
        if self.provider_id.is_empty() || self.provider_id.contains('/') {
            return malformed(format!("invalid provider id {:?}", self.provider_id));
        }
        match self.kind {
            ProviderKind::RemoteHttp if self.endpoint.is_none() => {
                malformed(format!("{}: remote_http requires an endpoint", self.provider_id))
            }
            ProviderKind::LocalNoisy => match self.noise {
                None => malformed(format!("{}: local_noisy requires noise", self.provider_id)),
                Some(n) => n
                    .check()
                    .map_err(|e| ProviderError::MalformedConfig(format!("{}: {e}", self.provider_id))),
            },
            ProviderKind::MockDelay if self.delay.is_none() => {
                malformed(format!("{}: mock_delay requires a delay", self.provider_id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub provider_id: String,
    pub backend_name: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Position in the lifecycle; terminal states share the top rank.
    pub fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Done => "DONE",
            JobState::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl JobStatus {
    pub const QUEUED: JobStatus = JobStatus { state: JobState::Queued, error_message: None };
    pub const RUNNING: JobStatus = JobStatus { state: JobState::Running, error_message: None };
    pub const DONE: JobStatus = JobStatus { state: JobState::Done, error_message: None };

    pub fn failed(msg: impl Into<String>) -> Self {
        JobStatus { state: JobState::Failed, error_message: Some(msg.into()) }
    }

    /// Applies an observed status without ever moving backwards.
    pub fn advance(&mut self, observed: JobStatus) {
        if !self.state.is_terminal() && observed.state.rank() >= self.state.rank() {
            *self = observed;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider `{0}` is already registered")]
    DuplicateProvider(String),
    #[error("malformed provider config: {0}")]
    MalformedConfig(String),
    #[error("unknown backend `{provider}/{backend}`")]
    UnknownBackend { provider: String, backend: String },
    #[error("backend `{provider}/{backend}` is offline")]
    Offline { provider: String, backend: String },
    #[error("circuit width {width} exceeds backend capacity of {max} qubits")]
    CircuitTooWide { width: usize, max: usize },
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("unknown job handle `{0}`")]
    UnknownHandle(String),
    #[error("job `{job_id}` is not ready ({state})")]
    NotReady { job_id: String, state: JobState },
    #[error("job `{job_id}` failed: {message}")]
    JobFailed { job_id: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out waiting for job `{0}`")]
    Timeout(String),
}

/// Adapter over one provider. Implementations own their job bookkeeping and
/// must be safe to call from many threads at once.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    fn kind(&self) -> ProviderKind;

    /// Current descriptors in backend-name order.
    fn backends(&self) -> Vec<BackendDescriptor>;

    /// Enqueues a job and returns without waiting for it to run.
    fn submit(
        &self,
        backend: &str,
        circuit: Arc<Circuit>,
        shots: u64,
        options: &Params,
    ) -> Result<JobHandle, ProviderError>;

    fn status(&self, handle: &JobHandle) -> Result<JobStatus, ProviderError>;

    fn result(&self, handle: &JobHandle) -> Result<Counts, ProviderError>;

    /// Parks until the job is terminal or `timeout` elapses, returning the last
    /// observed status. The default implementation polls.
    fn wait(&self, handle: &JobHandle, timeout: Option<Duration>) -> Result<JobStatus, ProviderError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut pause = Duration::from_millis(1);
        loop {
            let status = self.status(handle)?;
            if status.state.is_terminal() || deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(status);
            }
            std::thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(20));
        }
    }
}

static NEXT_JOB: AtomicU64 = AtomicU64::new(1);

/// Fresh process-unique job id.
pub(crate) fn next_job_id(provider: &str) -> String {
    format!("{provider}-{}", NEXT_JOB.fetch_add(1, Ordering::Relaxed))
}

pub(crate) fn seed_of(options: &Params) -> u64 {
    options.get(SEED_OPTION).and_then(|v| v.as_u64()).unwrap_or(0)
}

pub fn build_provider(config: ProviderConfig) -> Result<Arc<dyn Provider>, ProviderError> {
    config.check()?;
    Ok(match config.kind {
        ProviderKind::RemoteHttp => Arc::new(RemoteProvider::new(&config)?),
        _ => Arc::new(LocalProvider::new(&config)),
    })
}

/// Registry of providers keyed by id. Reads are concurrent; registration
/// takes the write lock briefly.
#[derive(Default)]
pub struct ProviderRegistry {
    providers: RwLock<BTreeMap<String, Arc<dyn Provider>>>,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderRegistry").field("providers", &self.provider_ids()).finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_provider(&self, config: ProviderConfig) -> Result<String, ProviderError> {
        if self.providers.read().unwrap().contains_key(&config.provider_id) {
            return Err(ProviderError::DuplicateProvider(config.provider_id));
        }
        self.register(build_provider(config)?)
    }

    /// Registers a hand-built adapter.
    pub fn register(&self, provider: Arc<dyn Provider>) -> Result<String, ProviderError> {
        let id = provider.id().to_string();
        let mut map = self.providers.write().unwrap();
        if map.contains_key(&id) {
            return Err(ProviderError::DuplicateProvider(id));
        }
        map.insert(id.clone(), provider);
        Ok(id)
    }

    pub fn is_empty(&self) -> bool {
        self.providers.read().unwrap().is_empty()
    }

    pub fn provider_ids(&self) -> Vec<String> {
        self.providers.read().unwrap().keys().cloned().collect()
    }

    pub fn provider(&self, id: &str) -> Option<Arc<dyn Provider>> {
        self.providers.read().unwrap().get(id).cloned()
    }

    fn snapshot(&self) -> Vec<Arc<dyn Provider>> {
        self.providers.read().unwrap().values().cloned().collect()
    }

    /// Descriptors per provider, providers and backends in lexicographic
    /// order. With `online_only`, offline backends are dropped and providers
    /// left without backends are omitted.
    pub fn get_backends(&self, online_only: bool) -> BTreeMap<String, Vec<BackendDescriptor>> {
        let mut out = BTreeMap::new();
        for provider in self.snapshot() {
            let mut descs = provider.backends();
            descs.sort_by(|a, b| a.backend_name.cmp(&b.backend_name));
            if online_only {
                descs.retain(|d| d.online);
                if descs.is_empty() {
                    continue;
                }
            }
            out.insert(provider.id().to_string(), descs);
        }
        out
    }

    pub fn descriptor(&self, provider: &str, backend: &str) -> Option<BackendDescriptor> {
        self.provider(provider)?.backends().into_iter().find(|d| d.backend_name == backend)
    }

    /// Every backend flagged as an ideal simulator, as `provider/backend`.
    pub fn ideal_simulators(&self) -> Vec<String> {
        self.get_backends(false)
            .values()
            .flatten()
            .filter(|d| d.is_ideal_simulator)
            .map(|d| format!("{}/{}", d.provider_id, d.backend_name))
            .collect()
    }

    pub fn submit(
        &self,
        provider: &str,
        backend: &str,
        circuit: Arc<Circuit>,
        shots: u64,
        options: &Params,
    ) -> Result<JobHandle, ProviderError> {
        let adapter = self.provider(provider).ok_or_else(|| ProviderError::UnknownBackend {
            provider: provider.to_string(),
            backend: backend.to_string(),
        })?;
        adapter.submit(backend, circuit, shots, options)
    }

    fn adapter_for(&self, handle: &JobHandle) -> Result<Arc<dyn Provider>, ProviderError> {
        self.provider(&handle.provider_id)
            .ok_or_else(|| ProviderError::UnknownHandle(handle.job_id.clone()))
    }

    pub fn status(&self, handle: &JobHandle) -> Result<JobStatus, ProviderError> {
        self.adapter_for(handle)?.status(handle)
    }

    pub fn result(&self, handle: &JobHandle) -> Result<Counts, ProviderError> {
        self.adapter_for(handle)?.result(handle)
    }

    pub fn wait(&self, handle: &JobHandle, timeout: Option<Duration>) -> Result<JobStatus, ProviderError> {
        self.adapter_for(handle)?.wait(handle, timeout)
    }
}

/// Shared bookkeeping for adapters that track jobs in memory: one status and
/// optional result per job id, with a condvar for waiters.
#[derive(Default)]
pub(crate) struct JobTable {
    jobs: std::sync::Mutex<HashMap<String, (JobStatus, Option<Counts>)>>,
    changed: std::sync::Condvar,
}

impl JobTable {
    pub(crate) fn insert(&self, job_id: &str) {
        self.jobs.lock().unwrap().insert(job_id.to_string(), (JobStatus::QUEUED, None));
    }

    pub(crate) fn set(&self, job_id: &str, status: JobStatus, counts: Option<Counts>) {
        let mut jobs = self.jobs.lock().unwrap();
        if let Some(entry) = jobs.get_mut(job_id) {
            entry.0.advance(status);
            if counts.is_some() {
                entry.1 = counts;
            }
        }
        self.changed.notify_all();
    }

    pub(crate) fn status(&self, job_id: &str) -> Option<JobStatus> {
        self.jobs.lock().unwrap().get(job_id).map(|e| e.0.clone())
    }

    pub(crate) fn result(&self, job_id: &str) -> Result<Counts, ProviderError> {
        let jobs = self.jobs.lock().unwrap();
        let (status, counts) =
            jobs.get(job_id).ok_or_else(|| ProviderError::UnknownHandle(job_id.to_string()))?;
        match status.state {
            JobState::Done => Ok(counts.clone().expect("done job has counts")),
            JobState::Failed => Err(ProviderError::JobFailed {
                job_id: job_id.to_string(),
                message: status.error_message.clone().unwrap_or_default(),
            }),
            state => Err(ProviderError::NotReady { job_id: job_id.to_string(), state }),
        }
    }

    pub(crate) fn wait(&self, job_id: &str, timeout: Option<Duration>) -> Option<JobStatus> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut jobs = self.jobs.lock().unwrap();
        loop {
            let status = jobs.get(job_id)?.0.clone();
            if status.state.is_terminal() {
                return Some(status);
            }
            jobs = match deadline {
                None => self.changed.wait(jobs).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Some(status);
                    }
                    self.changed.wait_timeout(jobs, d - now).unwrap().0
                }
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ProviderRegistry {
        let r = ProviderRegistry::new();
        r.register_provider(ProviderConfig::local_ideal("local_ideal")).unwrap();
        r.register_provider(ProviderConfig::local_noisy("local_noisy", NoiseSpec::new(0.05).unwrap()))
            .unwrap();
        r
    }

    fn names(map: &BTreeMap<String, Vec<BackendDescriptor>>) -> BTreeMap<String, Vec<String>> {
        map.iter()
            .map(|(p, ds)| (p.clone(), ds.iter().map(|d| d.backend_name.clone()).collect()))
            .collect()
    }

    #[test]
    fn builtin_discovery() {
        let r = registry();
        let expected: BTreeMap<String, Vec<String>> = [
            ("local_ideal".to_string(), vec!["statevector".to_string()]),
            ("local_noisy".to_string(), vec!["noisy_statevector".to_string()]),
        ]
        .into();
        assert_eq!(names(&r.get_backends(true)), expected);
        assert_eq!(r.get_backends(false), r.get_backends(false));
        assert_eq!(r.ideal_simulators(), ["local_ideal/statevector"]);
    }

    #[test]
    fn empty_registry() {
        assert!(ProviderRegistry::new().get_backends(true).is_empty());
    }

    #[test]
    fn duplicate_and_malformed() {
        let r = registry();
        assert_eq!(
            r.register_provider(ProviderConfig::local_ideal("local_ideal")),
            Err(ProviderError::DuplicateProvider("local_ideal".into()))
        );
        let remote = ProviderConfig::new("r1", ProviderKind::RemoteHttp);
        assert!(matches!(r.register_provider(remote), Err(ProviderError::MalformedConfig(_))));
        let noisy = ProviderConfig::new("n1", ProviderKind::LocalNoisy);
        assert!(matches!(r.register_provider(noisy), Err(ProviderError::MalformedConfig(_))));
        let bad_p = ProviderConfig::local_noisy("n2", NoiseSpec { p_depolarizing: 2.0 });
        assert!(matches!(r.register_provider(bad_p), Err(ProviderError::MalformedConfig(_))));
        let slash = ProviderConfig::local_ideal("a/b");
        assert!(matches!(r.register_provider(slash), Err(ProviderError::MalformedConfig(_))));
    }

    #[test]
    fn offline_mock_filtered() {
        let r = registry();
        r.register_provider(
            ProviderConfig::mock_delay("mock", Duration::from_millis(10)).with_online(false),
        )
        .unwrap();
        assert!(!r.get_backends(true).contains_key("mock"));
        assert!(r.get_backends(false).contains_key("mock"));
    }

    #[test]
    fn status_monotone_advance() {
        let mut s = JobStatus::RUNNING;
        s.advance(JobStatus::QUEUED);
        assert_eq!(s, JobStatus::RUNNING);
        s.advance(JobStatus::DONE);
        s.advance(JobStatus::failed("late"));
        assert_eq!(s, JobStatus::DONE);
    }

    #[test]
    fn job_state_wire_names() {
        assert_eq!(serde_json::to_string(&JobState::Queued).unwrap(), "\"QUEUED\"");
        assert_eq!(serde_json::to_string(&JobStatus::DONE).unwrap(), r#"{"state":"DONE"}"#);
    }
}
