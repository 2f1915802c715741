use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use ureq::Agent;

use super::{
    next_job_id, seed_of, BackendDescriptor, JobHandle, JobState, JobStatus, Provider,
    ProviderConfig, ProviderError, ProviderKind,
};
use crate::circuit::Circuit;
use crate::counts::Counts;
use crate::qasm::serialize_qasm;
use crate::wire::{
    BackendInfo, ErrorBody, JobStateResponse, SubmitRequest, SubmitResponse, API_KEY_HEADER,
};
use crate::Params;

/// Consecutive transport failures after which a job is declared lost.
const MAX_TRANSPORT_FAILURES: u32 = 3;

struct RemoteJob {
    remote_id: String,
    last: JobStatus,
    transport_failures: u32,
}

/// Client for the remote job service. Discovery failure marks the last known
/// backends offline instead of erroring.
pub struct RemoteProvider {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    agent: Agent,
    known: Mutex<Vec<BackendDescriptor>>,
    jobs: Mutex<HashMap<String, RemoteJob>>,
}

type Response = ureq::http::Response<ureq::Body>;

impl RemoteProvider {
    pub(crate) fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = config.endpoint.clone().expect("checked config");
        let endpoint = endpoint.trim_end_matches('/').to_string();
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(ProviderError::MalformedConfig(format!(
                "{}: endpoint must be an http(s) URL, got {endpoint:?}",
                config.provider_id
            )));
        }
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(2)))
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Ok(RemoteProvider {
            id: config.provider_id.clone(),
            endpoint,
            api_key: config.credentials.get("api_key").cloned(),
            agent,
            known: Mutex::new(Vec::new()),
            jobs: Mutex::new(HashMap::new()),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.endpoint)
    }

    fn get(&self, path: &str) -> Result<Response, ProviderError> {
        let mut req = self.agent.get(self.url(path));
        if let Some(key) = &self.api_key {
            req = req.header(API_KEY_HEADER, key);
        }
        req.call().map_err(|e| ProviderError::Transport(e.to_string()))
    }

    fn error_text(resp: &mut Response) -> String {
        let code = resp.status();
        match resp.body_mut().read_json::<ErrorBody>() {
            Ok(body) => body.error,
            Err(_) => format!("HTTP {code}"),
        }
    }

    fn discover(&self) -> Result<Vec<BackendDescriptor>, ProviderError> {
        let mut resp = self.get("/backends")?;
        if resp.status() != 200 {
            return Err(ProviderError::Transport(Self::error_text(&mut resp)));
        }
        let mut infos: Vec<BackendInfo> =
            resp.body_mut().read_json().map_err(|e| ProviderError::Transport(e.to_string()))?;
        infos.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(infos
            .into_iter()
            .map(|b| BackendDescriptor {
                provider_id: self.id.clone(),
                backend_name: b.name,
                online: b.online,
                max_qubits: b.max_qubits,
                is_ideal_simulator: b.is_ideal_simulator,
                queue_latency_hint: None,
            })
            .collect())
    }

    fn lookup(&self, handle: &JobHandle) -> Result<(String, JobStatus), ProviderError> {
        if handle.provider_id != self.id {
            return Err(ProviderError::UnknownHandle(handle.job_id.clone()));
        }
        let jobs = self.jobs.lock().unwrap();
        let job = jobs.get(&handle.job_id).ok_or_else(|| ProviderError::UnknownHandle(handle.job_id.clone()))?;
        Ok((job.remote_id.clone(), job.last.clone()))
    }

    fn record(&self, job_id: &str, observed: Option<JobStatus>) -> JobStatus {
        let mut jobs = self.jobs.lock().unwrap();
        let job = jobs.get_mut(job_id).expect("looked up");
        match observed {
            Some(status) => {
                job.transport_failures = 0;
                job.last.advance(status);
            }
            None => {
                job.transport_failures += 1;
                if job.transport_failures >= MAX_TRANSPORT_FAILURES {
                    job.last.advance(JobStatus::failed("remote service unreachable"));
                }
            }
        }
        job.last.clone()
    }
}

impl Provider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteHttp
    }

    fn backends(&self) -> Vec<BackendDescriptor> {
        let mut known = self.known.lock().unwrap();
        match self.discover() {
            Ok(found) => *known = found,
            Err(_) => known.iter_mut().for_each(|d| d.online = false),
        }
        known.clone()
    }

    fn submit(
        &self,
        backend: &str,
        circuit: Arc<Circuit>,
        shots: u64,
        options: &Params,
    ) -> Result<JobHandle, ProviderError> {
        let desc = {
            let cached = self.known.lock().unwrap().iter().find(|d| d.backend_name == backend).cloned();
            match cached {
                Some(d) if d.online => Some(d),
                _ => self.backends().into_iter().find(|d| d.backend_name == backend),
            }
        };
        let desc = desc.ok_or_else(|| ProviderError::UnknownBackend {
            provider: self.id.clone(),
            backend: backend.to_string(),
        })?;
        if !desc.online {
            return Err(ProviderError::Offline { provider: self.id.clone(), backend: backend.into() });
        }
        if circuit.width > desc.max_qubits {
            return Err(ProviderError::CircuitTooWide { width: circuit.width, max: desc.max_qubits });
        }
        let body = SubmitRequest {
            backend: backend.to_string(),
            qasm: serialize_qasm(&circuit),
            shots,
            seed: seed_of(options),
        };
        let mut req = self.agent.post(self.url("/jobs"));
        if let Some(key) = &self.api_key {
            req = req.header(API_KEY_HEADER, key);
        }
        let mut resp = req.send_json(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let accepted: SubmitResponse = match resp.status().as_u16() {
            201 => resp.body_mut().read_json().map_err(|e| ProviderError::Transport(e.to_string()))?,
            404 => {
                return Err(ProviderError::UnknownBackend {
                    provider: self.id.clone(),
                    backend: backend.to_string(),
                })
            }
            _ => return Err(ProviderError::InvalidJob(Self::error_text(&mut resp))),
        };
        let job_id = next_job_id(&self.id);
        self.jobs.lock().unwrap().insert(
            job_id.clone(),
            RemoteJob { remote_id: accepted.job_id, last: JobStatus::QUEUED, transport_failures: 0 },
        );
        Ok(JobHandle {
            job_id,
            provider_id: self.id.clone(),
            backend_name: backend.to_string(),
            submitted_at: Utc::now(),
        })
    }

    fn status(&self, handle: &JobHandle) -> Result<JobStatus, ProviderError> {
        let (remote_id, last) = self.lookup(handle)?;
        if last.state.is_terminal() {
            return Ok(last);
        }
        let observed = match self.get(&format!("/jobs/{remote_id}")) {
            Ok(mut resp) => match resp.status().as_u16() {
                200 => resp.body_mut().read_json::<JobStateResponse>().ok().map(|r| match r.state {
                    JobState::Failed => JobStatus::failed(r.error_message.unwrap_or_default()),
                    state => JobStatus { state, error_message: None },
                }),
                404 => Some(JobStatus::failed("job unknown to remote service")),
                _ => None,
            },
            Err(_) => None,
        };
        Ok(self.record(&handle.job_id, observed))
    }

    fn result(&self, handle: &JobHandle) -> Result<Counts, ProviderError> {
        let (remote_id, _) = self.lookup(handle)?;
        let status = self.status(handle)?;
        match status.state {
            JobState::Failed => {
                return Err(ProviderError::JobFailed {
                    job_id: handle.job_id.clone(),
                    message: status.error_message.unwrap_or_default(),
                })
            }
            JobState::Queued | JobState::Running => {
                return Err(ProviderError::NotReady { job_id: handle.job_id.clone(), state: status.state })
            }
            JobState::Done => {}
        }
        let mut resp = self.get(&format!("/jobs/{remote_id}/result"))?;
        match resp.status().as_u16() {
            200 => resp.body_mut().read_json().map_err(|e| ProviderError::Transport(e.to_string())),
            409 => Err(ProviderError::NotReady { job_id: handle.job_id.clone(), state: JobState::Running }),
            _ => Err(ProviderError::JobFailed {
                job_id: handle.job_id.clone(),
                message: Self::error_text(&mut resp),
            }),
        }
    }
}
