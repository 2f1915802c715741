use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::Utc;

use super::{
    next_job_id, seed_of, BackendDescriptor, JobHandle, JobStatus, JobTable, Provider,
    ProviderConfig, ProviderError, ProviderKind, IDEAL_BACKEND, MOCK_BACKEND, NOISY_BACKEND,
};
use crate::circuit::Circuit;
use crate::counts::Counts;
use crate::simulator::{NoiseSpec, SimError, Simulator};
use crate::Params;

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Ideal,
    Noisy(NoiseSpec),
}

struct Task {
    job_id: String,
    circuit: Arc<Circuit>,
    shots: u64,
    seed: u64,
}

/// In-process simulator provider with a single backend. `local_ideal` and
/// `local_noisy` run jobs one at a time in submission order on a dedicated
/// worker thread, like a device queue. `mock_delay` holds every job in
/// QUEUED for the configured delay, independently of other jobs, then runs
/// the ideal kernel.
pub struct LocalProvider {
    id: String,
    kind: ProviderKind,
    backend: &'static str,
    kernel: Kernel,
    simulator: Simulator,
    delay: Option<Duration>,
    online: bool,
    max_qubits: usize,
    table: Arc<JobTable>,
    queue: Mutex<Option<Sender<Task>>>,
}

impl LocalProvider {
    pub(crate) fn new(config: &ProviderConfig) -> Self {
        let simulator = Simulator::default();
        let (backend, kernel) = match config.kind {
            ProviderKind::LocalNoisy => {
                (NOISY_BACKEND, Kernel::Noisy(config.noise.expect("checked config")))
            }
            ProviderKind::MockDelay => (MOCK_BACKEND, Kernel::Ideal),
            _ => (IDEAL_BACKEND, Kernel::Ideal),
        };
        LocalProvider {
            id: config.provider_id.clone(),
            kind: config.kind,
            backend,
            kernel,
            simulator,
            delay: config.delay.filter(|_| config.kind == ProviderKind::MockDelay),
            online: config.online.unwrap_or(true),
            max_qubits: config.max_qubits.unwrap_or(simulator.max_width),
            table: Arc::new(JobTable::default()),
            queue: Mutex::new(None),
        }
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            provider_id: self.id.clone(),
            backend_name: self.backend.to_string(),
            online: self.online,
            max_qubits: self.max_qubits,
            is_ideal_simulator: self.kind == ProviderKind::LocalIdeal,
            queue_latency_hint: self.delay,
        }
    }

    fn execute(simulator: Simulator, kernel: Kernel, table: &JobTable, task: Task) {
        table.set(&task.job_id, JobStatus::RUNNING, None);
        let outcome: Result<Counts, SimError> = match kernel {
            Kernel::Ideal => simulator.sample(&task.circuit, task.shots, task.seed),
            Kernel::Noisy(noise) => simulator.sample_noisy(&task.circuit, task.shots, noise, task.seed),
        };
        match outcome {
            Ok(counts) => table.set(&task.job_id, JobStatus::DONE, Some(counts)),
            Err(e) => table.set(&task.job_id, JobStatus::failed(e.to_string()), None),
        }
    }

    fn enqueue(&self, task: Task) {
        let (simulator, kernel, table) = (self.simulator, self.kernel, self.table.clone());
        if let Some(delay) = self.delay {
            thread::spawn(move || {
                thread::sleep(delay);
                Self::execute(simulator, kernel, &table, task);
            });
            return;
        }
        let mut slot = self.queue.lock().unwrap();
        let sender = slot.get_or_insert_with(|| {
            let (tx, rx) = mpsc::channel::<Task>();
            thread::Builder::new()
                .name(format!("qexec-{}", self.id))
                .spawn(move || {
                    for task in rx {
                        Self::execute(simulator, kernel, &table, task);
                    }
                })
                .expect("spawn backend worker");
            tx
        });
        sender.send(task).expect("backend worker alive");
    }

    fn own(&self, handle: &JobHandle) -> Result<(), ProviderError> {
        if handle.provider_id == self.id && self.table.status(&handle.job_id).is_some() {
            Ok(())
        } else {
            Err(ProviderError::UnknownHandle(handle.job_id.clone()))
        }
    }
}

impl Provider for LocalProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn backends(&self) -> Vec<BackendDescriptor> {
        vec![self.descriptor()]
    }

    fn submit(
        &self,
        backend: &str,
        circuit: Arc<Circuit>,
        shots: u64,
        options: &Params,
    ) -> Result<JobHandle, ProviderError> {
        if backend != self.backend {
            return Err(ProviderError::UnknownBackend {
                provider: self.id.clone(),
                backend: backend.to_string(),
            });
        }
        if !self.online {
            return Err(ProviderError::Offline { provider: self.id.clone(), backend: backend.into() });
        }
        if circuit.width > self.max_qubits {
            return Err(ProviderError::CircuitTooWide { width: circuit.width, max: self.max_qubits });
        }
        if shots == 0 {
            return Err(ProviderError::InvalidJob("shots must be at least 1".into()));
        }
        let job_id = next_job_id(&self.id);
        self.table.insert(&job_id);
        let handle = JobHandle {
            job_id: job_id.clone(),
            provider_id: self.id.clone(),
            backend_name: backend.to_string(),
            submitted_at: Utc::now(),
        };
        self.enqueue(Task { job_id, circuit, shots, seed: seed_of(options) });
        Ok(handle)
    }

    fn status(&self, handle: &JobHandle) -> Result<JobStatus, ProviderError> {
        self.own(handle)?;
        self.table.status(&handle.job_id).ok_or_else(|| ProviderError::UnknownHandle(handle.job_id.clone()))
    }

    fn result(&self, handle: &JobHandle) -> Result<Counts, ProviderError> {
        self.own(handle)?;
        self.table.result(&handle.job_id)
    }

    fn wait(&self, handle: &JobHandle, timeout: Option<Duration>) -> Result<JobStatus, ProviderError> {
        self.own(handle)?;
        self.table
            .wait(&handle.job_id, timeout)
            .ok_or_else(|| ProviderError::UnknownHandle(handle.job_id.clone()))
    }
}
