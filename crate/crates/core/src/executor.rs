//! Entry point tying providers, policies, dispatches and collectors together.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::circuit::Circuit;
use crate::collector::ResultCollector;
use crate::dispatch::{Dispatch, DispatchViolation, JobSpec, Target};
use crate::policy::{Policy, PolicyError, PolicyRegistry, IDEAL_SIMULATORS_KEY, MULTIPLIER};
use crate::provider::{JobState, ProviderConfig, ProviderError, ProviderRegistry, SEED_OPTION};
use crate::Params;

/// How often a job watcher re-reads provider status while a job is live.
const STATUS_POLL: Duration = Duration::from_millis(25);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutorError {
    #[error("no providers registered")]
    EmptyRegistry,
    #[error("dispatch failed pre-flight validation: {}", join(.0))]
    Preflight(Vec<DispatchViolation>),
    #[error("backend `{0}` does not resolve in the provider registry")]
    UnresolvedBackend(Target),
    #[error("split policy `{policy}` produced jobs for targets it was not given: {}", join(.targets))]
    ForeignTargets { policy: String, targets: Vec<Target> },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Declarative description of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub circuits: Vec<Arc<Circuit>>,
    pub shots: u64,
    pub backends: BTreeMap<String, Vec<String>>,
    pub split_policy: String,
    pub merge_policy: Option<String>,
    pub parallel: bool,
    pub wait: bool,
    pub base_seed: u64,
    pub policy_context: Params,
}

impl ExperimentSpec {
    /// Multiplier split, parallel, blocking, seed 0.
    pub fn new(
        circuits: impl IntoIterator<Item = Circuit>,
        shots: u64,
        backends: BTreeMap<String, Vec<String>>,
    ) -> Self {
        ExperimentSpec {
            circuits: circuits.into_iter().map(Arc::new).collect(),
            shots,
            backends,
            split_policy: MULTIPLIER.into(),
            merge_policy: None,
            parallel: true,
            wait: true,
            base_seed: 0,
            policy_context: Params::new(),
        }
    }

    pub fn split(mut self, name: impl Into<String>) -> Self {
        self.split_policy = name.into();
        self
    }

    pub fn merge(mut self, name: impl Into<String>) -> Self {
        self.merge_policy = Some(name.into());
        self
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn wait(mut self, wait: bool) -> Self {
        self.wait = wait;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn context(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.policy_context.insert(key.into(), value.into());
        self
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            parallel: self.parallel,
            wait: self.wait,
            merge_policy: self.merge_policy.clone(),
            policy_context: self.policy_context.clone(),
            base_seed: self.base_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub parallel: bool,
    pub wait: bool,
    pub merge_policy: Option<String>,
    pub policy_context: Params,
    pub base_seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallel: true,
            wait: true,
            merge_policy: None,
            policy_context: Params::new(),
            base_seed: 0,
        }
    }
}

/// Orchestrator over a shared provider registry and a policy registry.
#[derive(Debug, Default)]
pub struct QuantumExecutor {
    registry: Arc<ProviderRegistry>,
    policies: RwLock<PolicyRegistry>,
}

impl QuantumExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_registry(registry: Arc<ProviderRegistry>) -> Self {
        QuantumExecutor { registry, policies: RwLock::default() }
    }

    pub fn from_configs(configs: impl IntoIterator<Item = ProviderConfig>) -> Result<Self, ProviderError> {
        let registry = ProviderRegistry::new();
        for config in configs {
            registry.register_provider(config)?;
        }
        Ok(Self::with_registry(Arc::new(registry)))
    }

    pub fn registry(&self) -> &Arc<ProviderRegistry> {
        &self.registry
    }

    pub fn add_policy(&self, name: impl Into<String>, policy: Policy) -> Result<(), ExecutorError> {
        self.policies.write().unwrap().register(name, policy)?;
        Ok(())
    }

    pub fn policies(&self) -> PolicyRegistry {
        self.policies.read().unwrap().clone()
    }

    /// Every online backend, grouped by provider.
    pub fn online_backends(&self) -> BTreeMap<String, Vec<String>> {
        self.registry
            .get_backends(true)
            .into_iter()
            .map(|(p, ds)| (p, ds.into_iter().map(|d| d.backend_name).collect()))
            .collect()
    }

    /// Resolves targets and applies the split policy, without running anything.
    pub fn plan(&self, spec: &ExperimentSpec) -> Result<Dispatch, ExecutorError> {
        let split = self.policies.read().unwrap().split(&spec.split_policy)?;
        if let Some(name) = &spec.merge_policy {
            self.policies.read().unwrap().merge(name)?;
        }
        let known = self.registry.get_backends(false);
        let mut targets = Vec::new();
        for (provider, backends) in &spec.backends {
            for backend in backends {
                let target = Target::new(provider, backend);
                let found = known
                    .get(provider)
                    .is_some_and(|ds| ds.iter().any(|d| &d.backend_name == backend));
                if !found {
                    return Err(ExecutorError::UnresolvedBackend(target));
                }
                targets.push(target);
            }
        }
        let dispatch = split(&spec.circuits, spec.shots, &targets, &Params::new())?;
        let allowed: BTreeSet<&Target> = targets.iter().collect();
        let foreign: Vec<Target> =
            dispatch.targets().into_iter().filter(|t| !allowed.contains(t)).collect();
        if !foreign.is_empty() {
            return Err(ExecutorError::ForeignTargets { policy: spec.split_policy.clone(), targets: foreign });
        }
        Ok(dispatch)
    }

    pub fn run_experiment(&self, spec: &ExperimentSpec) -> Result<ResultCollector, ExecutorError> {
        let dispatch = self.plan(spec)?;
        self.run_dispatch(dispatch, spec.run_options())
    }

    /// Validates, submits and watches every job of `dispatch`. Job `k` is
    /// seeded with `base_seed + k`. With `wait`, returns once the run is
    /// terminal; otherwise immediately.
    pub fn run_dispatch(&self, dispatch: Dispatch, options: RunOptions) -> Result<ResultCollector, ExecutorError> {
        if self.registry.is_empty() {
            return Err(ExecutorError::EmptyRegistry);
        }
        let violations = dispatch.validate_against(&self.registry);
        if !violations.is_empty() {
            return Err(ExecutorError::Preflight(violations));
        }
        let merge = match &options.merge_policy {
            Some(name) => {
                let policy = self.policies.read().unwrap().merge(name)?;
                let mut context = options.policy_context.clone();
                context.entry(IDEAL_SIMULATORS_KEY.to_string()).or_insert_with(|| {
                    self.registry.ideal_simulators().into_iter().map(Value::from).collect()
                });
                Some((name.clone(), policy, context))
            }
            None => None,
        };
        let collector = ResultCollector::new(uuid::Uuid::new_v4().to_string(), &dispatch, merge);

        let jobs: Vec<(Target, JobSpec)> = dispatch
            .jobs()
            .map(|(t, spec)| {
                let mut spec = spec.clone();
                let seed = options.base_seed.wrapping_add(spec.ordinal as u64);
                spec.options.insert(SEED_OPTION.into(), seed.into());
                (t, spec)
            })
            .collect();
        let run = Run { registry: self.registry.clone(), collector: collector.clone() };
        let parallel = options.parallel;
        thread::Builder::new()
            .name(format!("qexec-run-{}", &collector.run_id()[..8]))
            .spawn(move || if parallel { run.parallel(jobs) } else { run.serial(jobs) })
            .expect("spawn run coordinator");

        if options.wait {
            collector.wait(None);
        }
        Ok(collector)
    }
}

struct Run {
    registry: Arc<ProviderRegistry>,
    collector: ResultCollector,
}

impl Run {
    fn submit(&self, target: &Target, spec: &JobSpec) -> Option<crate::provider::JobHandle> {
        match self.registry.submit(
            &target.provider,
            &target.backend,
            spec.circuit.clone(),
            spec.shots,
            &spec.options,
        ) {
            Ok(handle) => {
                self.collector.set_handle(spec.ordinal, handle.clone());
                Some(handle)
            }
            Err(e) => {
                self.collector.fail(spec.ordinal, format!("submission failed: {e}"));
                None
            }
        }
    }

    fn watch(registry: &ProviderRegistry, collector: &ResultCollector, ordinal: usize, handle: &crate::provider::JobHandle) {
        loop {
            let status = match registry.wait(handle, Some(STATUS_POLL)) {
                Ok(s) => s,
                Err(e) => {
                    collector.fail(ordinal, e.to_string());
                    return;
                }
            };
            match status.state {
                JobState::Done => {
                    match registry.result(handle) {
                        Ok(counts) => collector.complete(ordinal, counts),
                        Err(e) => collector.fail(ordinal, e.to_string()),
                    }
                    return;
                }
                JobState::Failed => {
                    collector.fail(ordinal, status.error_message.unwrap_or_else(|| "job failed".into()));
                    return;
                }
                _ => collector.observe(ordinal, status),
            }
        }
    }

    /// One job at a time: submit, wait, next.
    fn serial(self, jobs: Vec<(Target, JobSpec)>) {
        for (target, spec) in &jobs {
            if let Some(handle) = self.submit(target, spec) {
                Self::watch(&self.registry, &self.collector, spec.ordinal, &handle);
            }
        }
    }

    /// Submits every job up front in canonical order, then watches each
    /// backend's jobs on its own thread.
    fn parallel(self, jobs: Vec<(Target, JobSpec)>) {
        let mut per_backend: BTreeMap<Target, Vec<(usize, crate::provider::JobHandle)>> = BTreeMap::new();
        for (target, spec) in &jobs {
            if let Some(handle) = self.submit(target, spec) {
                per_backend.entry(target.clone()).or_default().push((spec.ordinal, handle));
            }
        }
        thread::scope(|scope| {
            for handles in per_backend.values() {
                let (registry, collector) = (&self.registry, &self.collector);
                scope.spawn(move || {
                    for (ordinal, handle) in handles {
                        Self::watch(registry, collector, *ordinal, handle);
                    }
                });
            }
        });
    }
}
