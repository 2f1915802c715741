//! Live tracking of a run: per-job lifecycle, partial and complete result
//! trees, and the memoized merge-policy view.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::counts::Counts;
use crate::dispatch::{Dispatch, Target};
use crate::policy::{MergeFn, PolicyError};
use crate::provider::{JobHandle, JobState, JobStatus};
use crate::Params;

/// Metadata key listing the ordinals of failed jobs in merged output.
pub const FAILED_JOBS_KEY: &str = "failed_jobs";

/// provider → backend → Counts in dispatch order for that backend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultTree(BTreeMap<String, BTreeMap<String, Vec<Counts>>>);

impl ResultTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, provider: impl Into<String>, backend: impl Into<String>, counts: Counts) {
        self.0.entry(provider.into()).or_default().entry(backend.into()).or_default().push(counts);
    }

    pub fn get(&self, provider: &str, backend: &str) -> Option<&[Counts]> {
        self.0.get(provider)?.get(backend).map(Vec::as_slice)
    }

    pub fn providers(&self) -> &BTreeMap<String, BTreeMap<String, Vec<Counts>>> {
        &self.0
    }

    /// `(target, runs)` per backend in canonical order.
    pub fn backends(&self) -> impl Iterator<Item = (Target, &[Counts])> {
        self.0.iter().flat_map(|(p, backends)| {
            backends.iter().map(move |(b, runs)| (Target::new(p, b), runs.as_slice()))
        })
    }

    /// Every Counts in canonical order.
    pub fn leaves(&self) -> impl Iterator<Item = &Counts> {
        self.0.values().flat_map(|b| b.values()).flatten()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One line of the tabular result view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub provider: String,
    pub backend: String,
    /// Index of the Counts in the canonical flattening of the tree. For a
    /// complete run this is the job's dispatch ordinal.
    pub job: usize,
    pub bitstring: String,
    pub count: u64,
}

/// Flattens a tree into rows: canonical provider/backend/job order, then
/// bitstrings lexicographically.
pub fn to_table(tree: &ResultTree) -> Vec<TableRow> {
    let mut rows = Vec::new();
    let mut job = 0;
    for (target, runs) in tree.backends() {
        for counts in runs {
            for (bits, n) in counts.iter() {
                rows.push(TableRow {
                    provider: target.provider.clone(),
                    backend: target.backend.clone(),
                    job,
                    bitstring: bits.to_string(),
                    count: n,
                });
            }
            job += 1;
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub ordinal: usize,
    pub target: Target,
    pub shots: u64,
    pub handle: Option<JobHandle>,
    pub status: JobStatus,
    #[serde(skip)]
    counts: Option<Counts>,
}

impl JobRecord {
    /// Histogram of a DONE job.
    pub fn counts(&self) -> Option<&Counts> {
        self.counts.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub jobs: Vec<JobRecord>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunState {
    pub fn is_terminal(&self) -> bool {
        self.jobs.iter().all(|j| j.status.state.is_terminal())
    }

    fn tree(&self) -> ResultTree {
        let mut tree = ResultTree::new();
        for job in &self.jobs {
            if let Some(counts) = &job.counts {
                tree.push(&job.target.provider, &job.target.backend, counts.clone());
            }
        }
        tree
    }

    fn failed_ordinals(&self) -> Vec<usize> {
        self.jobs.iter().filter(|j| j.status.state == JobState::Failed).map(|j| j.ordinal).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectorError {
    #[error("timed out after {waited:?} with {pending} job(s) pending")]
    Timeout { waited: Duration, pending: usize, partial: ResultTree },
    #[error("run is not terminal ({pending} job(s) pending)")]
    NotTerminal { pending: usize },
    #[error("no merge policy configured for this run")]
    NoMergePolicy,
    #[error("merge policy `{name}` failed: {source}")]
    MergeFailed { name: String, source: PolicyError },
}

struct MergeSetup {
    name: String,
    policy: Arc<MergeFn>,
    context: Params,
}

struct Inner {
    state: Mutex<RunState>,
    changed: Condvar,
    merge: Option<MergeSetup>,
    merged: Mutex<Option<(Value, Params)>>,
}

/// Shared handle on a run. Cloning is cheap; all clones observe the same run.
#[derive(Clone)]
pub struct ResultCollector {
    inner: Arc<Inner>,
}

impl fmt::Debug for ResultCollector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = self.inner.state.lock().unwrap();
        f.debug_struct("ResultCollector")
            .field("run_id", &state.run_id)
            .field("jobs", &state.jobs.len())
            .field("terminal", &state.is_terminal())
            .finish()
    }
}

impl ResultCollector {
    /// Creates a collector with every job of `dispatch` QUEUED.
    pub fn new(
        run_id: impl Into<String>,
        dispatch: &Dispatch,
        merge: Option<(String, Arc<MergeFn>, Params)>,
    ) -> Self {
        let jobs = dispatch
            .jobs()
            .map(|(target, spec)| JobRecord {
                ordinal: spec.ordinal,
                target,
                shots: spec.shots,
                handle: None,
                status: JobStatus::QUEUED,
                counts: None,
            })
            .collect();
        let now = Utc::now();
        let mut state = RunState { run_id: run_id.into(), jobs, started_at: now, finished_at: None };
        if state.is_terminal() {
            state.finished_at = Some(now);
        }
        ResultCollector {
            inner: Arc::new(Inner {
                state: Mutex::new(state),
                changed: Condvar::new(),
                merge: merge.map(|(name, policy, context)| MergeSetup { name, policy, context }),
                merged: Mutex::new(None),
            }),
        }
    }

    pub fn run_id(&self) -> String {
        self.inner.state.lock().unwrap().run_id.clone()
    }

    pub fn merge_policy(&self) -> Option<&str> {
        self.inner.merge.as_ref().map(|m| m.name.as_str())
    }

    pub fn policy_context(&self) -> Option<&Params> {
        self.inner.merge.as_ref().map(|m| &m.context)
    }

    fn update(&self, ordinal: usize, f: impl FnOnce(&mut JobRecord)) {
        let mut state = self.inner.state.lock().unwrap();
        if let Some(job) = state.jobs.get_mut(ordinal) {
            if job.status.state.is_terminal() {
                return;
            }
            f(job);
        }
        if state.finished_at.is_none() && state.is_terminal() {
            state.finished_at = Some(Utc::now());
        }
        self.inner.changed.notify_all();
    }

    pub(crate) fn set_handle(&self, ordinal: usize, handle: JobHandle) {
        self.update(ordinal, |job| job.handle = Some(handle));
    }

    pub(crate) fn observe(&self, ordinal: usize, status: JobStatus) {
        if status.state == JobState::Done {
            // A DONE job must arrive through `complete` together with its counts.
            return;
        }
        self.update(ordinal, |job| job.status.advance(status));
    }

    pub(crate) fn complete(&self, ordinal: usize, counts: Counts) {
        self.update(ordinal, |job| {
            job.counts = Some(counts);
            job.status.advance(JobStatus::DONE);
        });
    }

    pub(crate) fn fail(&self, ordinal: usize, message: impl Into<String>) {
        let message = message.into();
        self.update(ordinal, |job| job.status.advance(JobStatus::failed(message)));
    }

    /// Snapshot of every job's status, without blocking on progress.
    pub fn status(&self) -> BTreeMap<usize, JobStatus> {
        let state = self.inner.state.lock().unwrap();
        state.jobs.iter().map(|j| (j.ordinal, j.status.clone())).collect()
    }

    pub fn run_state(&self) -> RunState {
        self.inner.state.lock().unwrap().clone()
    }

    pub fn is_terminal(&self) -> bool {
        self.inner.state.lock().unwrap().is_terminal()
    }

    /// Ordinals whose Counts are present.
    pub fn completed_ordinals(&self) -> Vec<usize> {
        let state = self.inner.state.lock().unwrap();
        state.jobs.iter().filter(|j| j.counts.is_some()).map(|j| j.ordinal).collect()
    }

    /// Parks until the run is terminal or `timeout` elapses. Returns whether
    /// the run is terminal.
    pub fn wait(&self, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut state = self.inner.state.lock().unwrap();
        while !state.is_terminal() {
            state = match deadline {
                None => self.inner.changed.wait(state).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return false;
                    }
                    self.inner.changed.wait_timeout(state, d - now).unwrap().0
                }
            };
        }
        true
    }

    /// With `block`, waits for the run to finish (bounded by `timeout`) and
    /// returns the complete tree. Without it, returns the Counts of jobs that
    /// are DONE right now; unfinished and failed jobs are simply absent.
    pub fn get_results(&self, block: bool, timeout: Option<Duration>) -> Result<ResultTree, CollectorError> {
        if block {
            let started = Instant::now();
            if !self.wait(timeout) {
                let state = self.inner.state.lock().unwrap();
                let pending = state.jobs.iter().filter(|j| !j.status.state.is_terminal()).count();
                return Err(CollectorError::Timeout {
                    waited: started.elapsed(),
                    pending,
                    partial: state.tree(),
                });
            }
        }
        Ok(self.inner.state.lock().unwrap().tree())
    }

    /// Applies the run's merge policy to the complete tree. Computed once and
    /// memoized. Metadata always carries `failed_jobs`.
    pub fn get_merged_results(&self) -> Result<(Value, Params), CollectorError> {
        let setup = self.inner.merge.as_ref().ok_or(CollectorError::NoMergePolicy)?;
        let mut memo = self.inner.merged.lock().unwrap();
        if let Some(done) = memo.as_ref() {
            return Ok(done.clone());
        }
        let (tree, failed) = {
            let state = self.inner.state.lock().unwrap();
            if !state.is_terminal() {
                let pending = state.jobs.iter().filter(|j| !j.status.state.is_terminal()).count();
                return Err(CollectorError::NotTerminal { pending });
            }
            (state.tree(), state.failed_ordinals())
        };
        let (value, mut metadata) = (setup.policy)(&tree, &setup.context)
            .map_err(|source| CollectorError::MergeFailed { name: setup.name.clone(), source })?;
        metadata.insert(FAILED_JOBS_KEY.into(), failed.into());
        *memo = Some((value, metadata));
        Ok(memo.clone().expect("just stored"))
    }
}
