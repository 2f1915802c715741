//! On-disk run store. Each run owns one directory under the store root:
//!
//! ```text
//! <root>/<run_id>/
//!   experiment.yaml   snapshot of the experiment file
//!   dispatch.json     planned jobs
//!   progress.jsonl    one status event per line, appended while the run is live
//!   results.json      result tree, written at finalization
//!   merged.json       merge output, when the experiment names a merge policy
//!   record.json       run summary; its presence marks the run finished
//! ```
//!
//! Every file except `progress.jsonl` is written exactly once.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use qexec_core::collector::JobRecord;
use qexec_core::provider::JobState;
use qexec_core::{Counts, ResultTree};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const HOME_ENV: &str = "QEXEC_HOME";
pub const DEFAULT_ROOT: &str = "qexec-runs";

pub const EXPERIMENT: &str = "experiment.yaml";
pub const DISPATCH: &str = "dispatch.json";
pub const PROGRESS: &str = "progress.jsonl";
pub const RESULTS: &str = "results.json";
pub const MERGED: &str = "merged.json";
pub const RECORD: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub at: DateTime<Utc>,
    pub ordinal: usize,
    pub provider: String,
    pub backend: String,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedOutput {
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment_file: String,
    pub split_policy: String,
    pub merge_policy: Option<String>,
    pub parallel: bool,
    pub seed: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub exit_code: u8,
    pub jobs: Vec<JobRecord>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    /// `$QEXEC_HOME`, else `./qexec-runs`.
    pub fn from_env() -> Self {
        match std::env::var_os(HOME_ENV) {
            Some(p) if !p.is_empty() => Store::new(p),
            _ => Store::new(DEFAULT_ROOT),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates the directory for a new run. Fails if it already exists.
    pub fn create(&self, run_id: &str) -> Result<RunDir> {
        check_id(run_id)?;
        fs::create_dir_all(&self.root).with_context(|| format!("creating run store {}", self.root.display()))?;
        let path = self.root.join(run_id);
        fs::create_dir(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        Ok(RunDir { path })
    }

    pub fn open(&self, run_id: &str) -> Result<RunDir> {
        check_id(run_id)?;
        let path = self.root.join(run_id);
        if !path.join(DISPATCH).is_file() {
            bail!("no run `{run_id}` in {}", self.root.display());
        }
        Ok(RunDir { path })
    }
}

fn check_id(run_id: &str) -> Result<()> {
    if run_id.is_empty() || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        bail!("malformed run id {run_id:?}");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes a file that must not exist yet.
    pub fn write_once(&self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.path.join(name);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn write_json_once<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_once(name, text.as_bytes())
    }

    pub fn read(&self, name: &str) -> Result<Option<String>> {
        let path = self.path.join(name);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn progress_log(&self) -> Result<File> {
        let path = self.path.join(PROGRESS);
        OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))
    }

    /// Events in file order. A torn trailing line from a writer still in
    /// flight is ignored.
    pub fn events(&self) -> Result<Vec<ProgressEvent>> {
        let path = self.path.join(PROGRESS);
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if let Ok(ev) = serde_json::from_str(&line) {
                out.push(ev);
            }
        }
        Ok(out)
    }

    pub fn record(&self) -> Result<Option<RunRecord>> {
        match self.read(RECORD)? {
            Some(text) => Ok(Some(serde_json::from_str(&text).context("corrupt record.json")?)),
            None => Ok(None),
        }
    }

    /// Tree assembled from DONE events, for runs still in flight.
    pub fn partial_results(&self) -> Result<ResultTree> {
        let mut done: Vec<ProgressEvent> =
            self.events()?.into_iter().filter(|e| e.state == JobState::Done && e.counts.is_some()).collect();
        done.sort_by_key(|e| e.ordinal);
        done.dedup_by_key(|e| e.ordinal);
        let mut tree = ResultTree::new();
        for e in done {
            tree.push(e.provider, e.backend, e.counts.expect("filtered"));
        }
        Ok(tree)
    }
}

pub fn append_event(log: &mut File, event: &ProgressEvent) -> Result<()> {
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    log.write_all(line.as_bytes())?;
    log.flush()?;
    Ok(())
}
