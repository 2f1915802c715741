use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use chrono::Utc;
use clap::{Parser, Subcommand};
use qexec_core::collector::JobRecord;
use qexec_core::executor::ExecutorError;
use qexec_core::provider::{JobState, IDEAL_BACKEND, NOISY_BACKEND};
use qexec_core::{to_table, Dispatch, QuantumExecutor, ResultCollector, ResultTree, RunOptions, Target};
use qexec_server::{ServerBackend, ServerConfig};
use serde_json::Value;

use crate::config::{default_providers, load_providers, Experiment, ExperimentFile, DEFAULT_NOISE};
use crate::store::{self, append_event, MergedOutput, ProgressEvent, RunDir, RunRecord, Store};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_PREFLIGHT: u8 = 2;
pub const EXIT_JOB_FAILED: u8 = 3;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Parser)]
#[command(name = "qexec", version, about = "Run declarative quantum experiments across simulator and remote backends")]
pub struct Cli {
    /// Providers file. Without one, a local ideal and a local noisy simulator are configured.
    #[arg(long, global = true, env = "QEXEC_PROVIDERS")]
    pub providers: Option<PathBuf>,
    /// Run store root. Overrides QEXEC_HOME (default ./qexec-runs).
    #[arg(long, global = true)]
    pub home: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the backends of every configured provider.
    Backends {
        /// Only backends currently accepting jobs.
        #[arg(long)]
        online: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run an experiment file and record it in the run store.
    Run {
        file: PathBuf,
        /// Print the run id as soon as jobs are submitted. The process still
        /// stays alive until the run record is finalized.
        #[arg(long)]
        no_wait: bool,
    },
    /// Per-job states of a stored run.
    Status {
        run_id: String,
        #[arg(long)]
        json: bool,
    },
    /// Result tree of a stored run.
    Results {
        run_id: String,
        /// Output of the experiment's merge policy instead of the raw tree.
        #[arg(long)]
        merged: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Serve the simulators over HTTP for `remote_http` providers.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = qexec_server::DEFAULT_PORT)]
        port: u16,
        /// Milliseconds each job stays QUEUED before running.
        #[arg(long, default_value_t = 0)]
        delay: u64,
        /// Depolarizing probability of the noisy backend.
        #[arg(long, default_value_t = DEFAULT_NOISE)]
        noise: f64,
        #[arg(long, env = "QEXEC_API_KEY")]
        api_key: Option<String>,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail<T>(code: u8, msg: impl std::fmt::Display) -> Result<T, Failure> {
    Err(Failure { code, error: anyhow!("{msg}") })
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(cli: Cli) -> Result<u8, Failure> {
    let store = cli.home.clone().map(Store::new).unwrap_or_else(Store::from_env);
    match cli.command {
        Command::Backends { online, json } => backends(&executor(&cli.providers)?, online, json),
        Command::Run { ref file, no_wait } => run(&executor(&cli.providers)?, &store, file, no_wait),
        Command::Status { ref run_id, json } => status(&store, run_id, json),
        Command::Results { ref run_id, merged, csv } => results(&store, run_id, merged, csv),
        Command::Serve { host, port, delay, noise, api_key } => serve(host, port, delay, noise, api_key),
    }
}

fn executor(providers: &Option<PathBuf>) -> Result<QuantumExecutor, Failure> {
    let configs = match providers {
        Some(path) => load_providers(path).exit_with(EXIT_INVALID)?,
        None => default_providers(),
    };
    QuantumExecutor::from_configs(configs).exit_with(EXIT_INVALID)
}

fn print_table(headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        println!("{}", padded.join("  ").trim_end());
    };
    line(headers.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
}

fn backends(exec: &QuantumExecutor, online: bool, json: bool) -> Result<u8, Failure> {
    let all = exec.registry().get_backends(online);
    let descriptors: Vec<_> = all.into_values().flatten().collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&descriptors).exit_with(EXIT_INVALID)?);
        return Ok(EXIT_OK);
    }
    let rows: Vec<Vec<String>> = descriptors
        .iter()
        .map(|d| {
            vec![
                d.provider_id.clone(),
                d.backend_name.clone(),
                if d.online { "online" } else { "offline" }.to_string(),
                d.max_qubits.to_string(),
                if d.is_ideal_simulator { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    print_table(&["PROVIDER", "BACKEND", "STATUS", "MAX_QUBITS", "IDEAL"], &rows);
    Ok(EXIT_OK)
}

fn preflight(e: ExecutorError) -> Failure {
    Failure { code: EXIT_PREFLIGHT, error: e.into() }
}

fn run(exec: &QuantumExecutor, store: &Store, file: &std::path::Path, no_wait: bool) -> Result<u8, Failure> {
    let experiment = Experiment::load(file).exit_with(EXIT_INVALID)?;
    let spec = experiment.spec(exec);
    let dispatch = exec.plan(&spec).map_err(preflight)?;
    let wait = spec.wait && !no_wait;
    let options = RunOptions { wait: false, ..spec.run_options() };
    let collector = exec.run_dispatch(dispatch.clone(), options).map_err(preflight)?;
    let started_at = collector.run_state().started_at;

    let run_id = collector.run_id();
    let dir = store.create(&run_id).exit_with(EXIT_INVALID)?;
    dir.write_once(store::EXPERIMENT, experiment.text.as_bytes()).exit_with(EXIT_INVALID)?;
    dir.write_once(store::DISPATCH, dispatch.to_json().as_bytes()).exit_with(EXIT_INVALID)?;
    if !wait {
        println!("{run_id}");
        let _ = std::io::stdout().flush();
    }

    monitor(&collector, &dir).exit_with(EXIT_INVALID)?;
    let record = finalize(&collector, &dir, &experiment, started_at).exit_with(EXIT_INVALID)?;

    if wait {
        let done = record.jobs.iter().filter(|j| j.status.state == JobState::Done).count();
        eprintln!("{done}/{} jobs done, results in {}", record.jobs.len(), dir.path().display());
        for job in record.jobs.iter().filter(|j| j.status.state == JobState::Failed) {
            eprintln!(
                "job {} on {} failed: {}",
                job.ordinal,
                job.target,
                job.status.error_message.as_deref().unwrap_or("unknown error")
            );
        }
        println!("{run_id}");
    }
    Ok(record.exit_code)
}

/// Appends an event whenever a job changes state or gains its provider job
/// id, until every job is terminal.
fn monitor(collector: &ResultCollector, dir: &RunDir) -> anyhow::Result<()> {
    let mut log = dir.progress_log()?;
    let mut seen: BTreeMap<usize, (JobState, bool)> = BTreeMap::new();
    loop {
        let terminal = collector.is_terminal();
        for job in collector.run_state().jobs {
            let key = (job.status.state, job.handle.is_some());
            if seen.get(&job.ordinal) == Some(&key) {
                continue;
            }
            seen.insert(job.ordinal, key);
            append_event(&mut log, &event(&job))?;
        }
        if terminal {
            return Ok(());
        }
        collector.wait(Some(POLL));
    }
}

fn event(job: &JobRecord) -> ProgressEvent {
    ProgressEvent {
        at: Utc::now(),
        ordinal: job.ordinal,
        provider: job.target.provider.clone(),
        backend: job.target.backend.clone(),
        state: job.status.state,
        job_id: job.handle.as_ref().map(|h| h.job_id.clone()),
        error_message: job.status.error_message.clone(),
        counts: job.counts().cloned(),
    }
}

fn finalize(
    collector: &ResultCollector,
    dir: &RunDir,
    experiment: &Experiment,
    started_at: chrono::DateTime<Utc>,
) -> anyhow::Result<RunRecord> {
    let tree = collector.get_results(false, None)?;
    dir.write_once(store::RESULTS, tree.to_json().as_bytes())?;

    let state = collector.run_state();
    let any_failed = state.jobs.iter().any(|j| j.status.state == JobState::Failed);
    let mut exit_code = if any_failed { EXIT_JOB_FAILED } else { EXIT_OK };

    if let Some(policy) = collector.merge_policy() {
        let merged = match collector.get_merged_results() {
            Ok((value, meta)) => MergedOutput {
                policy: policy.to_string(),
                value: Some(value),
                metadata: Some(Value::Object(meta.into_iter().collect())),
                error: None,
            },
            Err(e) => {
                eprintln!("merge policy `{policy}` failed: {e}");
                if exit_code == EXIT_OK {
                    exit_code = EXIT_INVALID;
                }
                MergedOutput { policy: policy.to_string(), value: None, metadata: None, error: Some(e.to_string()) }
            }
        };
        dir.write_json_once(store::MERGED, &merged)?;
    }

    let f = &experiment.file;
    let record = RunRecord {
        run_id: state.run_id.clone(),
        experiment_file: experiment.path.display().to_string(),
        split_policy: f.split_policy.clone(),
        merge_policy: f.merge_policy.clone(),
        parallel: f.parallel,
        seed: f.seed,
        started_at,
        finished_at: state.finished_at.unwrap_or_else(Utc::now),
        exit_code,
        jobs: state.jobs,
    };
    dir.write_json_once(store::RECORD, &record)?;
    Ok(record)
}

struct JobView {
    ordinal: usize,
    target: Target,
    shots: u64,
    state: JobState,
    job_id: Option<String>,
    error: Option<String>,
}

fn job_views(dir: &RunDir, record: Option<&RunRecord>) -> anyhow::Result<Vec<JobView>> {
    if let Some(record) = record {
        return Ok(record
            .jobs
            .iter()
            .map(|j| JobView {
                ordinal: j.ordinal,
                target: j.target.clone(),
                shots: j.shots,
                state: j.status.state,
                job_id: j.handle.as_ref().map(|h| h.job_id.clone()),
                error: j.status.error_message.clone(),
            })
            .collect());
    }
    let dispatch = Dispatch::from_json(&dir.read(store::DISPATCH)?.context("missing dispatch.json")?)?;
    let mut views: BTreeMap<usize, JobView> = dispatch
        .jobs()
        .map(|(target, spec)| {
            let view = JobView {
                ordinal: spec.ordinal,
                target,
                shots: spec.shots,
                state: JobState::Queued,
                job_id: None,
                error: None,
            };
            (spec.ordinal, view)
        })
        .collect();
    for ev in dir.events()? {
        if let Some(v) = views.get_mut(&ev.ordinal) {
            v.state = ev.state;
            v.job_id = ev.job_id.or(v.job_id.take());
            v.error = ev.error_message;
        }
    }
    Ok(views.into_values().collect())
}

fn status(store: &Store, run_id: &str, json: bool) -> Result<u8, Failure> {
    let dir = store.open(run_id).exit_with(EXIT_INVALID)?;
    let record = dir.record().exit_with(EXIT_INVALID)?;
    let views = job_views(&dir, record.as_ref()).exit_with(EXIT_INVALID)?;
    let finished = record.is_some();
    if json {
        let jobs: Vec<Value> = views
            .iter()
            .map(|v| {
                serde_json::json!({
                    "ordinal": v.ordinal,
                    "provider": v.target.provider,
                    "backend": v.target.backend,
                    "shots": v.shots,
                    "state": v.state,
                    "job_id": v.job_id,
                    "error_message": v.error,
                })
            })
            .collect();
        let out = serde_json::json!({
            "run_id": run_id,
            "finished": finished,
            "exit_code": record.as_ref().map(|r| r.exit_code),
            "jobs": jobs,
        });
        println!("{}", serde_json::to_string_pretty(&out).exit_with(EXIT_INVALID)?);
        return Ok(EXIT_OK);
    }
    let terminal = views.iter().filter(|v| v.state.is_terminal()).count();
    match &record {
        Some(r) => println!("run {run_id}: finished, exit code {}", r.exit_code),
        None => println!("run {run_id}: in progress, {terminal}/{} jobs terminal", views.len()),
    }
    let rows: Vec<Vec<String>> = views
        .iter()
        .map(|v| {
            vec![
                v.ordinal.to_string(),
                v.target.to_string(),
                v.shots.to_string(),
                serde_json::to_value(v.state).ok().and_then(|s| s.as_str().map(String::from)).unwrap_or_default(),
                v.job_id.clone().unwrap_or_else(|| "-".into()),
                v.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    print_table(&["JOB", "TARGET", "SHOTS", "STATE", "JOB_ID", "ERROR"], &rows);
    Ok(EXIT_OK)
}

fn results(store: &Store, run_id: &str, merged: bool, csv: bool) -> Result<u8, Failure> {
    let dir = store.open(run_id).exit_with(EXIT_INVALID)?;
    if merged {
        return merged_results(&dir, run_id, csv);
    }
    let (text, tree) = match dir.read(store::RESULTS).exit_with(EXIT_INVALID)? {
        Some(text) => {
            let tree = ResultTree::from_json(&text).exit_with(EXIT_INVALID)?;
            (text, tree)
        }
        None => {
            let tree = dir.partial_results().exit_with(EXIT_INVALID)?;
            eprintln!("run {run_id} is still in progress; showing {} completed jobs", tree.leaf_count());
            (tree.to_json(), tree)
        }
    };
    if csv {
        let mut w = csv::Writer::from_writer(std::io::stdout().lock());
        for row in to_table(&tree) {
            w.serialize(row).exit_with(EXIT_INVALID)?;
        }
        w.flush().exit_with(EXIT_INVALID)?;
    } else {
        println!("{}", text.trim_end());
    }
    Ok(EXIT_OK)
}

fn merged_results(dir: &RunDir, run_id: &str, csv: bool) -> Result<u8, Failure> {
    let snapshot = dir.read(store::EXPERIMENT).exit_with(EXIT_INVALID)?.unwrap_or_default();
    let file = ExperimentFile::parse(&snapshot).exit_with(EXIT_INVALID)?;
    let Some(policy) = file.merge_policy else {
        return fail(EXIT_INVALID, format!("run {run_id} has no merge policy"));
    };
    let Some(text) = dir.read(store::MERGED).exit_with(EXIT_INVALID)? else {
        return fail(EXIT_INVALID, format!("run {run_id} is still in progress; merged output for `{policy}` not yet available"));
    };
    let merged: MergedOutput = serde_json::from_str(&text).exit_with(EXIT_INVALID)?;
    let Some(value) = merged.value else {
        return fail(EXIT_INVALID, format!("merge policy `{policy}` failed: {}", merged.error.unwrap_or_default()));
    };
    if !csv {
        println!("{}", serde_json::to_string_pretty(&value).exit_with(EXIT_INVALID)?);
        return Ok(EXIT_OK);
    }
    let Value::Object(map) = value else {
        return fail(EXIT_INVALID, format!("merge output of `{policy}` is not a key/value map"));
    };
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["key", "value"]).exit_with(EXIT_INVALID)?;
    for (k, v) in map {
        let cell = match v {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            other => return fail(EXIT_INVALID, format!("merge output entry `{k}` is not a scalar: {other}")),
        };
        w.write_record([k, cell]).exit_with(EXIT_INVALID)?;
    }
    w.flush().exit_with(EXIT_INVALID)?;
    Ok(EXIT_OK)
}

fn serve(host: String, port: u16, delay: u64, noise: f64, api_key: Option<String>) -> Result<u8, Failure> {
    if !(0.0..=1.0).contains(&noise) {
        return fail(EXIT_INVALID, format!("--noise must be in [0, 1], got {noise}"));
    }
    let config = ServerConfig {
        host,
        port,
        delay: Duration::from_millis(delay),
        backends: vec![ServerBackend::ideal(IDEAL_BACKEND), ServerBackend::noisy(NOISY_BACKEND, noise)],
        api_key,
    };
    qexec_server::run_blocking(config, |addr| println!("listening on http://{addr}")).exit_with(EXIT_INVALID)?;
    Ok(EXIT_OK)
}
