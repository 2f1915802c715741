//! Providers file and experiment file schemas.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use qexec_core::circuit::{sanitize_name, DEFAULT_CIRCUIT_NAME};
use qexec_core::policy::MULTIPLIER;
use qexec_core::provider::{ProviderConfig, ProviderKind};
use qexec_core::{parse_qasm, Circuit, ExperimentSpec, NoiseSpec, Params, QuantumExecutor};
use serde::Deserialize;

pub const ALL_ONLINE: &str = "all_online";
pub const DEFAULT_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Depolarizing probability, `local_noisy` only.
    #[serde(default)]
    pub noise: Option<f64>,
    /// Milliseconds, `mock_delay` only.
    #[serde(default)]
    pub delay: Option<u64>,
    #[serde(default)]
    pub online: Option<bool>,
    #[serde(default)]
    pub max_qubits: Option<usize>,
}

impl ProviderEntry {
    fn into_config(self, id: &str) -> Result<ProviderConfig> {
        let misplaced = |field: &str, owner: &str| anyhow::anyhow!("provider `{id}`: `{field}` only applies to {owner}");
        if self.endpoint.is_some() && self.kind != ProviderKind::RemoteHttp {
            return Err(misplaced("endpoint", "remote_http"));
        }
        if self.api_key.is_some() && self.kind != ProviderKind::RemoteHttp {
            return Err(misplaced("api_key", "remote_http"));
        }
        if self.noise.is_some() && self.kind != ProviderKind::LocalNoisy {
            return Err(misplaced("noise", "local_noisy"));
        }
        if self.delay.is_some() && self.kind != ProviderKind::MockDelay {
            return Err(misplaced("delay", "mock_delay"));
        }
        let mut cfg = match self.kind {
            ProviderKind::LocalIdeal => ProviderConfig::local_ideal(id),
            ProviderKind::LocalNoisy => {
                let p = self.noise.unwrap_or(DEFAULT_NOISE);
                ProviderConfig::local_noisy(id, NoiseSpec::new(p).with_context(|| format!("provider `{id}`"))?)
            }
            ProviderKind::MockDelay => {
                let ms = self.delay.with_context(|| format!("provider `{id}`: mock_delay requires `delay` (ms)"))?;
                ProviderConfig::mock_delay(id, Duration::from_millis(ms))
            }
            ProviderKind::RemoteHttp => {
                let url = self.endpoint.with_context(|| format!("provider `{id}`: remote_http requires `endpoint`"))?;
                let mut cfg = ProviderConfig::remote_http(id, url);
                if let Some(key) = self.api_key {
                    cfg = cfg.with_credential("api_key", key);
                }
                cfg
            }
        };
        if let Some(online) = self.online {
            cfg = cfg.with_online(online);
        }
        if let Some(n) = self.max_qubits {
            cfg = cfg.with_max_qubits(n);
        }
        cfg.check().with_context(|| format!("provider `{id}`"))?;
        Ok(cfg)
    }
}

/// Parses a providers file: a map from provider id to its settings.
pub fn parse_providers(text: &str) -> Result<Vec<ProviderConfig>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let entries: Option<BTreeMap<String, ProviderEntry>> = serde_yaml::from_str(text)?;
    entries.unwrap_or_default().into_iter().map(|(id, e)| e.into_config(&id)).collect()
}

pub fn load_providers(path: &Path) -> Result<Vec<ProviderConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_providers(&text).with_context(|| format!("invalid providers file {}", path.display()))
}

/// Used when no providers file is given.
pub fn default_providers() -> Vec<ProviderConfig> {
    vec![
        ProviderConfig::local_ideal("local_ideal"),
        ProviderConfig::local_noisy("local_noisy", NoiseSpec { p_depolarizing: DEFAULT_NOISE }),
    ]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BackendSelection {
    Explicit(BTreeMap<String, Vec<String>>),
    Keyword(String),
}

fn default_split() -> String {
    MULTIPLIER.into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// QASM file paths, relative to the experiment file, or inline programs.
    pub circuits: Vec<String>,
    pub shots: u64,
    pub backends: BackendSelection,
    #[serde(default = "default_split")]
    pub split_policy: String,
    #[serde(default)]
    pub merge_policy: Option<String>,
    #[serde(default = "yes")]
    pub parallel: bool,
    #[serde(default = "yes")]
    pub wait: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy_context: Params,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ExperimentFile = serde_yaml::from_str(text)?;
        if file.circuits.is_empty() {
            bail!("`circuits` must list at least one circuit");
        }
        if file.shots == 0 {
            bail!("`shots` must be at least 1");
        }
        match &file.backends {
            BackendSelection::Keyword(k) if k != ALL_ONLINE => {
                bail!("`backends` must be a map of provider to backend names or \"{ALL_ONLINE}\", got {k:?}")
            }
            BackendSelection::Explicit(m) if m.values().all(Vec::is_empty) => {
                bail!("`backends` names no backend")
            }
            _ => {}
        }
        Ok(file)
    }
}

/// An experiment file with its circuits loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub path: PathBuf,
    pub text: String,
    pub file: ExperimentFile,
    pub circuits: Vec<Circuit>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file = ExperimentFile::parse(&text).with_context(|| format!("invalid experiment file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut circuits = Vec::with_capacity(file.circuits.len());
        for (i, entry) in file.circuits.iter().enumerate() {
            circuits.push(load_circuit(base, i, entry)?);
        }
        Ok(Experiment { path: path.to_path_buf(), text, file, circuits })
    }

    /// Resolves `all_online` against the executor's providers.
    pub fn spec(&self, executor: &QuantumExecutor) -> ExperimentSpec {
        let backends = match &self.file.backends {
            BackendSelection::Explicit(m) => m.clone(),
            BackendSelection::Keyword(_) => executor.online_backends(),
        };
        let f = &self.file;
        let mut spec = ExperimentSpec::new(self.circuits.clone(), f.shots, backends)
            .split(f.split_policy.clone())
            .parallel(f.parallel)
            .wait(f.wait)
            .seed(f.seed);
        spec.merge_policy = f.merge_policy.clone();
        spec.policy_context = f.policy_context.clone();
        spec
    }
}

fn load_circuit(base: &Path, index: usize, entry: &str) -> Result<Circuit> {
    if entry.contains("OPENQASM") {
        let mut c = parse_qasm(entry).with_context(|| format!("inline circuit #{index}"))?;
        if c.name == DEFAULT_CIRCUIT_NAME {
            c.name = format!("circuit_{index}");
        }
        return Ok(c);
    }
    let path = base.join(entry);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading circuit {}", path.display()))?;
    let mut c = parse_qasm(&text).with_context(|| format!("circuit {}", path.display()))?;
    if c.name == DEFAULT_CIRCUIT_NAME {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            c.name = sanitize_name(stem);
        }
    }
    Ok(c)
}
