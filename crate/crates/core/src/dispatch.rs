//! Planned assignment of circuits to provider/backend targets.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::circuit::Circuit;
use crate::provider::ProviderRegistry;
use crate::qasm::{parse_qasm, serialize_qasm};
use crate::Params;

/// A `(provider, backend)` pair. Ordering is lexicographic by provider, then
/// backend, which is the canonical iteration order everywhere in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub provider: String,
    pub backend: String,
}

impl Target {
    pub fn new(provider: impl Into<String>, backend: impl Into<String>) -> Self {
        Target { provider: provider.into(), backend: backend.into() }
    }

    /// Parses the `provider/backend` form. The split is on the first `/`.
    pub fn parse(s: &str) -> Option<Self> {
        let (p, b) = s.split_once('/')?;
        (!p.is_empty() && !b.is_empty()).then(|| Target::new(p, b))
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.provider, self.backend)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub circuit: Arc<Circuit>,
    pub shots: u64,
    pub options: Params,
    /// Position of this job in the canonical flattening of its dispatch.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("invalid circuit `{name}`: {reason}")]
    InvalidCircuit { name: String, reason: String },
    #[error("malformed dispatch JSON: {0}")]
    Json(String),
}

/// Problems found by [`Dispatch::validate_against`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchViolation {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(Target),
    #[error("backend `{0}` is offline")]
    Offline(Target),
    #[error("job {ordinal}: circuit width {width} exceeds `{target}` capacity of {max} qubits")]
    TooWide { ordinal: usize, target: Target, width: usize, max: usize },
}

/// Ordered map provider → backend → jobs. Backends never hold an empty job
/// list, and ordinals always run `0..total_jobs()` in canonical order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    assignments: BTreeMap<String, BTreeMap<String, Vec<JobSpec>>>,
}

impl Dispatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_job(
        &mut self,
        provider: impl Into<String>,
        backend: impl Into<String>,
        circuit: impl Into<Arc<Circuit>>,
        shots: u64,
        options: Params,
    ) -> Result<&mut Self, DispatchError> {
        if shots == 0 {
            return Err(DispatchError::ZeroShots);
        }
        let circuit = circuit.into();
        let violations = circuit.validate();
        if !violations.is_empty() {
            let reason: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(DispatchError::InvalidCircuit {
                name: circuit.name.clone(),
                reason: reason.join("; "),
            });
        }
        self.assignments.entry(provider.into()).or_default().entry(backend.into()).or_default().push(
            JobSpec { circuit, shots, options, ordinal: 0 },
        );
        self.renumber();
        Ok(self)
    }

    fn renumber(&mut self) {
        for (k, job) in self.assignments.values_mut().flat_map(|b| b.values_mut()).flatten().enumerate() {
            job.ordinal = k;
        }
    }

    pub fn assignments(&self) -> &BTreeMap<String, BTreeMap<String, Vec<JobSpec>>> {
        &self.assignments
    }

    /// Jobs with their targets, in canonical order.
    pub fn jobs(&self) -> impl Iterator<Item = (Target, &JobSpec)> {
        self.assignments.iter().flat_map(|(p, backends)| {
            backends
                .iter()
                .flat_map(move |(b, jobs)| jobs.iter().map(move |j| (Target::new(p, b), j)))
        })
    }

    pub fn targets(&self) -> Vec<Target> {
        self.assignments
            .iter()
            .flat_map(|(p, backends)| backends.keys().map(move |b| Target::new(p, b)))
            .collect()
    }

    pub fn total_jobs(&self) -> usize {
        self.assignments.values().flat_map(|b| b.values()).map(Vec::len).sum()
    }

    pub fn total_shots(&self) -> u64 {
        self.jobs().map(|(_, j)| j.shots).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Checks every target and circuit width against the registry without
    /// submitting anything.
    pub fn validate_against(&self, registry: &ProviderRegistry) -> Vec<DispatchViolation> {
        let known = registry.get_backends(false);
        let mut out = Vec::new();
        for (provider, backends) in &self.assignments {
            let Some(descriptors) = known.get(provider) else {
                out.push(DispatchViolation::UnknownProvider(provider.clone()));
                continue;
            };
            for (backend, jobs) in backends {
                let target = Target::new(provider, backend);
                let Some(desc) = descriptors.iter().find(|d| &d.backend_name == backend) else {
                    out.push(DispatchViolation::UnknownBackend(target));
                    continue;
                };
                if !desc.online {
                    out.push(DispatchViolation::Offline(target.clone()));
                }
                for job in jobs {
                    if job.circuit.width > desc.max_qubits {
                        out.push(DispatchViolation::TooWide {
                            ordinal: job.ordinal,
                            target: target.clone(),
                            width: job.circuit.width,
                            max: desc.max_qubits,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dispatch serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DispatchError> {
        serde_json::from_str(text).map_err(|e| DispatchError::Json(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireJobSpec {
    qasm: String,
    shots: u64,
    #[serde(default)]
    options: Params,
}

type WireDispatch = BTreeMap<String, BTreeMap<String, Vec<WireJobSpec>>>;

impl Serialize for Dispatch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire: WireDispatch = self
            .assignments
            .iter()
            .map(|(p, backends)| {
                let backends = backends
                    .iter()
                    .map(|(b, jobs)| {
                        let jobs = jobs
                            .iter()
                            .map(|j| WireJobSpec {
                                qasm: serialize_qasm(&j.circuit),
                                shots: j.shots,
                                options: j.options.clone(),
                            })
                            .collect();
                        (b.clone(), jobs)
                    })
                    .collect();
                (p.clone(), backends)
            })
            .collect();
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Dispatch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = WireDispatch::deserialize(deserializer)?;
        let mut dispatch = Dispatch::new();
        for (p, backends) in wire {
            for (b, jobs) in backends {
                if jobs.is_empty() {
                    return Err(D::Error::custom(format!("backend {p}/{b} has no jobs")));
                }
                for j in jobs {
                    let circuit = parse_qasm(&j.qasm).map_err(D::Error::custom)?;
                    dispatch
                        .add_job(p.clone(), b.clone(), circuit, j.shots, j.options)
                        .map_err(D::Error::custom)?;
                }
            }
        }
        Ok(dispatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::GateOp;
    use crate::provider::{ProviderConfig, ProviderRegistry};

    fn bell() -> Arc<Circuit> {
        Arc::new(Circuit::bell())
    }

    #[test]
    fn first_job_has_ordinal_zero() {
        let mut d = Dispatch::new();
        d.add_job("p1", "b1", bell(), 1024, Params::new()).unwrap();
        assert_eq!(d.total_jobs(), 1);
        assert_eq!(d.jobs().next().unwrap().1.ordinal, 0);
    }

    #[test]
    fn duplicates_keep_insertion_order() {
        let mut d = Dispatch::new();
        let a = Arc::new(Circuit::new("a", 1));
        let b = Arc::new(Circuit::new("b", 1));
        d.add_job("p", "b", a, 1, Params::new()).unwrap();
        d.add_job("p", "b", b, 2, Params::new()).unwrap();
        let names: Vec<_> = d.jobs().map(|(_, j)| j.circuit.name.clone()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn rejects_zero_shots_and_bad_circuits() {
        let mut d = Dispatch::new();
        assert_eq!(d.add_job("p", "b", bell(), 0, Params::new()).unwrap_err(), DispatchError::ZeroShots);
        let bad = Circuit::new("bad", 1).with_gates([GateOp::h(2)]);
        assert!(matches!(
            d.add_job("p", "b", bad, 1, Params::new()),
            Err(DispatchError::InvalidCircuit { .. })
        ));
        assert!(d.is_empty());
    }

    #[test]
    fn ordinals_follow_canonical_order() {
        let mut d = Dispatch::new();
        d.add_job("zeta", "b", bell(), 1, Params::new()).unwrap();
        d.add_job("alpha", "y", bell(), 1, Params::new()).unwrap();
        d.add_job("alpha", "x", bell(), 1, Params::new()).unwrap();
        let order: Vec<_> = d.jobs().map(|(t, j)| (t.to_string(), j.ordinal)).collect();
        assert_eq!(order, [("alpha/x".into(), 0), ("alpha/y".into(), 1), ("zeta/b".into(), 2)]);
    }

    #[test]
    fn totals() {
        let mut d = Dispatch::new();
        assert_eq!((d.total_jobs(), d.total_shots()), (0, 0));
        d.add_job("p", "b", bell(), 100, Params::new()).unwrap();
        assert_eq!((d.total_jobs(), d.total_shots()), (1, 100));
    }

    #[test]
    fn scenario_one_shape_totals() {
        // 2 circuits x 3 backends, full shots on each pair
        let mut d = Dispatch::new();
        let circuits = [bell(), Arc::new(Circuit::ghz(3))];
        for c in &circuits {
            for (p, b) in [("a", "x"), ("a", "y"), ("b", "z")] {
                d.add_job(p, b, c.clone(), 1024, Params::new()).unwrap();
            }
        }
        assert_eq!(d.total_jobs(), 2 * 3);
        assert_eq!(d.total_shots(), 2 * 3 * 1024);
    }

    #[test]
    fn validate_against_registry() {
        let registry = ProviderRegistry::new();
        registry.register_provider(ProviderConfig::local_ideal("local_ideal")).unwrap();
        let mut ok = Dispatch::new();
        ok.add_job("local_ideal", "statevector", bell(), 10, Params::new()).unwrap();
        assert!(ok.validate_against(&registry).is_empty());

        let mut unknown = Dispatch::new();
        unknown.add_job("nope", "statevector", bell(), 10, Params::new()).unwrap();
        assert_eq!(
            unknown.validate_against(&registry),
            [DispatchViolation::UnknownProvider("nope".into())]
        );

        let mut wide = Dispatch::new();
        wide.add_job("local_ideal", "statevector", Circuit::new("w", 25), 10, Params::new()).unwrap();
        let v = wide.validate_against(&registry);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], DispatchViolation::TooWide { width: 25, max: 20, .. }));
    }

    #[test]
    fn json_shape() {
        let mut d = Dispatch::new();
        let mut opts = Params::new();
        opts.insert("tag".into(), "x".into());
        d.add_job("p", "b", Circuit::new("circuit", 1), 5, opts).unwrap();
        let json: serde_json::Value = serde_json::from_str(&d.to_json()).unwrap();
        assert_eq!(json["p"]["b"][0]["shots"], 5);
        assert_eq!(json["p"]["b"][0]["qasm"], "OPENQASM 2.0;\nqreg q[1];\n");
        assert_eq!(json["p"]["b"][0]["options"]["tag"], "x");
        assert_eq!(Dispatch::from_json(&d.to_json()).unwrap(), d);
        assert!(Dispatch::from_json(r#"{"p":{"b":[]}}"#).is_err());
    }
}
