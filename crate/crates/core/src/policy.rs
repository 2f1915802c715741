//! Split policies turn `(circuits, shots, targets)` into a [`Dispatch`];
//! merge policies fold a finished [`ResultTree`] into one value. Both are
//! plain callables looked up by name in a [`PolicyRegistry`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::circuit::Circuit;
use crate::collector::ResultTree;
use crate::counts::Counts;
use crate::dispatch::{Dispatch, DispatchError, Target};
use crate::Params;

pub const MULTIPLIER: &str = "multiplier";
pub const EVEN: &str = "even";
pub const SUM: &str = "sum";
pub const TVD: &str = "tvd";

/// Built-in names. Re-registering one under its own kind is a duplicate;
/// taking one for the other kind is refused as reserved.
pub const RESERVED: [&str; 4] = [MULTIPLIER, EVEN, SUM, TVD];

/// Context key naming the reference backend for `tvd`, as `provider/backend`.
pub const REFERENCE_KEY: &str = "reference";
/// Context key listing ideal-simulator backends, filled in by the executor.
pub const IDEAL_SIMULATORS_KEY: &str = "ideal_simulators";

pub type SplitFn =
    dyn Fn(&[Arc<Circuit>], u64, &[Target], &Params) -> Result<Dispatch, PolicyError> + Send + Sync;
pub type MergeFn = dyn Fn(&ResultTree, &Params) -> Result<(Value, Params), PolicyError> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Split,
    Merge,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Split => "split",
            PolicyKind::Merge => "merge",
        })
    }
}

#[derive(Clone)]
pub enum Policy {
    Split(Arc<SplitFn>),
    Merge(Arc<MergeFn>),
}

impl Policy {
    pub fn split<F>(f: F) -> Self
    where
        F: Fn(&[Arc<Circuit>], u64, &[Target], &Params) -> Result<Dispatch, PolicyError>
            + Send
            + Sync
            + 'static,
    {
        Policy::Split(Arc::new(f))
    }

    pub fn merge<F>(f: F) -> Self
    where
        F: Fn(&ResultTree, &Params) -> Result<(Value, Params), PolicyError> + Send + Sync + 'static,
    {
        Policy::Merge(Arc::new(f))
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Split(_) => PolicyKind::Split,
            Policy::Merge(_) => PolicyKind::Merge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("{kind} policy `{name}` is already registered")]
    Duplicate { kind: PolicyKind, name: String },
    #[error("`{0}` is a reserved built-in policy name")]
    Reserved(String),
    #[error("unknown {kind} policy `{name}`")]
    Unknown { kind: PolicyKind, name: String },
    #[error("no targets to split across")]
    NoTargets,
    #[error("inconsistent bitstring widths: {0:?}")]
    InconsistentWidth(Vec<usize>),
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("reference backend {0} not found in results")]
    ReferenceMissing(String),
    #[error("reference backend ambiguous between {0:?}; set context key `reference`")]
    ReferenceAmbiguous(Vec<String>),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("{0}")]
    Failed(String),
}

fn canonical(targets: &[Target]) -> Vec<Target> {
    targets.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Every circuit on every target with the full shot count.
pub fn split_multiplier(
    circuits: &[Arc<Circuit>],
    shots: u64,
    targets: &[Target],
    options: &Params,
) -> Result<Dispatch, PolicyError> {
    if shots == 0 {
        return Err(DispatchError::ZeroShots.into());
    }
    if targets.is_empty() && !circuits.is_empty() {
        return Err(PolicyError::NoTargets);
    }
    let mut d = Dispatch::new();
    for circuit in circuits {
        for t in canonical(targets) {
            d.add_job(t.provider, t.backend, circuit.clone(), shots, options.clone())?;
        }
    }
    Ok(d)
}

/// Per-circuit shot allotment across targets in canonical order:
/// `shots / n` each, the remainder one extra apiece to the first targets.
pub fn even_shares(shots: u64, targets: usize) -> Vec<u64> {
    let n = targets as u64;
    let (base, rem) = (shots / n, shots % n);
    (0..n).map(|i| base + u64::from(i < rem)).collect()
}

/// Partitions each circuit's shots across the targets. Targets allotted zero
/// shots get no job.
pub fn split_even(
    circuits: &[Arc<Circuit>],
    shots: u64,
    targets: &[Target],
    options: &Params,
) -> Result<Dispatch, PolicyError> {
    if shots == 0 {
        return Err(DispatchError::ZeroShots.into());
    }
    let targets = canonical(targets);
    if targets.is_empty() {
        return Err(PolicyError::NoTargets);
    }
    let shares = even_shares(shots, targets.len());
    let mut d = Dispatch::new();
    for circuit in circuits {
        for (t, &n) in targets.iter().zip(&shares) {
            if n > 0 {
                d.add_job(t.provider.clone(), t.backend.clone(), circuit.clone(), n, options.clone())?;
            }
        }
    }
    Ok(d)
}

/// Element-wise sum of every Counts in the tree. Metadata `jobs` holds the
/// number of contributing Counts.
pub fn merge_sum(results: &ResultTree, _context: &Params) -> Result<(Counts, Params), PolicyError> {
    let widths: BTreeSet<usize> = results.leaves().flat_map(|c| c.keys().map(str::len)).collect();
    if widths.len() > 1 {
        return Err(PolicyError::InconsistentWidth(widths.into_iter().collect()));
    }
    let mut total = Counts::new();
    for c in results.leaves() {
        total.merge_from(c);
    }
    let mut meta = Params::new();
    meta.insert("jobs".into(), results.leaf_count().into());
    Ok((total, meta))
}

/// Total variation distance between the normalized histograms:
/// half the L1 distance over the union of their keys.
pub fn tvd(p: &Counts, q: &Counts) -> Result<f64, PolicyError> {
    let (tp, tq) = (p.total(), q.total());
    if tp == 0 || tq == 0 {
        return Err(PolicyError::EmptyHistogram);
    }
    let keys: BTreeSet<&str> = p.keys().chain(q.keys()).collect();
    let l1: f64 = keys
        .into_iter()
        .map(|k| (p.get(k) as f64 / tp as f64 - q.get(k) as f64 / tq as f64).abs())
        .sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

fn reference_of(results: &ResultTree, context: &Params) -> Result<Target, PolicyError> {
    if let Some(v) = context.get(REFERENCE_KEY) {
        let s = v.as_str().unwrap_or_default();
        let target = Target::parse(s).ok_or_else(|| PolicyError::ReferenceMissing(s.to_string()))?;
        if results.get(&target.provider, &target.backend).is_none_or(|r| r.is_empty()) {
            return Err(PolicyError::ReferenceMissing(target.to_string()));
        }
        return Ok(target);
    }
    let ideal: BTreeSet<String> = context
        .get(IDEAL_SIMULATORS_KEY)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let present: Vec<String> = results
        .backends()
        .map(|(t, _)| t.to_string())
        .filter(|name| ideal.contains(name))
        .collect();
    match present.as_slice() {
        [] => Err(PolicyError::ReferenceMissing("(no ideal simulator)".into())),
        [one] => Ok(Target::parse(one).expect("formatted target")),
        _ => Err(PolicyError::ReferenceAmbiguous(present)),
    }
}

/// TVD of each non-reference backend's first Counts from the reference
/// backend's first Counts, keyed `provider/backend`.
pub fn merge_tvd(
    results: &ResultTree,
    context: &Params,
) -> Result<(BTreeMap<String, f64>, Params), PolicyError> {
    let reference = reference_of(results, context)?;
    let ref_counts = &results.get(&reference.provider, &reference.backend).expect("checked")[0];
    let mut out = BTreeMap::new();
    for (target, runs) in results.backends() {
        if target == reference {
            continue;
        }
        if let Some(first) = runs.first() {
            out.insert(target.to_string(), tvd(first, ref_counts)?);
        }
    }
    let mut meta = Params::new();
    meta.insert(REFERENCE_KEY.into(), reference.to_string().into());
    Ok((out, meta))
}

/// Name → policy tables for both kinds, with the built-ins pre-registered.
#[derive(Clone)]
pub struct PolicyRegistry {
    split: BTreeMap<String, Arc<SplitFn>>,
    merge: BTreeMap<String, Arc<MergeFn>>,
}

impl fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyRegistry")
            .field("split", &self.split.keys().collect::<Vec<_>>())
            .field("merge", &self.merge.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut split: BTreeMap<String, Arc<SplitFn>> = BTreeMap::new();
        split.insert(MULTIPLIER.into(), Arc::new(split_multiplier));
        split.insert(EVEN.into(), Arc::new(split_even));
        let mut merge: BTreeMap<String, Arc<MergeFn>> = BTreeMap::new();
        merge.insert(
            SUM.into(),
            Arc::new(|tree: &ResultTree, ctx: &Params| {
                let (counts, meta) = merge_sum(tree, ctx)?;
                Ok((serde_json::to_value(counts).expect("counts to json"), meta))
            }),
        );
        merge.insert(
            TVD.into(),
            Arc::new(|tree: &ResultTree, ctx: &Params| {
                let (map, meta) = merge_tvd(tree, ctx)?;
                Ok((serde_json::to_value(map).expect("tvd map to json"), meta))
            }),
        );
        PolicyRegistry { split, merge }
    }
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, policy: Policy) -> Result<&mut Self, PolicyError> {
        let name = name.into();
        let kind = policy.kind();
        let taken = match kind {
            PolicyKind::Split => self.split.contains_key(&name),
            PolicyKind::Merge => self.merge.contains_key(&name),
        };
        if taken {
            return Err(PolicyError::Duplicate { kind, name });
        }
        if RESERVED.contains(&name.as_str()) {
            return Err(PolicyError::Reserved(name));
        }
        match policy {
            Policy::Split(f) => {
                self.split.insert(name, f);
            }
            Policy::Merge(f) => {
                self.merge.insert(name, f);
            }
        }
        Ok(self)
    }

    pub fn split(&self, name: &str) -> Result<Arc<SplitFn>, PolicyError> {
        self.split
            .get(name)
            .cloned()
            .ok_or_else(|| PolicyError::Unknown { kind: PolicyKind::Split, name: name.into() })
    }

    pub fn merge(&self, name: &str) -> Result<Arc<MergeFn>, PolicyError> {
        self.merge
            .get(name)
            .cloned()
            .ok_or_else(|| PolicyError::Unknown { kind: PolicyKind::Merge, name: name.into() })
    }

    pub fn names(&self, kind: PolicyKind) -> Vec<String> {
        match kind {
            PolicyKind::Split => self.split.keys().cloned().collect(),
            PolicyKind::Merge => self.merge.keys().cloned().collect(),
        }
    }
}
