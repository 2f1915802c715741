//! Backend-agnostic orchestration of quantum experiments.
//!
//! Circuits are declared once and planned into a [`Dispatch`] by a split
//! policy, executed across any mix of providers registered in a
//! [`ProviderRegistry`], and observed through a [`ResultCollector`] that can
//! fold the finished [`ResultTree`] with a merge policy.

pub mod circuit;
pub mod collector;
pub mod counts;
pub mod dispatch;
pub mod executor;
pub mod policy;
pub mod provider;
pub mod qasm;
pub mod simulator;
pub mod wire;

pub use circuit::{Circuit, GateKind, GateOp, Violation};
pub use counts::Counts;
pub use qasm::{parse_qasm, serialize_qasm, QasmError};
pub use simulator::{ExecMode, NoiseSpec, SimError, Simulator, Statevector};
pub use collector::{to_table, ResultCollector, ResultTree, TableRow};
pub use dispatch::{Dispatch, JobSpec, Target};
pub use executor::{ExecutorError, ExperimentSpec, QuantumExecutor, RunOptions};
pub use policy::{tvd, Policy, PolicyKind, PolicyRegistry};
pub use provider::{
    BackendDescriptor, JobHandle, JobState, JobStatus, ProviderConfig, ProviderKind, ProviderRegistry,
};

/// Free-form key/value map used for job options, policy context and metadata.
pub type Params = std::collections::BTreeMap<String, serde_json::Value>;
