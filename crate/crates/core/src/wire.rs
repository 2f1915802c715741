//! JSON bodies of the remote job service protocol, shared by the server and
//! the `remote_http` provider.
//!
//! | method | path               | success                         |
//! |--------|--------------------|---------------------------------|
//! | GET    | `/backends`        | 200 `[BackendInfo]`             |
//! | POST   | `/jobs`            | 201 `SubmitResponse`            |
//! | GET    | `/jobs/{id}`       | 200 `JobStateResponse`          |
//! | GET    | `/jobs/{id}/result`| 200 counts, 409 pending, 410 failed |

use serde::{Deserialize, Serialize};

use crate::provider::JobState;

/// Header carrying the optional static API key.
pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub online: bool,
    pub max_qubits: usize,
    pub is_ideal_simulator: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub backend: String,
    pub qasm: String,
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: String,
    pub state: JobState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStateResponse {
    pub job_id: String,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
