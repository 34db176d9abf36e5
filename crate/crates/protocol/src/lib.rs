//! JSON request and response bodies of the community-search service.
//!
//! | method | path                       | request           | response                |
//! |--------|----------------------------|-------------------|-------------------------|
//! | POST   | `/sessions`                | (none)            | [`CreateSessionResponse`] |
//! | POST   | `/sessions/{id}/query`     | [`QueryRequest`]    | [`QueryResponse`]         |
//! | POST   | `/sessions/{id}/feedback`  | [`FeedbackRequest`] | [`FeedbackResponse`]      |
//! | POST   | `/sessions/{id}/finalize`  | (none)            | [`FinalizeResponse`]      |
//! | GET    | `/graph?t=&center=&radius=`| [`GraphParams`]     | [`GraphResponse`]         |
//! | GET    | `/health`                  | (none)            | [`HealthResponse`]        |
//!
//! Failures carry an [`ErrorBody`] with one of the [`codes`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub node_ids: Vec<String>,
    /// Defaults to the service's configured threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    /// Member ids in node-index order.
    pub members: Vec<String>,
    /// Membership probability of every member and every neighbor of a
    /// member.
    pub psi: BTreeMap<String, f64>,
    /// Zero-based position of this query within the session.
    pub interaction_index: usize,
    /// Threshold actually applied.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    /// Node id to label, 1 for inside the community and 0 for outside.
    pub labels: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    /// Loss after each gradient step.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    /// L2 norm of the change applied to the shared model.
    pub meta_update_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphParams {
    /// One-based snapshot index. Defaults to the latest snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<String>,
    /// Hops around `center`. Defaults to 1 when a center is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrsSummary {
    pub dim: usize,
    /// Column means over the returned nodes.
    pub mean: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphResponse {
    pub t: usize,
    pub num_snapshots: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<[String; 2]>,
    pub attrs_summary: AttrsSummary,
    /// Set when the node budget cut the view short.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    Loading,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: HealthStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<usize>,
    pub sessions: usize,
    /// Sessions folded into the shared model so far.
    pub meta_updates: usize,
}

/// Machine-readable error codes.
pub mod codes {
    pub const BAD_REQUEST: &str = "bad_request";
    pub const UNKNOWN_NODE: &str = "unknown_node";
    pub const NOT_FOUND: &str = "not_found";
    pub const CONFLICT: &str = "conflict";
    pub const NOT_READY: &str = "not_ready";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    /// Offending node ids, for `unknown_node`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.to_string(),
                message: message.into(),
                ids: None,
            },
        }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Self {
        self.error.ids = Some(ids);
        self
    }
}
