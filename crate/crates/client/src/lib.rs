//! Async client for the community-search service.

use std::collections::BTreeMap;

use cstgn_protocol::{
    CreateSessionResponse, ErrorBody, FeedbackRequest, FeedbackResponse, FinalizeResponse,
    GraphParams, GraphResponse, HealthResponse, QueryRequest, QueryResponse,
};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{status}: {} ({})", .body.error.message, .body.error.code)]
    Api { status: StatusCode, body: ErrorBody },

    /// The service answered with something that is not one of its bodies.
    #[error("unexpected {status} response: {text}")]
    Unexpected { status: StatusCode, text: String },

    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Api { status, .. } | Self::Unexpected { status, .. } => Some(*status),
            Self::Transport(e) => e.status(),
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { body, .. } => Some(&body.error.code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        decode(req.send().await?).await
    }

    /// Reports readiness. A loading service is not an error.
    pub async fn health(&self) -> Result<HealthResponse> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        if resp.status() == StatusCode::SERVICE_UNAVAILABLE {
            let status = resp.status();
            let text = resp.text().await?;
            return serde_json::from_str(&text).map_err(|_| ClientError::Unexpected { status, text });
        }
        decode(resp).await
    }

    pub async fn create_session(&self) -> Result<String> {
        let r: CreateSessionResponse = self.send::<(), _>(Method::POST, "/sessions", None).await?;
        Ok(r.session_id)
    }

    pub async fn query(&self, session: &str, node_ids: &[String], eta: Option<f64>) -> Result<QueryResponse> {
        let body = QueryRequest {
            node_ids: node_ids.to_vec(),
            eta,
        };
        self.send(Method::POST, &format!("/sessions/{session}/query"), Some(&body))
            .await
    }

    pub async fn feedback(
        &self,
        session: &str,
        labels: BTreeMap<String, i64>,
        epochs: Option<usize>,
    ) -> Result<Vec<f64>> {
        let body = FeedbackRequest { labels, epochs };
        let r: FeedbackResponse = self
            .send(Method::POST, &format!("/sessions/{session}/feedback"), Some(&body))
            .await?;
        Ok(r.loss_trace)
    }

    pub async fn finalize(&self, session: &str) -> Result<f64> {
        let r: FinalizeResponse = self
            .send::<(), _>(Method::POST, &format!("/sessions/{session}/finalize"), None)
            .await?;
        Ok(r.meta_update_norm)
    }

    pub async fn graph(&self, params: &GraphParams) -> Result<GraphResponse> {
        let resp = self
            .http
            .get(format!("{}/graph", self.base))
            .query(params)
            .send()
            .await?;
        decode(resp).await
    }
}

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    let status = resp.status();
    let text = resp.text().await?;
    if status.is_success() {
        return serde_json::from_str(&text).map_err(|_| ClientError::Unexpected { status, text });
    }
    match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => Err(ClientError::Api { status, body }),
        Err(_) => Err(ClientError::Unexpected { status, text }),
    }
}
