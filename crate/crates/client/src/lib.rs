//! Async client for the session service.

use moncat_wire::{
    AnswerRequest, AnswerResponse, CreateSession, ErrorBody, Health, ModelInfo, SessionCreated, SessionLog,
};
use reqwest::Response;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server returned {status}: {message}")]
    Http { status: u16, message: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// HTTP status of a server-side error.
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/health").await
    }

    pub async fn models(&self) -> Result<Vec<ModelInfo>, ClientError> {
        self.get("/models").await
    }

    pub async fn create_session(&self, model: &str, mode: &str) -> Result<SessionCreated, ClientError> {
        let body = CreateSession {
            model: model.to_string(),
            mode: mode.to_string(),
        };
        self.post("/sessions", &body).await
    }

    pub async fn answer(&self, session: &str, question: usize, state: usize) -> Result<AnswerResponse, ClientError> {
        self.post(
            &format!("/sessions/{}/answers", session),
            &AnswerRequest { question, state },
        )
        .await
    }

    pub async fn session(&self, session: &str) -> Result<SessionLog, ClientError> {
        self.get(&format!("/sessions/{}", session)).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = self.http.get(format!("{}{}", self.base, path)).send().await?;
        decode(resp).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(format!("{}{}", self.base, path))
            .json(body)
            .send()
            .await?;
        decode(resp).await
    }
}

async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json().await?);
    }
    let text = resp.text().await.unwrap_or_default();
    let message = match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => body.error,
        Err(_) if text.is_empty() => status.canonical_reason().unwrap_or("").to_string(),
        Err(_) => text,
    };
    Err(ClientError::Http {
        status: status.as_u16(),
        message,
    })
}
