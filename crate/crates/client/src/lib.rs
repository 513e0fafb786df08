//! Typed async client for the concurpaas HTTP service.

use concurpaas_core::api::{
    AdvanceRequest, AdvanceResponse, CompareResponse, ErrorBody, RegistryListing, RunRequest,
    RunResponse, ScaleBody, ScenarioRequest, SessionInfo, StopBody, StopResponse,
};
use concurpaas_core::fireapp::FireEventLog;
use concurpaas_core::iot::{ReprogramCommand, SensorParams};
use concurpaas_core::runtime::ContainerHandle;
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", .body.message)]
    Api { status: u16, body: ErrorBody },
}

impl ClientError {
    /// The structured error body, if the server produced one.
    pub fn api_body(&self) -> Option<&ErrorBody> {
        match self {
            ClientError::Api { body, .. } => Some(body),
            ClientError::Transport(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn send(&self, req: RequestBuilder) -> Result<reqwest::Response, ClientError> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            code: "http".into(),
            message: if text.is_empty() {
                status.to_string()
            } else {
                text
            },
            details: Vec::new(),
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn json<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut req = self.request(method, path);
        if let Some(b) = body {
            req = req.json(b);
        }
        Ok(self.send(req).await?.json().await?)
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.send(self.request(Method::GET, "/healthz"))
            .await
            .map(|_| ())
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse, ClientError> {
        self.json(Method::POST, "/v1/run", Some(req)).await
    }

    pub async fn compare(&self, req: &ScenarioRequest) -> Result<CompareResponse, ClientError> {
        self.json(Method::POST, "/v1/compare", Some(req)).await
    }

    /// Rendered trace log, header line included.
    pub async fn trace(&self, req: &ScenarioRequest) -> Result<String, ClientError> {
        let resp = self
            .send(self.request(Method::POST, "/v1/trace").json(req))
            .await?;
        Ok(resp.text().await?)
    }

    pub async fn open_session(&self, req: &ScenarioRequest) -> Result<SessionInfo, ClientError> {
        self.json(Method::POST, "/v1/sessions", Some(req)).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.json::<(), _>(Method::GET, &format!("/v1/sessions/{id}"), None)
            .await
    }

    pub async fn close_session(&self, id: &str) -> Result<(), ClientError> {
        self.send(self.request(Method::DELETE, &format!("/v1/sessions/{id}")))
            .await
            .map(|_| ())
    }

    pub async fn advance(
        &self,
        id: &str,
        req: AdvanceRequest,
    ) -> Result<AdvanceResponse, ClientError> {
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/advance"),
            Some(&req),
        )
        .await
    }

    pub async fn registry(&self, id: &str) -> Result<RegistryListing, ClientError> {
        self.json::<(), _>(Method::GET, &format!("/v1/sessions/{id}/registry"), None)
            .await
    }

    pub async fn reprogram(
        &self,
        id: &str,
        cmd: &ReprogramCommand,
    ) -> Result<SensorParams, ClientError> {
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/reprogram"),
            Some(cmd),
        )
        .await
    }

    pub async fn scale_out(
        &self,
        id: &str,
        app_id: &str,
        service: &str,
    ) -> Result<Vec<ContainerHandle>, ClientError> {
        let body = ScaleBody {
            app_id: app_id.into(),
            service: service.into(),
        };
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/scale"),
            Some(&body),
        )
        .await
    }

    pub async fn stop_app(&self, id: &str, app_id: &str) -> Result<usize, ClientError> {
        let body = StopBody {
            app_id: app_id.into(),
        };
        let resp: StopResponse = self
            .json(
                Method::POST,
                &format!("/v1/sessions/{id}/stop"),
                Some(&body),
            )
            .await?;
        Ok(resp.stopped)
    }

    pub async fn fire_log(&self, id: &str) -> Result<FireEventLog, ClientError> {
        self.json::<(), _>(Method::GET, &format!("/v1/sessions/{id}/fire-log"), None)
            .await
    }
}

/// True when the error is a 404 from the service.
pub fn is_not_found(err: &ClientError) -> bool {
    matches!(err, ClientError::Api { status, .. } if *status == StatusCode::NOT_FOUND.as_u16())
}
