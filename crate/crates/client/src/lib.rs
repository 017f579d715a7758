//! Async client for the session service. Masks are passed through as RLE
//! strings; images are PNG-encoded on the way out.

use std::io::Cursor;

use base64::Engine;
use image::RgbImage;
use refcut_api as api;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use refcut_api::Polarity;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub fn encode_png(image: &RgbImage) -> Result<String> {
    let mut buf = Vec::new();
    image.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf))
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let (code, message) = match serde_json::from_str::<api::ErrorResponse>(&text) {
            Ok(e) => (e.code, e.message),
            Err(_) => ("unknown".to_string(), text),
        };
        Err(ClientError::Api { status, code, message })
    }

    pub async fn health(&self) -> Result<api::HealthResponse> {
        self.call::<(), _>(Method::GET, "/healthz", None).await
    }

    pub async fn create_session(&self, req: &api::CreateSessionRequest) -> Result<api::CreateSessionResponse> {
        self.call(Method::POST, "/session", Some(req)).await
    }

    pub async fn create_session_image(&self, image: &RgbImage) -> Result<api::CreateSessionResponse> {
        self.create_session(&api::CreateSessionRequest::new(encode_png(image)?)).await
    }

    pub async fn set_reference(&self, id: &str, req: &api::SetReferenceRequest) -> Result<api::SetReferenceResponse> {
        self.call(Method::POST, &format!("/session/{id}/reference"), Some(req)).await
    }

    pub async fn click(&self, id: &str, req: &api::ClickRequest) -> Result<api::MaskResponse> {
        self.call(Method::POST, &format!("/session/{id}/click"), Some(req)).await
    }

    pub async fn undo(&self, id: &str) -> Result<api::UndoResponse> {
        self.call::<(), _>(Method::POST, &format!("/session/{id}/undo"), None).await
    }

    pub async fn reset(&self, id: &str) -> Result<api::MaskResponse> {
        self.call::<(), _>(Method::POST, &format!("/session/{id}/reset"), None).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<api::DeleteResponse> {
        self.call::<(), _>(Method::DELETE, &format!("/session/{id}"), None).await
    }
}
