//! In-process client that drives the router without a socket.

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

#[derive(Clone, Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
    pub retry_after: Option<String>,
}

impl Reply {
    pub fn str(&self, key: &str) -> &str {
        self.body.get(key).and_then(Value::as_str).unwrap_or_default()
    }

    pub fn error_code(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

#[derive(Clone)]
pub struct Client {
    router: Router,
}

impl Client {
    pub fn new(router: Router) -> Self {
        Self { router }
    }

    pub async fn request(&self, method: Method, path: &str, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(path);
        let body = match body {
            Some(v) => {
                req = req.header(header::CONTENT_TYPE, "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.router.clone().oneshot(req.body(body).expect("request")).await.expect("router is infallible");
        let status = resp.status();
        let retry_after = resp.headers().get(header::RETRY_AFTER).and_then(|v| v.to_str().ok()).map(str::to_string);
        let bytes = resp.into_body().collect().await.expect("body").to_bytes();
        let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
        Reply { status, body, retry_after }
    }

    pub async fn create(&self, body: Value) -> Reply {
        self.request(Method::POST, "/sessions", Some(body)).await
    }

    pub async fn answer(&self, session_id: &str, text: &str) -> Reply {
        self.request(Method::POST, &format!("/sessions/{session_id}/answer"), Some(serde_json::json!({ "text": text }))).await
    }

    pub async fn get(&self, path: &str) -> Reply {
        self.request(Method::GET, path, None).await
    }

    /// Plays one whole session: answers each question with `answer(round,
    /// question)` until the description arrives. Returns every reply, the
    /// creation reply first.
    pub async fn play(&self, create: Value, mut answer: impl FnMut(usize, &str) -> String) -> Vec<Reply> {
        let first = self.create(create).await;
        let mut replies = vec![first.clone()];
        if first.status != StatusCode::OK {
            return replies;
        }
        let id = first.str("session_id").to_string();
        let mut last = first;
        while last.status == StatusCode::OK && last.body.get("description").is_none() {
            let round = last.body.get("round").and_then(Value::as_u64).unwrap_or(0) as usize;
            let text = answer(round, last.str("question"));
            last = self.answer(&id, &text).await;
            replies.push(last.clone());
        }
        replies
    }
}
