//! HTTP front end for [`Toolkit`].
//!
//! - `POST /session` (multipart images) → `{"session_id": ...}`
//! - `POST /session/{id}/action` (JSON action) → tool result
//! - `GET /session/{id}/history` → history snapshot
//! - `GET /session/{id}/images/{name}` → PNG of a stored view

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use super::action::{Action, ErrorCode, ToolError, ToolResult};
use super::recon::ImagePayload;
use super::session::Toolkit;

const BODY_LIMIT: usize = 512 * 1024 * 1024;

fn error_response(e: ToolError) -> Response {
    let status = StatusCode::from_u16(e.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(ToolResult::Error(e))).into_response()
}

pub fn router(toolkit: Arc<Toolkit>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ready"})) }))
        .route("/session", post(create_session))
        .route("/session/{id}/action", post(action))
        .route("/session/{id}/history", get(history))
        .route("/session/{id}/images/{name}", get(image))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(toolkit)
}

async fn create_session(State(kit): State<Arc<Toolkit>>, mut form: Multipart) -> Response {
    let mut images = Vec::new();
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field
                    .file_name()
                    .or(field.name())
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("image-{}", images.len() + 1));
                match field.bytes().await {
                    Ok(bytes) => images.push(ImagePayload::new(name, bytes.to_vec())),
                    Err(e) => return error_response(ToolError::new(ErrorCode::InvalidArgument, e.to_string())),
                }
            }
            Ok(None) => break,
            Err(e) => return error_response(ToolError::new(ErrorCode::InvalidArgument, e.to_string())),
        }
    }
    match kit.create_session(images) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response(),
        Err(e) => error_response(e),
    }
}

async fn action(State(kit): State<Arc<Toolkit>>, Path(id): Path<String>, body: Bytes) -> Response {
    let action: Action = match serde_json::from_slice(&body) {
        Ok(a) => a,
        Err(e) => return error_response(ToolError::new(ErrorCode::InvalidArgument, format!("action JSON: {e}"))),
    };
    // reconstruction may block on the bridge
    let result = tokio::task::spawn_blocking(move || kit.handle_action(&id, action)).await;
    match result {
        Ok(ToolResult::Error(e)) => error_response(e),
        Ok(ok) => Json(ok).into_response(),
        Err(e) => error_response(ToolError::new(ErrorCode::Render, e.to_string())),
    }
}

async fn history(State(kit): State<Arc<Toolkit>>, Path(id): Path<String>) -> Response {
    match kit.history(&id) {
        Ok(snap) => Json(snap).into_response(),
        Err(e) => error_response(e),
    }
}

async fn image(State(kit): State<Arc<Toolkit>>, Path((id, name)): Path<(String, String)>) -> Response {
    let Some(session) = kit.session(&id) else {
        return error_response(ToolError::new(ErrorCode::UnknownSession, format!("no session '{id}'")));
    };
    let png = session.lock().expect("session lock").history.iter().find(|h| h.image.name == name).map(|h| h.png.clone());
    match png {
        Some(png) => ([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({"status": "error", "message": format!("no image '{name}'")}))).into_response(),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: std::net::SocketAddr, toolkit: Arc<Toolkit>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(toolkit))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::{FixtureReconstructor, HistorySnapshot, ToolkitConfig};
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    fn app() -> Router {
        let cfg = ToolkitConfig { max_turns: 5, ..Default::default() };
        router(Arc::new(Toolkit::new(cfg, Arc::new(FixtureReconstructor::default()))))
    }

    fn multipart(n: usize) -> (String, Vec<u8>) {
        let boundary = "XBOUNDARYX";
        let mut body = Vec::new();
        for i in 0..n {
            body.extend_from_slice(
                format!("--{boundary}\r\nContent-Disposition: form-data; name=\"images\"; filename=\"f{i}.png\"\r\nContent-Type: image/png\r\n\r\n")
                    .as_bytes(),
            );
            body.extend_from_slice(&[i as u8; 10]);
            body.extend_from_slice(b"\r\n");
        }
        body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
        (format!("multipart/form-data; boundary={boundary}"), body)
    }

    async fn call(app: &Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
    }

    fn post_json(uri: &str, body: &str) -> Request<Body> {
        Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_owned())).unwrap()
    }

    #[tokio::test]
    async fn session_lifecycle() {
        let app = app();
        let (ct, body) = multipart(7);
        let (status, v) = call(&app, Request::post("/session").header("content-type", ct).body(Body::from(body)).unwrap()).await;
        assert_eq!(status, StatusCode::CREATED);
        let id = v["session_id"].as_str().unwrap().to_owned();

        let (status, v) = call(&app, post_json(&format!("/session/{id}/action"), r#"{"kind":"view","anchor":1,"mode":"global","azimuth":0,"elevation":0}"#)).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(v["code"], "precondition");

        let (status, v) = call(&app, post_json(&format!("/session/{id}/action"), r#"{"kind":"reconstruct"}"#)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["cameras"], 7);

        let (status, v) = call(&app, post_json(&format!("/session/{id}/action"), r#"{"kind":"view","anchor":1,"mode":"ego","azimuth":-45.0,"elevation":0.0}"#)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["kind"], "view");
        assert!(v["image"]["png_base64"].as_str().unwrap().len() > 10);
        let name = v["image"]["name"].as_str().unwrap().to_owned();

        let (status, v) = call(&app, post_json(&format!("/session/{id}/action"), r#"{"kind":"view","anchor":99,"mode":"ego","azimuth":0,"elevation":0}"#)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(v["code"], "invalid_anchor");

        let (status, v) = call(&app, post_json(&format!("/session/{id}/action"), r#"{"kind":"view", anchor}"#)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "invalid_argument");

        let (status, v) = call(&app, Request::get(format!("/session/{id}/history")).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        let snap: HistorySnapshot = serde_json::from_value(v).unwrap();
        assert_eq!(snap.history.len(), 1);
        assert_eq!(snap.turn_count, 4);

        let resp = app.clone().oneshot(Request::get(format!("/session/{id}/images/{name}")).body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let png = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(&png[1..4], b"PNG");
    }

    #[tokio::test]
    async fn empty_upload_and_unknown_session() {
        let app = app();
        let (ct, body) = multipart(0);
        let (status, v) = call(&app, Request::post("/session").header("content-type", ct).body(Body::from(body)).unwrap()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "empty_input");
        let (status, _) = call(&app, Request::get("/session/missing/history").body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
    }
}
