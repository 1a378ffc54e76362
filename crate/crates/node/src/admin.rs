//! HTTP/JSON admin plane: `GET /health`, `GET /status`, `POST /command`.

use std::sync::Arc;
use std::time::Instant;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use snickv_core::api::{CommandRequest, CommandResponse, Health, StatusReport};
use snickv_core::wire::Command;
use tokio::net::TcpListener;

use crate::node::Shared;

pub(crate) fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/status", get(status))
        .route("/command", post(command))
        .with_state(shared)
}

pub(crate) async fn serve(listener: TcpListener, shared: Arc<Shared>) {
    let token = shared.shutdown_token();
    let app = router(shared.clone());
    if let Err(e) = axum::serve(listener, app)
        .with_graceful_shutdown(token.cancelled_owned())
        .await
    {
        tracing::warn!("{}: admin server failed: {e}", shared.name);
    }
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<Health> {
    Json(Health {
        ok: true,
        name: shared.name.clone(),
    })
}

async fn status(State(shared): State<Arc<Shared>>) -> Json<StatusReport> {
    Json(shared.status())
}

async fn command(
    State(shared): State<Arc<Shared>>,
    Json(req): Json<CommandRequest>,
) -> Result<Json<CommandResponse>, (StatusCode, String)> {
    let cmd = req
        .to_command()
        .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    let reply = shared.execute(&cmd, Instant::now(), &mut None).await;
    CommandResponse::from_reply(&reply, matches!(cmd, Command::Scan { .. }))
        .map(Json)
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}
