//! HTTP front ends: the story-session API used by the sketch studio and a
//! model server exposing local models over the provider protocol.

pub mod api;
pub mod model_server;
pub mod store;

use std::net::SocketAddr;

use axum::Router;

pub use api::{router, AppState, REVISION_HEADER};
pub use model_server::{model_router, ModelBackend};
pub use store::{Session, SessionStore};

/// Binds `addr` and serves `app` until the process exits.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
