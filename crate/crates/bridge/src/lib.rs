//! HTTP and WebSocket front for the shared-variable engine.
//!
//! * `GET /api/vars` returns `{name: {value, timestamp_us, seq}}`.
//! * `POST /api/vars/{name}` with `{"value": <number>}` publishes a new value.
//! * `GET /api/stream` upgrades to a WebSocket that pushes
//!   `{name, value, timestamp_us, seq}` for every accepted publish.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use smarthouse_core::sharedvar::{EngineHandle, PublishError, VarRecord};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};

/// Records buffered per WebSocket client before it starts missing updates.
const STREAM_BUFFER: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarValue {
    pub value: f64,
    pub timestamp_us: u64,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteRequest {
    pub value: f64,
}

#[derive(Clone)]
struct AppState {
    engine: EngineHandle,
    updates: broadcast::Sender<VarRecord>,
}

pub fn router(engine: EngineHandle) -> Router {
    let (updates, _) = broadcast::channel(STREAM_BUFFER);
    let tx = updates.clone();
    engine.add_listener(move |rec| {
        // No receivers is fine.
        let _ = tx.send(rec.clone());
    });
    Router::new()
        .route("/api/vars", get(list_vars))
        .route("/api/vars/{name}", get(get_var).post(write_var).options(preflight))
        .route("/api/stream", get(stream))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(AppState { engine, updates })
}

async fn allow_any_origin(mut res: Response) -> Response {
    let h = res.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_str(&format!("{}, {}, {}", Method::GET, Method::POST, Method::OPTIONS)).expect("ascii"),
    );
    res
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn list_vars(State(s): State<AppState>) -> Json<BTreeMap<String, VarValue>> {
    Json(
        s.engine
            .snapshot_vars("*")
            .into_iter()
            .map(|r| (r.name, VarValue { value: r.value, timestamp_us: r.timestamp_us, seq: r.seq }))
            .collect(),
    )
}

async fn get_var(State(s): State<AppState>, Path(name): Path<String>) -> Response {
    match s.engine.get(&name) {
        Some(r) => Json(r).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no variable {name}")).into_response(),
    }
}

async fn write_var(State(s): State<AppState>, Path(name): Path<String>, Json(req): Json<WriteRequest>) -> Response {
    if !req.value.is_finite() {
        return (StatusCode::UNPROCESSABLE_ENTITY, "value must be finite").into_response();
    }
    match s.engine.publish_value(&name, req.value) {
        Ok(rec) => Json(rec).into_response(),
        Err(e @ (PublishError::NameTooLong(_) | PublishError::EmptyName)) => {
            (StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).into_response()
        }
        Err(e @ PublishError::StaleSeq { .. }) => (StatusCode::CONFLICT, e.to_string()).into_response(),
    }
}

async fn stream(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = s.updates.subscribe();
    ws.on_upgrade(move |socket| push_updates(socket, rx))
}

async fn push_updates(mut socket: WebSocket, mut rx: broadcast::Receiver<VarRecord>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(rec) => {
                    let text = serde_json::to_string(&rec).expect("record serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("websocket client skipped {n} updates"),
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// A bridge serving on a background task of the current runtime.
pub struct Bridge {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<io::Result<()>>,
}

impl Bridge {
    pub async fn bind(addr: SocketAddr, engine: EngineHandle) -> io::Result<Bridge> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let app = router(engine);
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stopped.await;
                })
                .await
        });
        log::info!("bridge listening on http://{addr}");
        Ok(Bridge { addr, stop: Some(stop), task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits up to `grace` for open ones
    /// (WebSocket streams included) to finish before dropping them.
    pub async fn shutdown(mut self, grace: Duration) -> io::Result<()> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        match tokio::time::timeout(grace, &mut self.task).await {
            Ok(joined) => joined.map_err(io::Error::other)?,
            Err(_) => {
                self.task.abort();
                Ok(())
            }
        }
    }
}
