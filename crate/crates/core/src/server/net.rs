//! WebSocket front end: one actor task per session owns the [`Session`];
//! connections talk to it over a channel.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::engine::EngineConfig;
use crate::model::DeviceId;
use crate::protocol::{decode_control, to_canonical_bytes, DeviceDescriptor, Envelope, Payload};

use super::session::{Joined, Outgoing, Session, SessionError, DEFAULT_STREAM_CAPACITY};
use super::state::{load_session, save_session, LoadError, SessionState};

pub const DEFAULT_PORT: u16 = 8787;
pub const PORT_ENV: &str = "HOLOSYNC_PORT";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    /// Where sessions are saved on shutdown and restored from on first use.
    pub data_dir: Option<PathBuf>,
    pub engine: EngineConfig,
    pub stream_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { port: DEFAULT_PORT, data_dir: None, engine: EngineConfig::default(), stream_capacity: DEFAULT_STREAM_CAPACITY }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: io::Error },
    #[error("server: {0}")]
    Io(#[from] io::Error),
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Session ids double as file names, so only a conservative alphabet is allowed.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

enum SessionCmd {
    Join { descriptor: DeviceDescriptor, reply: oneshot::Sender<Result<Joined, SessionError>> },
    Control { device: DeviceId, envelope: Envelope },
    Stream { device: DeviceId, frame: Bytes },
    Leave { device: DeviceId },
    Metrics { reply: oneshot::Sender<String> },
    Save { reply: oneshot::Sender<io::Result<()>> },
}

#[derive(Clone)]
struct SessionHandle {
    tx: mpsc::UnboundedSender<SessionCmd>,
}

impl SessionHandle {
    async fn join(&self, descriptor: DeviceDescriptor) -> Option<Result<Joined, SessionError>> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(SessionCmd::Join { descriptor, reply }).ok()?;
        rx.await.ok()
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> SessionCmd) -> Option<T> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).ok()?;
        rx.await.ok()
    }
}

async fn session_actor(mut session: Session, mut rx: mpsc::UnboundedReceiver<SessionCmd>, tick_hz: f64, path: Option<PathBuf>) {
    let dt = 1.0 / tick_hz;
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(dt));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                match cmd {
                    SessionCmd::Join { descriptor, reply } => {
                        let _ = reply.send(session.join(descriptor, now_ms()));
                    }
                    SessionCmd::Control { device, envelope } => {
                        if let Err(e) = session.submit(device, envelope, now_ms()) {
                            log::debug!("session {}: rejected write from {device}: {e}", session.session_id());
                        }
                    }
                    SessionCmd::Stream { device, frame } => {
                        if let Err(e) = session.relay_stream(device, frame, now_ms()) {
                            log::debug!("session {}: bad stream frame from {device}: {e}", session.session_id());
                        }
                    }
                    SessionCmd::Leave { device } => session.leave(device),
                    SessionCmd::Metrics { reply } => {
                        let _ = reply.send(session.metrics().render(session.session_id(), now_ms()));
                    }
                    SessionCmd::Save { reply } => {
                        let result = match &path {
                            Some(p) => save_session(session.state(), p),
                            None => Ok(()),
                        };
                        let _ = reply.send(result);
                    }
                }
            }
            _ = ticker.tick() => {
                session.tick(dt, now_ms());
            }
        }
    }
}

pub struct Hub {
    config: ServerConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

impl Hub {
    pub fn new(config: ServerConfig) -> Self {
        Self { config, sessions: Mutex::new(HashMap::new()) }
    }

    fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, LoadError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(h) = sessions.get(id).filter(|h| !h.tx.is_closed()) {
            return Ok(h.clone());
        }
        let path = self.session_path(id);
        let state = match &path {
            Some(p) if p.exists() => {
                log::info!("restoring session {id} from {}", p.display());
                load_session(p)?
            }
            _ => SessionState::new(id),
        };
        let session = Session::from_state(state, self.config.engine.clone()).with_stream_capacity(self.config.stream_capacity);
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(session_actor(session, rx, self.config.engine.tick_hz, path));
        let handle = SessionHandle { tx };
        sessions.insert(id.to_owned(), handle.clone());
        Ok(handle)
    }

    fn handles(&self) -> Vec<(String, SessionHandle)> {
        let sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let mut v: Vec<_> = sessions.iter().map(|(k, h)| (k.clone(), h.clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub async fn metrics_text(&self) -> String {
        let mut out = String::new();
        for (_, h) in self.handles() {
            if let Some(text) = h.ask(|reply| SessionCmd::Metrics { reply }).await {
                out.push_str(&text);
            }
        }
        out
    }

    /// Writes every live session to the data directory.
    pub async fn save_all(&self) -> io::Result<()> {
        for (id, h) in self.handles() {
            if let Some(result) = h.ask(|reply| SessionCmd::Save { reply }).await {
                result?;
                log::info!("saved session {id}");
            }
        }
        Ok(())
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/session/{session_id}", get(ws_handler))
        .route("/metrics", get(metrics_handler))
        .with_state(hub)
}

async fn metrics_handler(State(hub): State<Arc<Hub>>) -> String {
    hub.metrics_text().await
}

async fn ws_handler(ws: WebSocketUpgrade, Path(session_id): Path<String>, State(hub): State<Arc<Hub>>) -> Response {
    if !valid_session_id(&session_id) {
        return (StatusCode::BAD_REQUEST, "invalid session id").into_response();
    }
    match hub.session(&session_id) {
        Ok(handle) => ws.on_upgrade(move |socket| client_loop(socket, handle)),
        Err(e) => {
            log::error!("session {session_id}: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response()
        }
    }
}

fn text(env: &Envelope) -> Message {
    let bytes = to_canonical_bytes(env);
    Message::Text(String::from_utf8(bytes).expect("JSON is UTF-8").into())
}

async fn client_loop(socket: WebSocket, handle: SessionHandle) {
    let (mut sink, mut incoming) = socket.split();
    let joined = loop {
        let reply = match incoming.next().await {
            Some(Ok(Message::Text(t))) => match decode_control(t.as_str().as_bytes()) {
                Ok(Envelope { payload: Payload::Join { descriptor }, .. }) => match handle.join(descriptor).await {
                    Some(Ok(j)) => break j,
                    Some(Err(e)) => e.to_envelope(now_ms()),
                    None => return,
                },
                Ok(_) => SessionError::Rejected("first message must be a join".into()).to_envelope(now_ms()),
                Err(e) => SessionError::Codec(e).to_envelope(now_ms()),
            },
            Some(Ok(Message::Binary(_))) => {
                SessionError::Rejected("join before streaming".into()).to_envelope(now_ms())
            }
            Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
            Some(Ok(_)) => continue,
        };
        if sink.send(text(&reply)).await.is_err() {
            return;
        }
    };
    let device = joined.device_id;
    if sink.send(text(&joined.welcome)).await.is_err() {
        let _ = handle.tx.send(SessionCmd::Leave { device });
        return;
    }
    let queue = joined.queue.clone();
    let writer = tokio::spawn(async move {
        while let Some(item) = queue.recv().await {
            let msg = match item {
                Outgoing::Control(env) => text(&env),
                Outgoing::Stream(frame) => Message::Binary(frame),
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(msg) = incoming.next().await {
        let cmd = match msg {
            Ok(Message::Text(t)) => match decode_control(t.as_str().as_bytes()) {
                Ok(envelope) => SessionCmd::Control { device, envelope },
                Err(e) => {
                    joined.queue.push_control(SessionError::Codec(e).to_envelope(now_ms()));
                    continue;
                }
            },
            Ok(Message::Binary(frame)) => SessionCmd::Stream { device, frame },
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if handle.tx.send(cmd).is_err() {
            break;
        }
    }
    let _ = handle.tx.send(SessionCmd::Leave { device });
    joined.queue.close();
    let _ = writer.await;
}

/// A server bound and accepting connections in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    hub: Arc<Hub>,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<io::Result<()>>,
}

impl RunningServer {
    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Stops accepting connections and saves all sessions.
    pub async fn shutdown(self) -> io::Result<()> {
        let _ = self.shutdown.send(());
        self.hub.save_all().await?;
        self.task.abort();
        let _ = self.task.await;
        Ok(())
    }
}

pub async fn start(config: ServerConfig) -> Result<RunningServer, ServeError> {
    let port = config.port;
    let listener =
        TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await.map_err(|source| ServeError::Bind { port, source })?;
    let addr = listener.local_addr()?;
    if let Some(dir) = &config.data_dir {
        std::fs::create_dir_all(dir)?;
    }
    let hub = Arc::new(Hub::new(config));
    let (shutdown, rx) = oneshot::channel::<()>();
    let app = router(hub.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    log::info!("listening on {addr}");
    Ok(RunningServer { addr, hub, shutdown, task })
}

/// Serves until ctrl-c, then saves sessions.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let server = start(config).await?;
    tokio::signal::ctrl_c().await?;
    log::info!("shutting down");
    server.shutdown().await?;
    Ok(())
}
