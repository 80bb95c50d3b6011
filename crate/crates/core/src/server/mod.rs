//! Authoritative session hub: sequencing, last-writer-wins state, stream
//! relay with backpressure, persistence and the WebSocket front end.

mod net;
mod replica;
mod session;
mod state;

pub use net::{now_ms, router, serve, start, valid_session_id, Hub, RunningServer, ServeError, ServerConfig, DEFAULT_PORT, PORT_ENV};
pub use replica::{Replica, ReplicaError};
pub use session::{
    Joined, Outgoing, RelayOutcome, Session, SessionError, SessionMetrics, SubscriberQueue, DEFAULT_STREAM_CAPACITY,
};
pub use state::{content_hash, load_session, save_session, ApplyError, LoadError, SessionState, StateHash};
