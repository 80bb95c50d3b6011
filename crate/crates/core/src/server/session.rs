use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use thiserror::Error;
use tokio::sync::Notify;

use crate::engine::{EngineConfig, EngineError, InteractionEngine};
use crate::model::DeviceId;
use crate::protocol::{peek_header, CodecError, DeviceDescriptor, Envelope, ErrorCode, Payload, StreamKind};

use super::state::{ApplyError, SessionState, StateHash};

pub const DEFAULT_STREAM_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Control(Envelope),
    Stream(Bytes),
}

#[derive(Debug, Default)]
struct QueueInner {
    control: VecDeque<Envelope>,
    stream: VecDeque<Bytes>,
    dropped: u64,
    closed: bool,
}

/// Per-subscriber outbox: an unbounded ordered control queue and a bounded
/// stream ring that drops its oldest frame when full. Control always drains
/// first.
#[derive(Debug)]
pub struct SubscriberQueue {
    device_id: DeviceId,
    capacity: usize,
    inner: Mutex<QueueInner>,
    notify: Notify,
}

impl SubscriberQueue {
    pub fn new(device_id: DeviceId, capacity: usize) -> Self {
        assert!(capacity > 0, "stream capacity must be positive");
        Self { device_id, capacity, inner: Mutex::new(QueueInner::default()), notify: Notify::new() }
    }

    pub fn device_id(&self) -> DeviceId {
        self.device_id
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn push_control(&self, env: Envelope) {
        self.lock().control.push_back(env);
        self.notify.notify_one();
    }

    /// Enqueues a stream frame; returns whether an older frame was dropped.
    pub fn push_stream(&self, frame: Bytes) -> bool {
        let dropped = {
            let mut q = self.lock();
            let dropped = q.stream.len() >= self.capacity;
            if dropped {
                q.stream.pop_front();
                q.dropped += 1;
            }
            q.stream.push_back(frame);
            dropped
        };
        self.notify.notify_one();
        dropped
    }

    pub fn try_next(&self) -> Option<Outgoing> {
        let mut q = self.lock();
        q.control.pop_front().map(Outgoing::Control).or_else(|| q.stream.pop_front().map(Outgoing::Stream))
    }

    pub fn pop_control(&self) -> Option<Envelope> {
        self.lock().control.pop_front()
    }

    pub fn pop_stream(&self) -> Option<Bytes> {
        self.lock().stream.pop_front()
    }

    pub fn drain(&self) -> Vec<Outgoing> {
        std::iter::from_fn(|| self.try_next()).collect()
    }

    pub fn stream_len(&self) -> usize {
        self.lock().stream.len()
    }

    pub fn control_len(&self) -> usize {
        self.lock().control.len()
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Waits for the next outgoing item; `None` once closed and empty.
    pub async fn recv(&self) -> Option<Outgoing> {
        loop {
            if let Some(item) = self.try_next() {
                return Some(item);
            }
            if self.is_closed() {
                return None;
            }
            self.notify.notified().await;
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("device {0} has not joined")]
    NotJoined(DeviceId),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Rejected(String),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::NotJoined(_) => ErrorCode::NotJoined,
            SessionError::Codec(CodecError::Version { .. }) => ErrorCode::Version,
            SessionError::Codec(_) => ErrorCode::Malformed,
            SessionError::Apply(ApplyError::UnknownDevice(_)) => ErrorCode::UnknownDevice,
            SessionError::Apply(ApplyError::UnknownElement(_)) => ErrorCode::UnknownElement,
            SessionError::Apply(_) | SessionError::Rejected(_) => ErrorCode::Rejected,
            SessionError::Engine(e) => e.code(),
        }
    }

    pub fn to_envelope(&self, timestamp_ms: u64) -> Envelope {
        Envelope::stamped(
            0,
            DeviceId::SERVER,
            timestamp_ms,
            Payload::Error { code: self.code(), message: self.to_string() },
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionMetrics {
    pub messages_sequenced: u64,
    pub frames_relayed: u64,
    pub frames_dropped: u64,
    recent_frames: BTreeMap<(DeviceId, StreamKind), VecDeque<u64>>,
}

impl SessionMetrics {
    fn record_frame(&mut self, sender: DeviceId, kind: StreamKind, now_ms: u64) {
        let q = self.recent_frames.entry((sender, kind)).or_default();
        q.push_back(now_ms);
        while q.front().is_some_and(|&t| t + 1000 <= now_ms) {
            q.pop_front();
        }
    }

    /// Frames per second over the last second, per (sender, kind).
    pub fn stream_fps(&self, now_ms: u64) -> Vec<(DeviceId, StreamKind, f64)> {
        self.recent_frames
            .iter()
            .map(|((d, k), q)| (*d, *k, q.iter().filter(|&&t| t + 1000 > now_ms && t <= now_ms).count() as f64))
            .collect()
    }

    /// Plain-text dump, one `name{labels} value` line per metric.
    pub fn render(&self, session_id: &str, now_ms: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "messages_sequenced{{session=\"{session_id}\"}} {}", self.messages_sequenced);
        let _ = writeln!(s, "frames_relayed{{session=\"{session_id}\"}} {}", self.frames_relayed);
        let _ = writeln!(s, "frames_dropped{{session=\"{session_id}\"}} {}", self.frames_dropped);
        for (d, k, fps) in self.stream_fps(now_ms) {
            let _ = writeln!(s, "stream_fps{{session=\"{session_id}\",sender=\"{d}\",kind=\"{}\"}} {fps}", k.as_str());
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Joined {
    pub device_id: DeviceId,
    pub welcome: Envelope,
    pub queue: Arc<SubscriberQueue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RelayOutcome {
    pub delivered: usize,
    pub dropped: usize,
}

/// Single-writer session core: sequences writes, runs the engine and fans
/// envelopes and stream frames out to subscriber queues.
pub struct Session {
    state: SessionState,
    engine: InteractionEngine,
    subscribers: BTreeMap<DeviceId, Arc<SubscriberQueue>>,
    metrics: SessionMetrics,
    stream_capacity: usize,
}

impl Session {
    pub fn new(session_id: impl Into<String>, config: EngineConfig) -> Self {
        Self::from_state(SessionState::new(session_id), config)
    }

    pub fn from_state(state: SessionState, config: EngineConfig) -> Self {
        Self {
            state,
            engine: InteractionEngine::new(config),
            subscribers: BTreeMap::new(),
            metrics: SessionMetrics::default(),
            stream_capacity: DEFAULT_STREAM_CAPACITY,
        }
    }

    pub fn with_stream_capacity(mut self, capacity: usize) -> Self {
        self.stream_capacity = capacity;
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> &str {
        &self.state.session_id
    }

    pub fn state_hash(&self) -> StateHash {
        self.state.state_hash()
    }

    pub fn engine(&self) -> &InteractionEngine {
        &self.engine
    }

    pub fn metrics(&self) -> &SessionMetrics {
        &self.metrics
    }

    pub fn subscriber(&self, device: DeviceId) -> Option<&Arc<SubscriberQueue>> {
        self.subscribers.get(&device)
    }

    pub fn subscribers(&self) -> impl Iterator<Item = &Arc<SubscriberQueue>> {
        self.subscribers.values()
    }

    fn sequence(&mut self, sender: DeviceId, payload: Payload, now_ms: u64, skip: Option<DeviceId>) -> Envelope {
        let env = Envelope::stamped(self.state.seq + 1, sender, now_ms, payload);
        self.state.apply(&env).expect("payload validated before sequencing");
        self.metrics.messages_sequenced += 1;
        for (id, q) in &self.subscribers {
            if Some(*id) != skip {
                q.push_control(env.clone());
            }
        }
        env
    }

    pub fn join(&mut self, mut descriptor: DeviceDescriptor, now_ms: u64) -> Result<Joined, SessionError> {
        descriptor.validate().map_err(CodecError::from)?;
        let device_id = self.state.next_device_id();
        descriptor.device_id = Some(device_id);
        let join = self.sequence(device_id, Payload::Join { descriptor }, now_ms, None);
        let welcome = Envelope::stamped(
            join.seq,
            DeviceId::SERVER,
            now_ms,
            Payload::Welcome { device_id, state: Box::new(self.state.clone()) },
        );
        let queue = Arc::new(SubscriberQueue::new(device_id, self.stream_capacity));
        self.subscribers.insert(device_id, queue.clone());
        Ok(Joined { device_id, welcome, queue })
    }

    /// Detaches a subscriber. Its device record stays in the session.
    pub fn leave(&mut self, device: DeviceId) {
        if let Some(q) = self.subscribers.remove(&device) {
            q.close();
        }
    }

    /// Sequences a client write and broadcasts it (and any effects) to every
    /// subscriber including the sender. Errors go to the sender only.
    pub fn submit(&mut self, sender: DeviceId, env: Envelope, now_ms: u64) -> Result<Vec<Envelope>, SessionError> {
        let result = self.try_submit(sender, env, now_ms);
        if let Err(e) = &result {
            if let Some(q) = self.subscribers.get(&sender) {
                q.push_control(e.to_envelope(now_ms));
            }
        }
        result
    }

    fn try_submit(&mut self, sender: DeviceId, env: Envelope, now_ms: u64) -> Result<Vec<Envelope>, SessionError> {
        if sender != DeviceId::SERVER && !self.state.devices.contains_key(&sender) {
            return Err(SessionError::NotJoined(sender));
        }
        env.payload.validate()?;
        match &env.payload {
            Payload::PoseUpdate { device_id, .. } if !self.state.devices.contains_key(device_id) => {
                return Err(ApplyError::UnknownDevice(*device_id).into());
            }
            Payload::ContentRemove { element_id } if !self.state.elements.contains_key(element_id) => {
                return Err(ApplyError::UnknownElement(element_id.clone()).into());
            }
            Payload::PoseUpdate { .. } | Payload::ContentUpsert { .. } | Payload::ContentRemove { .. } => {}
            Payload::Command { command } => {
                let effects = self.engine.handle_command(&self.state, sender, command)?;
                let mut out = vec![self.sequence(sender, env.payload, now_ms, None)];
                for p in effects {
                    out.push(self.sequence(DeviceId::SERVER, p, now_ms, None));
                }
                return Ok(out);
            }
            other => return Err(SessionError::Rejected(format!("{} is not accepted from clients", other.tag()))),
        }
        Ok(vec![self.sequence(sender, env.payload, now_ms, None)])
    }

    /// Advances the engine by `dt` seconds and sequences what it emits.
    pub fn tick(&mut self, dt: f64, now_ms: u64) -> Vec<Envelope> {
        let payloads = self.engine.tick(&self.state, dt);
        payloads.into_iter().map(|p| self.sequence(DeviceId::SERVER, p, now_ms, None)).collect()
    }

    /// Fans a binary stream frame out to every other subscriber.
    pub fn relay_stream(&mut self, sender: DeviceId, frame: Bytes, now_ms: u64) -> Result<RelayOutcome, SessionError> {
        let result = self.try_relay(sender, frame, now_ms);
        if let Err(e) = &result {
            if let Some(q) = self.subscribers.get(&sender) {
                q.push_control(e.to_envelope(now_ms));
            }
        }
        result
    }

    fn try_relay(&mut self, sender: DeviceId, frame: Bytes, now_ms: u64) -> Result<RelayOutcome, SessionError> {
        if !self.state.devices.contains_key(&sender) {
            return Err(SessionError::NotJoined(sender));
        }
        let header = peek_header(&frame)?;
        self.metrics.record_frame(sender, header.kind, now_ms);
        let mut outcome = RelayOutcome::default();
        for (id, q) in &self.subscribers {
            if *id == sender {
                continue;
            }
            if q.push_stream(frame.clone()) {
                outcome.dropped += 1;
            }
            outcome.delivered += 1;
        }
        if outcome.delivered > 0 {
            self.metrics.frames_relayed += 1;
        }
        self.metrics.frames_dropped += outcome.dropped as u64;
        Ok(outcome)
    }
}
