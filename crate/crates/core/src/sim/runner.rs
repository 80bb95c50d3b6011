use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{extended_local_to_shared, extended_shared_to_local, interpolate_pose, EngineConfig};
use crate::model::{attr, AttrValue, DeviceId, ElementId, Owner, Pose, Vec3};
use crate::pointcloud::{Pipeline, SyntheticScene, Throttle, DEFAULT_STRIDE, DEFAULT_TARGET_FPS};
use crate::protocol::{
    encode_stream_frame, DeviceDescriptor, Envelope, HandFrame, Joint, Payload, StreamFrameHeader, StreamKind,
    StreamPayload, ROOT_JOINT,
};
use crate::server::{Outgoing, Replica, Session, SessionState, StateHash, SubscriberQueue};

use super::scenario::{Action, Latency, NetworkModel, Scenario};

const NS_PER_S: f64 = 1e9;
/// Synthetic depth frames in scenarios are small; pipeline speed is measured
/// elsewhere.
const SIM_FRAME_WIDTH: u32 = 64;
const SIM_FRAME_HEIGHT: u32 = 48;

fn ns(seconds: f64) -> u64 {
    (seconds * NS_PER_S).round() as u64
}

fn ms(time_ns: u64) -> u64 {
    time_ns / 1_000_000
}

/// One sequenced interaction event with the virtual time it was emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_ns: u64,
    pub envelope: Envelope,
}

/// Everything the server consumed, in order; enough to rebuild the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum InputRecord {
    Open { session_id: String, engine: EngineConfig },
    Join { time_ns: u64, descriptor: DeviceDescriptor },
    Submit { time_ns: u64, sender: DeviceId, envelope: Envelope },
    Tick { time_ns: u64, dt: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: u64,
    pub messages_sent: u64,
    pub messages_rejected: u64,
    pub deliveries: u64,
    pub control_latency_p50_ms: f64,
    pub control_latency_p99_ms: f64,
    pub control_latency_max_ms: f64,
    pub stream_frames_offered: u64,
    pub stream_frames_admitted: u64,
    pub stream_frames_relayed: u64,
    pub stream_frames_delivered: u64,
    pub stream_frames_lost: u64,
    pub client_errors: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub events: Vec<LogRecord>,
    pub inputs: Vec<InputRecord>,
    pub state: SessionState,
    pub replica_hashes: BTreeMap<DeviceId, StateHash>,
    pub metrics: RunMetrics,
}

impl RunOutcome {
    pub fn state_hash(&self) -> StateHash {
        self.state.state_hash()
    }

    pub fn converged(&self) -> bool {
        let h = self.state_hash();
        self.replica_hashes.values().all(|r| *r == h)
    }
}

/// Priority classes at equal times: the engine tick integrates the interval
/// that ends now, then scripted actions fire, then the network delivers.
const CLASS_TICK: u8 = 0;
const CLASS_ACTION: u8 = 1;
const CLASS_DELIVERY: u8 = 2;

enum Job {
    Tick(u64),
    Step { action: usize, step: u32 },
    ToServer { sender: DeviceId, msg: Upstream },
    ToClient { device: DeviceId, env: Envelope },
    StreamToClient { device: DeviceId },
}

enum Upstream {
    Control(Envelope, u64),
    Stream(Bytes),
}

enum Active {
    Move { from: Pose },
    Drag { from: [f64; 2] },
    Stream { throttle: Throttle, pipeline: Pipeline, scene: SyntheticScene },
}

struct Client {
    replica: Replica,
    queue: Arc<SubscriberQueue>,
    pose: Pose,
}

struct Network {
    model: NetworkModel,
    rng: ChaCha8Rng,
    last_delivery: HashMap<(DeviceId, DeviceId), u64>,
}

impl Network {
    fn delay_ns(&mut self) -> u64 {
        let latency_ms = match self.model.latency {
            Latency::Fixed { ms } => ms,
            Latency::Uniform { min_ms, max_ms } if min_ms < max_ms => self.rng.gen_range(min_ms..=max_ms),
            Latency::Uniform { min_ms, .. } => min_ms,
        };
        ns(latency_ms / 1e3)
    }

    fn arrival(&mut self, from: DeviceId, to: DeviceId, now: u64) -> u64 {
        let at = now + self.delay_ns();
        if self.model.reorder {
            return at;
        }
        let last = self.last_delivery.entry((from, to)).or_insert(0);
        *last = (*last).max(at);
        *last
    }

    fn lose(&mut self) -> bool {
        self.model.loss > 0.0 && self.rng.gen_bool(self.model.loss)
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    session: Session,
    clients: BTreeMap<DeviceId, Client>,
    net: Network,
    heap: BinaryHeap<Reverse<(u64, u8, u64)>>,
    jobs: HashMap<u64, Job>,
    order: u64,
    now: u64,
    end: u64,
    period: u64,
    dt: f64,
    active: HashMap<usize, Active>,
    sent_at: HashMap<u64, u64>,
    latencies: Vec<u64>,
    streams: HashMap<DeviceId, Vec<Bytes>>,
    events: Vec<LogRecord>,
    inputs: Vec<InputRecord>,
    metrics: RunMetrics,
}

/// Runs `scenario` on a virtual clock. The same scenario and seed always
/// produce the same logs; nothing here reads the wall clock.
pub fn run_scenario(scenario: &Scenario) -> RunOutcome {
    let config = scenario.engine_config();
    let mut r = Runner {
        scenario,
        session: Session::new(scenario.name.clone(), config.clone()),
        clients: BTreeMap::new(),
        net: Network {
            model: scenario.network,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            last_delivery: HashMap::new(),
        },
        heap: BinaryHeap::new(),
        jobs: HashMap::new(),
        order: 0,
        now: 0,
        end: ns(scenario.duration_s),
        period: ns(1.0 / scenario.tick_hz).max(1),
        dt: 1.0 / scenario.tick_hz,
        active: HashMap::new(),
        sent_at: HashMap::new(),
        latencies: Vec::new(),
        streams: HashMap::new(),
        events: Vec::new(),
        inputs: vec![InputRecord::Open { session_id: scenario.name.clone(), engine: config }],
        metrics: RunMetrics::default(),
    };
    r.setup();
    r.run();
    r.finish()
}

impl Runner<'_> {
    fn schedule(&mut self, time: u64, class: u8, job: Job) {
        self.order += 1;
        self.heap.push(Reverse((time, class, self.order)));
        self.jobs.insert(self.order, job);
    }

    fn setup(&mut self) {
        for spec in &self.scenario.devices {
            let descriptor = spec.descriptor();
            self.inputs.push(InputRecord::Join { time_ns: 0, descriptor: descriptor.clone() });
            let joined = self.session.join(descriptor, 0).expect("scenario devices are validated");
            let replica = Replica::from_welcome(&joined.welcome).expect("join returns a welcome");
            self.clients.insert(joined.device_id, Client { replica, queue: joined.queue, pose: spec.pose });
            self.flush();
        }
        for e in &self.scenario.elements {
            let owner = self.scenario.owner(&e.owner).expect("validated owner");
            let sender = match owner {
                Owner::Device(d) => d,
                Owner::Shared => DeviceId::SERVER,
            };
            let payload = Payload::ContentUpsert {
                element_id: e.id.clone(),
                owner: Some(owner),
                attributes: e.attributes.clone(),
            };
            self.server_submit(sender, Envelope::new(sender, payload), None);
        }
        for (i, t) in self.scenario.timeline.iter().enumerate() {
            self.schedule(ns(t.at_s), CLASS_ACTION, Job::Step { action: i, step: 0 });
        }
        self.schedule_tick(1);
    }

    fn run(&mut self) {
        while let Some(Reverse((time, _, order))) = self.heap.pop() {
            let job = self.jobs.remove(&order).expect("every entry has a job");
            let scripted = matches!(job, Job::Tick(_) | Job::Step { .. });
            if scripted && time > self.end {
                continue;
            }
            self.now = time;
            match job {
                Job::Tick(n) => self.tick(n),
                Job::Step { action, step } => self.step(action, step),
                Job::ToServer { sender, msg } => self.receive(sender, msg),
                Job::ToClient { device, env } => self.deliver(device, env),
                Job::StreamToClient { device } => {
                    if let Some(q) = self.streams.get_mut(&device) {
                        q.remove(0);
                    }
                    self.metrics.stream_frames_delivered += 1;
                }
            }
        }
    }

    fn finish(self) -> RunOutcome {
        let mut metrics = self.metrics;
        let mut lat = self.latencies;
        lat.sort_unstable();
        let pick = |q: f64| -> f64 {
            if lat.is_empty() {
                return 0.0;
            }
            let rank = ((q * lat.len() as f64).ceil() as usize).clamp(1, lat.len());
            lat[rank - 1] as f64 / 1e6
        };
        metrics.control_latency_p50_ms = pick(0.5);
        metrics.control_latency_p99_ms = pick(0.99);
        metrics.control_latency_max_ms = pick(1.0);
        metrics.stream_frames_relayed = self.session.metrics().frames_relayed;
        RunOutcome {
            events: self.events,
            inputs: self.inputs,
            state: self.session.state().clone(),
            replica_hashes: self.clients.iter().map(|(id, c)| (*id, c.replica.state_hash())).collect(),
            metrics,
        }
    }

    fn tick(&mut self, n: u64) {
        self.metrics.ticks += 1;
        self.inputs.push(InputRecord::Tick { time_ns: self.now, dt: self.dt });
        let out = self.session.tick(self.dt, ms(self.now));
        self.record(&out, None);
        self.flush();
        self.schedule_tick(n + 1);
    }

    /// Tick times are computed from the index so they never drift.
    fn schedule_tick(&mut self, n: u64) {
        let at = ns(n as f64 / self.scenario.tick_hz);
        if at <= self.end {
            self.schedule(at, CLASS_TICK, Job::Tick(n));
        }
    }

    fn record(&mut self, sequenced: &[Envelope], sent_at: Option<u64>) {
        for env in sequenced {
            if let Some(t) = sent_at {
                self.sent_at.insert(env.seq, t);
            }
            if env.as_event().is_some() {
                self.events.push(LogRecord { time_ns: self.now, envelope: env.clone() });
            }
        }
    }

    fn server_submit(&mut self, sender: DeviceId, env: Envelope, sent_at: Option<u64>) {
        self.inputs.push(InputRecord::Submit { time_ns: self.now, sender, envelope: env.clone() });
        match self.session.submit(sender, env, ms(self.now)) {
            Ok(out) => self.record(&out, sent_at),
            Err(e) => {
                log::debug!("t={}ns rejected from {sender}: {e}", self.now);
                self.metrics.messages_rejected += 1;
            }
        }
        self.flush();
    }

    /// Moves everything the server queued for clients onto the network.
    fn flush(&mut self) {
        let ids: Vec<DeviceId> = self.clients.keys().copied().collect();
        for id in ids {
            for out in self.clients[&id].queue.drain() {
                match out {
                    Outgoing::Control(env) => {
                        let at = self.net.arrival(DeviceId::SERVER, id, self.now);
                        self.schedule(at, CLASS_DELIVERY, Job::ToClient { device: id, env });
                    }
                    Outgoing::Stream(frame) => {
                        if self.net.lose() {
                            self.metrics.stream_frames_lost += 1;
                            continue;
                        }
                        let at = self.net.arrival(DeviceId::SERVER, id, self.now);
                        self.streams.entry(id).or_default().push(frame);
                        self.schedule(at, CLASS_DELIVERY, Job::StreamToClient { device: id });
                    }
                }
            }
        }
    }

    fn receive(&mut self, sender: DeviceId, msg: Upstream) {
        match msg {
            Upstream::Control(env, sent) => self.server_submit(sender, env, Some(sent)),
            Upstream::Stream(frame) => {
                if let Err(e) = self.session.relay_stream(sender, frame, ms(self.now)) {
                    log::debug!("stream from {sender} rejected: {e}");
                }
                self.flush();
            }
        }
    }

    fn deliver(&mut self, device: DeviceId, env: Envelope) {
        self.metrics.deliveries += 1;
        let client = self.clients.get_mut(&device).expect("deliveries target joined clients");
        if env.seq == 0 {
            self.metrics.client_errors += 1;
            return;
        }
        match client.replica.deliver(env) {
            Ok(applied) => {
                for seq in applied {
                    if let Some(sent) = self.sent_at.get(&seq) {
                        self.latencies.push(self.now - sent);
                    }
                }
            }
            Err(e) => panic!("replica {device} diverged: {e}"),
        }
    }

    fn send(&mut self, sender: DeviceId, payload: Payload) {
        self.metrics.messages_sent += 1;
        let env = Envelope::new(sender, payload);
        let at = self.net.arrival(sender, DeviceId::SERVER, self.now);
        self.schedule(at, CLASS_DELIVERY, Job::ToServer { sender, msg: Upstream::Control(env, self.now) });
    }

    fn send_pose(&mut self, device: DeviceId, pose: Pose) {
        self.clients.get_mut(&device).expect("validated device").pose = pose;
        self.send(device, Payload::PoseUpdate { device_id: device, pose });
    }

    fn step_period(&self, rate_hz: Option<f64>) -> u64 {
        rate_hz.map_or(self.period, |r| ns(1.0 / r).max(1))
    }

    fn steps(&self, duration_s: f64, rate_hz: Option<f64>) -> u32 {
        let period = self.step_period(rate_hz);
        ((ns(duration_s) as f64 / period as f64).round() as u32).max(1)
    }

    fn next_step(&mut self, action: usize, step: u32, period: u64) {
        let at = ns(self.scenario.timeline[action].at_s) + u64::from(step + 1) * period;
        self.schedule(at, CLASS_ACTION, Job::Step { action, step: step + 1 });
    }

    fn step(&mut self, index: usize, step: u32) {
        let scenario = self.scenario;
        let action = &scenario.timeline[index].action;
        let device = scenario.device_id(action.device()).expect("validated device");
        match action {
            Action::MoveLinear { from, to, duration_s, rate_hz, .. } => {
                let n = self.steps(*duration_s, *rate_hz);
                if step == 0 {
                    let start = from.unwrap_or(self.clients[&device].pose);
                    self.active.insert(index, Active::Move { from: start });
                    if from.is_some() {
                        self.send_pose(device, start);
                    }
                } else {
                    let Some(Active::Move { from }) = self.active.get(&index) else { unreachable!() };
                    let pose = if step == n { *to } else { interpolate_pose(from, to, f64::from(step) / f64::from(n)) };
                    self.send_pose(device, pose);
                }
                if step < n {
                    self.next_step(index, step, self.step_period(*rate_hz));
                } else {
                    self.active.remove(&index);
                }
            }
            Action::SetPose { pose, .. } => self.send_pose(device, *pose),
            Action::Hold { duration_s, rate_hz, .. } => {
                let pose = self.clients[&device].pose;
                self.send_pose(device, pose);
                if step < self.steps(*duration_s, *rate_hz) {
                    self.next_step(index, step, self.step_period(*rate_hz));
                }
            }
            Action::SetAttribute { element, name, value, .. } => {
                let attributes = [(name.clone(), value.clone())].into();
                self.send(device, Payload::ContentUpsert { element_id: element.clone(), owner: None, attributes });
            }
            Action::RemoveElement { element, .. } => {
                self.send(device, Payload::ContentRemove { element_id: element.clone() });
            }
            Action::Command { command, .. } => self.send(device, Payload::Command { command: command.clone() }),
            Action::DragContent { element, to, duration_s, rate_hz, .. } => {
                self.drag_step(index, step, device, element, *to, self.steps(*duration_s, *rate_hz), *rate_hz);
            }
            Action::InjectStream { kind, frames, fps, target_fps, width, height, .. } => {
                if *frames == 0 {
                    return;
                }
                if step == 0 {
                    let target = target_fps.unwrap_or(DEFAULT_TARGET_FPS);
                    let scene = SyntheticScene {
                        width: width.unwrap_or(SIM_FRAME_WIDTH),
                        height: height.unwrap_or(SIM_FRAME_HEIGHT),
                        fps: *fps,
                        seed: scenario.seed,
                    };
                    let pipeline = Pipeline::new(target, DEFAULT_STRIDE).expect("stride is non-zero");
                    self.active.insert(index, Active::Stream { throttle: Throttle::new(target), pipeline, scene });
                }
                self.metrics.stream_frames_offered += 1;
                if let Some(frame) = self.stream_frame(index, device, *kind, step) {
                    self.metrics.stream_frames_admitted += 1;
                    let at = self.net.arrival(device, DeviceId::SERVER, self.now);
                    self.schedule(at, CLASS_DELIVERY, Job::ToServer { sender: device, msg: Upstream::Stream(frame) });
                }
                if step + 1 < *frames {
                    self.next_step(index, step, ns(1.0 / fps).max(1));
                } else {
                    self.active.remove(&index);
                }
            }
        }
    }

    fn stream_frame(&mut self, index: usize, device: DeviceId, kind: StreamKind, step: u32) -> Option<Bytes> {
        let now_ms = ms(self.now);
        let pose = self.clients[&device].pose;
        let Some(Active::Stream { throttle, pipeline, scene }) = self.active.get_mut(&index) else { unreachable!() };
        if !throttle.admit(now_ms) {
            return None;
        }
        let bytes = match kind {
            StreamKind::Pointcloud => {
                let mut frame = scene.frame(step);
                frame.timestamp_ms = now_ms;
                pipeline.process(&frame).expect("synthetic frames are valid")
            }
            StreamKind::Hand => {
                let joints = (0..5u16)
                    .map(|id| Joint { id: ROOT_JOINT + id, position: pose.position + Vec3::new(0.02 * f64::from(id), 0.1, 0.05) })
                    .collect::<Vec<_>>();
                let hand = HandFrame { device_id: device, joints, root_scale: pose.scale, timestamp_ms: now_ms };
                let header = StreamFrameHeader { kind: StreamKind::Hand, frame_id: step, count: 5 };
                encode_stream_frame(&header, &StreamPayload::Hand(hand)).expect("header matches payload")
            }
        };
        Some(Bytes::from(bytes))
    }

    #[allow(clippy::too_many_arguments)]
    fn drag_step(&mut self, index: usize, step: u32, device: DeviceId, element: &ElementId, to: [f64; 2], n: u32, rate_hz: Option<f64>) {
        if step == 0 {
            let state = self.clients[&device].replica.state();
            let start = state.elements.get(element).and_then(|e| match (e.owner, e.get(attr::POSITION)) {
                (Owner::Device(d), Some(AttrValue::Vec2(p))) if d == device => Some(*p),
                _ => None,
            });
            let Some(from) = start else {
                log::debug!("drag of {element} skipped: not on {device}'s screen");
                self.metrics.client_errors += 1;
                return;
            };
            self.active.insert(index, Active::Drag { from });
        } else {
            let Some(Active::Drag { from }) = self.active.get(&index) else { return };
            let t = f64::from(step) / f64::from(n);
            let local = if step == n { to } else { [from[0] + (to[0] - from[0]) * t, from[1] + (to[1] - from[1]) * t] };
            let (owner, position) = self.place_on_screens(device, local);
            let attributes = [(attr::POSITION.to_owned(), position)].into();
            self.send(device, Payload::ContentUpsert { element_id: element.clone(), owner: Some(owner), attributes });
        }
        if step < n {
            self.next_step(index, step, self.step_period(rate_hz));
        } else {
            self.active.remove(&index);
        }
    }

    /// Maps a point on `device`'s extended plane to the screen showing it:
    /// the device itself, else the lowest-id other device, else shared space.
    fn place_on_screens(&self, device: DeviceId, local: [f64; 2]) -> (Owner, AttrValue) {
        let state = self.clients[&device].replica.state();
        let own = &state.devices[&device];
        let shared = extended_local_to_shared(own, local);
        if extended_shared_to_local(own, shared).is_some() {
            return (Owner::Device(device), AttrValue::Vec2(local));
        }
        // Only screens lying in the same plane extend each other.
        for other in state.devices.values().filter(|d| d.device_id != device) {
            if let Some(p) = extended_shared_to_local(other, shared) {
                if extended_local_to_shared(other, p).distance(shared) < 1e-6 {
                    return (Owner::Device(other.device_id), AttrValue::Vec2(p));
                }
            }
        }
        (Owner::Shared, AttrValue::Vec3(shared))
    }
}

/// Rebuilds the event log and final state from a recorded input log.
pub fn replay_inputs(inputs: &[InputRecord]) -> Result<(Vec<LogRecord>, SessionState), String> {
    let mut iter = inputs.iter();
    let Some(InputRecord::Open { session_id, engine }) = iter.next() else {
        return Err("input log must start with an open record".into());
    };
    let mut session = Session::new(session_id.clone(), engine.clone());
    let mut events = Vec::new();
    let mut keep = |time_ns: u64, out: Vec<Envelope>| {
        events.extend(out.into_iter().filter(|e| e.as_event().is_some()).map(|envelope| LogRecord { time_ns, envelope }));
    };
    for (i, record) in iter.enumerate() {
        match record {
            InputRecord::Open { .. } => return Err(format!("record {}: duplicate open", i + 1)),
            InputRecord::Join { time_ns, descriptor } => {
                session.join(descriptor.clone(), ms(*time_ns)).map_err(|e| format!("record {}: {e}", i + 1))?;
            }
            InputRecord::Submit { time_ns, sender, envelope } => {
                if let Ok(out) = session.submit(*sender, envelope.clone(), ms(*time_ns)) {
                    keep(*time_ns, out);
                }
            }
            InputRecord::Tick { time_ns, dt } => keep(*time_ns, session.tick(*dt, ms(*time_ns))),
        }
    }
    Ok((events, session.state().clone()))
}
