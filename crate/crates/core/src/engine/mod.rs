//! Tick-driven interaction detectors and command handling.
//!
//! The engine reads the authoritative [`SessionState`] and returns payloads
//! (pose updates, content writes and interaction events) for the session to
//! sequence. It never mutates the state itself.

mod event;
mod possession;
mod spatial;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    attr, rect_gap, relative_pose, compose_pose, screen_plane, AttrValue, DeviceId, DeviceRecord, ElementId, GroupId,
    LinkId, Owner, Pose, SnapshotId, Vec3,
};
use crate::protocol::{Command, ErrorCode, Payload};
use crate::server::SessionState;

pub use event::{
    CapturedElement, ElementCopy, EventDetail, EventKind, InteractionEvent, Layout, Link, LinkTarget, Participant,
    SnapshotRecord, SortKey,
};
pub use possession::{
    hysteretic_level, proxemic_level, update_possession, Phase, PossessionConfig, PossessionFsm, PossessionTransition,
    ProxemicsConfig,
};
pub use spatial::{
    align_devices, element_shared_position, extended_local_to_shared, extended_shared_to_local, flick_release,
    group_move, hand_world_position, interpolate_pose, links_for_view, slice_plane, tilt, AlignConfig, FlickConfig,
    FlickOutcome, LinkView, SlicePolygon, Volume,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(SnapshotId),
    #[error("a device cannot snap to itself")]
    SelfSnap,
    #[error("device {0} is physical and cannot be moved")]
    NotHolographic(DeviceId),
    #[error("device {0} is already snapped to another anchor")]
    AlreadySnapped(DeviceId),
    #[error("group must not be empty")]
    EmptyGroup,
    #[error("element {element} is not owned by device {device}")]
    NotOwner { element: ElementId, device: DeviceId },
    #[error("device {0} has nothing snapped")]
    NotSnapped(DeviceId),
    #[error("device {0} is not in a possession")]
    NoPossession(DeviceId),
    #[error("hand frame has no root joint")]
    MissingRoot,
}

impl EngineError {
    pub fn code(&self) -> ErrorCode {
        match self {
            EngineError::UnknownDevice(_) => ErrorCode::UnknownDevice,
            EngineError::UnknownElement(_) => ErrorCode::UnknownElement,
            _ => ErrorCode::Rejected,
        }
    }
}

/// Detectors that can be switched off per session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Bump,
    Possession,
    Snap,
    Pour,
    Proxemics,
    Revert,
}

impl Technique {
    pub const ALL: [Technique; 6] = [
        Technique::Bump,
        Technique::Possession,
        Technique::Snap,
        Technique::Pour,
        Technique::Proxemics,
        Technique::Revert,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpConfig {
    pub gap: f64,
    pub min_speed: f64,
    pub refractory_s: f64,
    pub window_s: f64,
}

impl Default for BumpConfig {
    fn default() -> Self {
        Self { gap: 0.02, min_speed: 0.1, refractory_s: 1.0, window_s: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapConfig {
    pub distance: f64,
    pub dwell_s: f64,
}

impl Default for SnapConfig {
    fn default() -> Self {
        Self { distance: 0.15, dwell_s: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PourConfig {
    pub radius: f64,
    pub tilt_deg: f64,
    pub dwell_s: f64,
    pub refractory_s: f64,
}

impl Default for PourConfig {
    fn default() -> Self {
        Self { radius: 0.15, tilt_deg: 120.0, dwell_s: 0.3, refractory_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub tick_hz: f64,
    pub techniques: BTreeSet<Technique>,
    pub possession: PossessionConfig,
    pub bump: BumpConfig,
    pub snap: SnapConfig,
    pub pour: PourConfig,
    pub flick: FlickConfig,
    pub proxemics: ProxemicsConfig,
    pub align: AlignConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tick_hz: 60.0,
            techniques: Technique::ALL.into_iter().collect(),
            possession: PossessionConfig::default(),
            bump: BumpConfig::default(),
            snap: SnapConfig::default(),
            pour: PourConfig::default(),
            flick: FlickConfig::default(),
            proxemics: ProxemicsConfig::default(),
            align: AlignConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn with_techniques(mut self, techniques: impl IntoIterator<Item = Technique>) -> Self {
        self.techniques = techniques.into_iter().collect();
        self
    }

    pub fn enabled(&self, t: Technique) -> bool {
        self.techniques.contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapBinding {
    pub anchor_device: DeviceId,
    pub snapped_device: DeviceId,
    pub relative: Pose,
    pub original_pose: Pose,
}

#[derive(Debug, Clone, Copy, Default)]
struct BumpPair {
    armed: bool,
    last_fire: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct PourPair {
    elapsed: f64,
    armed: bool,
    last_fire: Option<f64>,
}

#[derive(Debug, Clone)]
struct RevertTimer {
    snapshot: Option<SnapshotId>,
    fsm: PossessionFsm,
}

const EPS: f64 = 1e-9;

pub struct InteractionEngine {
    config: EngineConfig,
    time_s: f64,
    history: BTreeMap<DeviceId, VecDeque<(f64, Vec3)>>,
    bump: BTreeMap<(DeviceId, DeviceId), BumpPair>,
    possession: BTreeMap<DeviceId, PossessionFsm>,
    snap_dwell: BTreeMap<DeviceId, (DeviceId, f64)>,
    snaps: BTreeMap<DeviceId, SnapBinding>,
    pour: BTreeMap<(DeviceId, DeviceId), PourPair>,
    revert: BTreeMap<DeviceId, RevertTimer>,
    proxemic: BTreeMap<(DeviceId, DeviceId), u32>,
}

impl Default for InteractionEngine {
    fn default() -> Self {
        Self::new(EngineConfig::default())
    }
}

fn nearest<T: Copy + Ord>(candidates: impl Iterator<Item = (f64, T)>) -> Option<(f64, T)> {
    candidates.min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
}

fn device(state: &SessionState, id: DeviceId) -> Result<&DeviceRecord, EngineError> {
    state.devices.get(&id).ok_or(EngineError::UnknownDevice(id))
}

fn event(kind: EventKind, devices: &[DeviceId], detail: EventDetail, t: f64) -> Payload {
    let participants = devices.iter().map(|d| Participant::Device(*d)).collect();
    Payload::InteractionEvent { event: InteractionEvent::new(kind, participants, detail, t) }
}

fn pose_update(device_id: DeviceId, pose: Pose) -> Payload {
    Payload::PoseUpdate { device_id, pose }
}

fn unique_copy_id(state: &SessionState, reserved: &BTreeSet<ElementId>, base: String) -> ElementId {
    let taken = |id: &ElementId| state.elements.contains_key(id) || reserved.contains(id);
    let first = ElementId::new(base.clone());
    if !taken(&first) {
        return first;
    }
    (2u32..)
        .map(|k| ElementId::new(format!("{base}#{k}")))
        .find(|id| !taken(id))
        .expect("unbounded search")
}

/// Elements a device hands over on bump or pour: its designated elements,
/// or everything it owns when nothing is designated.
pub fn transferable_elements(state: &SessionState, from: DeviceId) -> Vec<ElementId> {
    let owned: Vec<_> = state.elements.values().filter(|e| e.owner == Owner::Device(from)).collect();
    let designated: Vec<_> = owned.iter().filter(|e| e.is_designated()).map(|e| e.element_id.clone()).collect();
    if designated.is_empty() {
        owned.iter().map(|e| e.element_id.clone()).collect()
    } else {
        designated
    }
}

/// Copies of `from`'s transferable content for each receiver, as upserts.
fn transfer(state: &SessionState, from: DeviceId, receivers: &[DeviceId]) -> (Vec<ElementCopy>, Vec<Payload>) {
    let mut reserved = BTreeSet::new();
    let mut copies = Vec::new();
    let mut payloads = Vec::new();
    for source in transferable_elements(state, from) {
        let element = &state.elements[&source];
        let mut attributes = element.values();
        attributes.remove(attr::DESIGNATED);
        for &receiver in receivers {
            let copy = unique_copy_id(state, &reserved, format!("{source}@{receiver}"));
            reserved.insert(copy.clone());
            payloads.push(Payload::ContentUpsert {
                element_id: copy.clone(),
                owner: Some(Owner::Device(receiver)),
                attributes: attributes.clone(),
            });
            copies.push(ElementCopy { source: source.clone(), copy, receiver });
        }
    }
    (copies, payloads)
}

/// Every device sharing a group with `receiver`, or just `receiver`.
fn receivers_of(state: &SessionState, receiver: DeviceId, exclude: DeviceId) -> Vec<DeviceId> {
    let mut set: BTreeSet<DeviceId> =
        state.groups.values().filter(|g| g.contains(&receiver)).flat_map(|g| g.iter().copied()).collect();
    set.insert(receiver);
    set.remove(&exclude);
    set.into_iter().filter(|d| state.devices.contains_key(d)).collect()
}

fn sort_value(state: &SessionState, device: DeviceId, name: &str) -> Option<AttrValue> {
    state
        .elements
        .values()
        .filter(|e| e.owner == Owner::Device(device))
        .find_map(|e| e.get(name).cloned())
}

fn revert_payloads(record: &SnapshotRecord) -> Vec<Payload> {
    record
        .elements
        .iter()
        .map(|(id, c)| Payload::ContentUpsert {
            element_id: id.clone(),
            owner: Some(c.owner),
            attributes: c.attributes.clone(),
        })
        .collect()
}

impl InteractionEngine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            time_s: 0.0,
            history: BTreeMap::new(),
            bump: BTreeMap::new(),
            possession: BTreeMap::new(),
            snap_dwell: BTreeMap::new(),
            snaps: BTreeMap::new(),
            pour: BTreeMap::new(),
            revert: BTreeMap::new(),
            proxemic: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn snap_bindings(&self) -> impl Iterator<Item = &SnapBinding> {
        self.snaps.values()
    }

    pub fn possession_fsm(&self, local: DeviceId) -> Option<&PossessionFsm> {
        self.possession.get(&local)
    }

    /// Runs every enabled detector once and returns the resulting payloads
    /// in emission order.
    pub fn tick(&mut self, state: &SessionState, dt: f64) -> Vec<Payload> {
        assert!(dt > 0.0, "dt must be positive");
        self.time_s += dt;
        let mut out = Vec::new();
        self.record_history(state);
        if self.config.enabled(Technique::Possession) {
            self.tick_possession(state, dt, &mut out);
        }
        self.tick_snap(state, dt, &mut out);
        if self.config.enabled(Technique::Bump) {
            self.tick_bump(state, &mut out);
        }
        if self.config.enabled(Technique::Pour) {
            self.tick_pour(state, dt, &mut out);
        }
        if self.config.enabled(Technique::Revert) {
            self.tick_revert(state, dt, &mut out);
        }
        if self.config.enabled(Technique::Proxemics) {
            self.tick_proxemics(state, &mut out);
        }
        out
    }

    fn record_history(&mut self, state: &SessionState) {
        let keep = self.config.bump.window_s + EPS;
        for d in state.devices.values() {
            let h = self.history.entry(d.device_id).or_default();
            h.push_back((self.time_s, d.pose.position));
            while h.front().is_some_and(|(t, _)| *t < self.time_s - keep) {
                h.pop_front();
            }
        }
    }

    fn physical(state: &SessionState) -> impl Iterator<Item = &DeviceRecord> {
        state.devices.values().filter(|d| d.is_physical())
    }

    fn tick_possession(&mut self, state: &SessionState, dt: f64, out: &mut Vec<Payload>) {
        let cfg = self.config.possession;
        let mut taken: BTreeSet<DeviceId> = BTreeSet::new();
        let locals: Vec<DeviceId> = Self::physical(state).map(|d| d.device_id).collect();
        for local in locals {
            let l = &state.devices[&local];
            let fsm = self.possession.entry(local).or_insert_with(|| PossessionFsm::new(local, DeviceId::SERVER, &cfg));
            if state.devices.values().any(|h| h.possessed_by == Some(local)) {
                continue;
            }
            if fsm.is_possessed() {
                fsm.release();
            }
            let candidate = nearest(
                state
                    .devices
                    .values()
                    .filter(|h| {
                        h.is_holographic()
                            && h.possessed_by.is_none()
                            && !taken.contains(&h.device_id)
                            && !state.devices.values().any(|o| o.possessed_by == Some(h.device_id))
                    })
                    .map(|h| (h.pose.position.distance(l.pose.position), h.device_id))
                    .filter(|(d, _)| *d < cfg.distance),
            );
            if let Some((_, h)) = candidate {
                if h != fsm.target_device {
                    fsm.target_device = h;
                    fsm.phase = Phase::Idle;
                }
            }
            let distance = state
                .devices
                .get(&fsm.target_device)
                .filter(|h| h.possessed_by.is_none() && !taken.contains(&h.device_id))
                .map(|h| h.pose.position.distance(l.pose.position))
                .unwrap_or(f64::INFINITY);
            if fsm.update(distance, dt) == Some(PossessionTransition::Granted) {
                let target = fsm.target_device;
                taken.insert(target);
                out.push(event(EventKind::PossessionGranted, &[local, target], EventDetail::None, self.time_s));
            }
        }
    }

    fn release_possession(&mut self, state: &SessionState, sender: DeviceId) -> Result<Vec<Payload>, EngineError> {
        let pair = state
            .devices
            .values()
            .find_map(|h| match h.possessed_by {
                Some(l) if l == sender || h.device_id == sender => Some((l, h.device_id)),
                _ => None,
            })
            .ok_or(EngineError::NoPossession(sender))?;
        if let Some(fsm) = self.possession.get_mut(&pair.0) {
            fsm.release();
        }
        Ok(vec![event(EventKind::PossessionReleased, &[pair.0, pair.1], EventDetail::None, self.time_s)])
    }

    fn tick_snap(&mut self, state: &SessionState, dt: f64, out: &mut Vec<Payload>) {
        if self.config.enabled(Technique::Snap) {
            let cfg = self.config.snap;
            let anchors: Vec<DeviceId> = Self::physical(state).map(|d| d.device_id).collect();
            for anchor in anchors {
                let a = &state.devices[&anchor];
                let bound: BTreeSet<DeviceId> = self.snaps.values().map(|b| b.snapped_device).collect();
                let candidate = nearest(
                    state
                        .devices
                        .values()
                        .filter(|h| {
                            h.is_holographic()
                                && h.device_id != anchor
                                && h.possessed_by.is_none()
                                && !bound.contains(&h.device_id)
                        })
                        .map(|h| (h.pose.position.distance(a.pose.position), h.device_id))
                        .filter(|(d, _)| *d < cfg.distance),
                );
                let Some((_, target)) = candidate else {
                    self.snap_dwell.remove(&anchor);
                    continue;
                };
                let dwell = self.snap_dwell.entry(anchor).or_insert((target, 0.0));
                if dwell.0 == target {
                    dwell.1 += dt;
                } else {
                    *dwell = (target, dt);
                }
                if dwell.1 >= cfg.dwell_s - EPS {
                    self.snap_dwell.remove(&anchor);
                    if let Ok(p) = self.attach(state, anchor, target) {
                        out.extend(p);
                    }
                }
            }
        }
        for b in self.snaps.values() {
            let (Some(anchor), Some(target)) = (state.devices.get(&b.anchor_device), state.devices.get(&b.snapped_device))
            else {
                continue;
            };
            let desired = compose_pose(&anchor.pose, &b.relative);
            if target.pose != desired {
                out.push(pose_update(b.snapped_device, desired));
            }
        }
    }

    fn attach(&mut self, state: &SessionState, anchor: DeviceId, target: DeviceId) -> Result<Vec<Payload>, EngineError> {
        if anchor == target {
            return Err(EngineError::SelfSnap);
        }
        let a = device(state, anchor)?;
        let t = device(state, target)?;
        if !t.is_holographic() {
            return Err(EngineError::NotHolographic(target));
        }
        if let Some(b) = self.snaps.values().find(|b| b.snapped_device == target) {
            return if b.anchor_device == anchor { Ok(Vec::new()) } else { Err(EngineError::AlreadySnapped(target)) };
        }
        let mut out = self.release_snap(anchor).unwrap_or_default();
        let relative = relative_pose(&a.pose, &t.pose);
        self.snaps.insert(
            anchor,
            SnapBinding { anchor_device: anchor, snapped_device: target, relative, original_pose: t.pose },
        );
        out.push(event(EventKind::SnapAttached, &[anchor, target], EventDetail::Snap { relative }, self.time_s));
        Ok(out)
    }

    fn release_snap(&mut self, anchor: DeviceId) -> Result<Vec<Payload>, EngineError> {
        let b = self.snaps.remove(&anchor).ok_or(EngineError::NotSnapped(anchor))?;
        Ok(vec![
            pose_update(b.snapped_device, b.original_pose),
            event(EventKind::SnapReleased, &[anchor, b.snapped_device], EventDetail::None, self.time_s),
        ])
    }

    fn tick_bump(&mut self, state: &SessionState, out: &mut Vec<Payload>) {
        let cfg = self.config.bump;
        let ids: Vec<DeviceId> = state.devices.keys().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (da, db) = (&state.devices[&a], &state.devices[&b]);
                let gap = rect_gap(&screen_plane(da), &screen_plane(db));
                let first = !self.bump.contains_key(&(a, b));
                let pair = self.bump.entry((a, b)).or_default();
                if gap > cfg.gap {
                    pair.armed = true;
                    continue;
                }
                if first || !pair.armed {
                    continue;
                }
                let (ha, hb) = (&self.history[&a], &self.history[&b]);
                let k = ha.len().min(hb.len()) - 1;
                let (t0, a0) = ha[ha.len() - 1 - k];
                let (_, b0) = hb[hb.len() - 1 - k];
                let span = self.time_s - t0;
                if span <= 0.0 {
                    continue;
                }
                let (a1, b1) = (da.pose.position, db.pose.position);
                let speed = (a0.distance(b0) - a1.distance(b1)) / span;
                if speed < cfg.min_speed {
                    continue;
                }
                pair.armed = false;
                if pair.last_fire.is_some_and(|t| self.time_s - t < cfg.refractory_s - EPS) {
                    continue;
                }
                pair.last_fire = Some(self.time_s);
                let toward = (b0 - a0).normalized();
                let approach_a = (a1 - a0).dot(toward);
                let approach_b = (b1 - b0).dot(-toward);
                let (initiator, receiver) = if approach_a >= approach_b { (a, b) } else { (b, a) };
                let receivers = receivers_of(state, receiver, initiator);
                let (copies, upserts) = transfer(state, initiator, &receivers);
                out.extend(upserts);
                out.push(event(
                    EventKind::Bump,
                    &[initiator, receiver],
                    EventDetail::Transfer { copies, approach_speed: speed },
                    self.time_s,
                ));
            }
        }
    }

    fn tick_pour(&mut self, state: &SessionState, dt: f64, out: &mut Vec<Payload>) {
        let cfg = self.config.pour;
        let tilt_limit = cfg.tilt_deg.to_radians();
        for a in state.devices.values() {
            for b in state.devices.values() {
                if a.device_id == b.device_id {
                    continue;
                }
                let (pa, pb) = (a.pose.position, b.pose.position);
                let horizontal = ((pa.x - pb.x).powi(2) + (pa.z - pb.z).powi(2)).sqrt();
                let pouring = pa.y > pb.y && horizontal < cfg.radius && tilt(&a.pose) > tilt_limit;
                let pair = self
                    .pour
                    .entry((a.device_id, b.device_id))
                    .or_insert(PourPair { elapsed: 0.0, armed: true, last_fire: None });
                if !pouring {
                    pair.elapsed = 0.0;
                    pair.armed = true;
                    continue;
                }
                if !pair.armed {
                    continue;
                }
                pair.elapsed += dt;
                if pair.elapsed < cfg.dwell_s - EPS {
                    continue;
                }
                if pair.last_fire.is_some_and(|t| self.time_s - t < cfg.refractory_s - EPS) {
                    continue;
                }
                pair.armed = false;
                pair.elapsed = 0.0;
                pair.last_fire = Some(self.time_s);
                let (copies, upserts) = transfer(state, a.device_id, &[b.device_id]);
                out.extend(upserts);
                out.push(event(
                    EventKind::Pour,
                    &[a.device_id, b.device_id],
                    EventDetail::Transfer { copies, approach_speed: 0.0 },
                    self.time_s,
                ));
            }
        }
    }

    fn tick_revert(&mut self, state: &SessionState, dt: f64, out: &mut Vec<Payload>) {
        let cfg = self.config.possession;
        for l in Self::physical(state) {
            let local = l.device_id;
            let candidate = state
                .snapshots
                .iter()
                .enumerate()
                .map(|(i, s)| (s.display_pose.position.distance(l.pose.position), i))
                .filter(|(d, _)| *d < cfg.distance)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, i)| state.snapshots[i].snapshot_id);
            let timer = self
                .revert
                .entry(local)
                .or_insert_with(|| RevertTimer { snapshot: None, fsm: PossessionFsm::new(local, local, &cfg) });
            if candidate.is_some() && candidate != timer.snapshot {
                timer.snapshot = candidate;
                timer.fsm.phase = Phase::Idle;
            }
            let record = timer.snapshot.and_then(|id| state.snapshots.iter().find(|s| s.snapshot_id == id));
            let distance = record.map(|s| s.display_pose.position.distance(l.pose.position)).unwrap_or(f64::INFINITY);
            if timer.fsm.update(distance, dt).is_some() {
                timer.fsm.release();
                let record = record.expect("granted implies a snapshot");
                out.extend(revert_payloads(record));
                out.push(event(
                    EventKind::SnapshotReverted,
                    &[local, record.source_device],
                    EventDetail::SnapshotRef { snapshot_id: record.snapshot_id },
                    self.time_s,
                ));
            }
        }
    }

    fn tick_proxemics(&mut self, state: &SessionState, out: &mut Vec<Payload>) {
        let cfg = &self.config.proxemics;
        for l in Self::physical(state) {
            for h in state.devices.values().filter(|h| h.is_holographic()) {
                let d = l.pose.position.distance(h.pose.position);
                let key = (l.device_id, h.device_id);
                match self.proxemic.get(&key).copied() {
                    None => {
                        self.proxemic.insert(key, proxemic_level(d, &cfg.zones));
                    }
                    Some(previous) => {
                        let level = hysteretic_level(previous, d, &cfg.zones, cfg.hysteresis);
                        if level != previous {
                            self.proxemic.insert(key, level);
                            out.push(event(
                                EventKind::ProxemicChanged,
                                &[l.device_id, h.device_id],
                                EventDetail::Proxemic { level, previous, distance: d },
                                self.time_s,
                            ));
                        }
                    }
                }
            }
        }
    }

    /// Validates and expands one command into payloads. Nothing is emitted on error.
    pub fn handle_command(
        &mut self,
        state: &SessionState,
        sender: DeviceId,
        command: &Command,
    ) -> Result<Vec<Payload>, EngineError> {
        let t = self.time_s;
        match command {
            Command::SnapAttach { target } => {
                device(state, sender)?;
                self.attach(state, sender, *target)
            }
            Command::SnapRelease => self.release_snap(sender),
            Command::PossessRelease => self.release_possession(state, sender),
            Command::Align { criterion, layout, devices, origin } => {
                let mut members: Vec<&DeviceRecord> = if devices.is_empty() {
                    state.devices.values().collect()
                } else {
                    devices.iter().map(|d| device(state, *d)).collect::<Result<_, _>>()?
                };
                members.dedup_by_key(|d| d.device_id);
                match criterion {
                    SortKey::JoinOrder => members.sort_by_key(|d| (d.joined_seq, d.device_id)),
                    SortKey::Attribute { name } => members.sort_by(|a, b| {
                        let (ka, kb) = (sort_value(state, a.device_id, name), sort_value(state, b.device_id, name));
                        let by_value = match (&ka, &kb) {
                            (Some(x), Some(y)) => x.total_cmp(y),
                            (Some(_), None) => std::cmp::Ordering::Less,
                            (None, Some(_)) => std::cmp::Ordering::Greater,
                            (None, None) => std::cmp::Ordering::Equal,
                        };
                        by_value.then(a.device_id.cmp(&b.device_id))
                    }),
                }
                let origin = match origin {
                    Some(o) => *o,
                    None => state
                        .devices
                        .get(&sender)
                        .map(|d| {
                            Pose::new(d.pose.transform_point(self.config.align.origin_offset), d.pose.rotation, Vec3::ONE)
                        })
                        .unwrap_or(Pose::IDENTITY),
                };
                let placed = align_devices(&members, *layout, &origin, &self.config.align);
                let order: Vec<DeviceId> = placed.iter().map(|(d, _)| *d).collect();
                let mut out: Vec<Payload> = placed.into_iter().map(|(d, p)| pose_update(d, p)).collect();
                out.push(event(EventKind::AlignApplied, &order, EventDetail::Align { layout: *layout, order: order.clone() }, t));
                Ok(out)
            }
            Command::GroupCreate { devices } => {
                if devices.is_empty() {
                    return Err(EngineError::EmptyGroup);
                }
                let mut members = BTreeSet::new();
                for &d in devices {
                    if !device(state, d)?.is_holographic() {
                        return Err(EngineError::NotHolographic(d));
                    }
                    members.insert(d);
                }
                let group_id = GroupId(state.groups.keys().next_back().map_or(1, |g| g.0 + 1));
                let ids: Vec<DeviceId> = members.iter().copied().collect();
                Ok(vec![event(EventKind::GroupCreated, &ids, EventDetail::Group { group_id, members }, t)])
            }
            Command::GroupMove { group_id, delta } => {
                let members = state.groups.get(group_id).ok_or(EngineError::UnknownGroup(*group_id))?;
                let records: Vec<&DeviceRecord> =
                    members.iter().map(|d| device(state, *d)).collect::<Result<_, _>>()?;
                let mut out: Vec<Payload> = group_move(&records, delta).into_iter().map(|(d, p)| pose_update(d, p)).collect();
                let ids: Vec<DeviceId> = members.iter().copied().collect();
                out.push(event(EventKind::GroupMoved, &ids, EventDetail::GroupMoved { group_id: *group_id, delta: *delta }, t));
                Ok(out)
            }
            Command::Pour { target } => {
                device(state, sender)?;
                device(state, *target)?;
                let (copies, mut out) = transfer(state, sender, &[*target]);
                out.push(event(
                    EventKind::Pour,
                    &[sender, *target],
                    EventDetail::Transfer { copies, approach_speed: 0.0 },
                    t,
                ));
                Ok(out)
            }
            Command::RecordSnapshot { device: source } => {
                let d = device(state, *source)?;
                let elements: BTreeMap<ElementId, CapturedElement> = state
                    .elements
                    .values()
                    .filter(|e| e.owner == Owner::Device(*source))
                    .map(|e| (e.element_id.clone(), CapturedElement { owner: e.owner, attributes: e.values() }))
                    .collect();
                let k = state.snapshots.iter().filter(|s| s.source_device == *source).count();
                let offset = Pose::translation(
                    self.config.align.pitch_factor * d.scaled_extents().0,
                    0.0,
                    self.config.align.stack_pitch * k as f64,
                );
                let display_pose = compose_pose(&d.pose, &offset);
                let snapshot_id = SnapshotId(state.snapshots.iter().map(|s| s.snapshot_id.0).max().map_or(1, |m| m + 1));
                let record = SnapshotRecord { snapshot_id, source_device: *source, elements, display_pose };
                Ok(vec![event(EventKind::SnapshotRecorded, &[*source], EventDetail::Snapshot { record }, t)])
            }
            Command::Revert { snapshot_id } => {
                let record = state
                    .snapshots
                    .iter()
                    .find(|s| s.snapshot_id == *snapshot_id)
                    .ok_or(EngineError::UnknownSnapshot(*snapshot_id))?;
                let mut out = revert_payloads(record);
                let mut who = vec![record.source_device];
                if sender != record.source_device && state.devices.contains_key(&sender) {
                    who.insert(0, sender);
                }
                out.push(event(EventKind::SnapshotReverted, &who, EventDetail::SnapshotRef { snapshot_id: *snapshot_id }, t));
                Ok(out)
            }
            Command::LinkCreate { source, target } => {
                if !state.elements.contains_key(source) {
                    return Err(EngineError::UnknownElement(source.clone()));
                }
                let mut participants = vec![Participant::Element(source.clone())];
                match target {
                    LinkTarget::Device(d) => {
                        device(state, *d)?;
                        participants.push(Participant::Device(*d));
                    }
                    LinkTarget::Element(e) => {
                        if !state.elements.contains_key(e) {
                            return Err(EngineError::UnknownElement(e.clone()));
                        }
                        participants.push(Participant::Element(e.clone()));
                    }
                }
                let link_id = LinkId(state.links.iter().map(|l| l.link_id.0).max().map_or(1, |m| m + 1));
                let link = Link { link_id, source: source.clone(), target: target.clone(), author: sender };
                Ok(vec![Payload::InteractionEvent {
                    event: InteractionEvent::new(EventKind::LinkCreated, participants, EventDetail::Link { link }, t),
                }])
            }
            Command::Flick { element, velocity } => {
                let e = state.elements.get(element).ok_or_else(|| EngineError::UnknownElement(element.clone()))?;
                if e.owner != Owner::Device(sender) {
                    return Err(EngineError::NotOwner { element: element.clone(), device: sender });
                }
                let d = device(state, sender)?;
                let local = match e.get(attr::POSITION) {
                    Some(AttrValue::Vec2(p)) => *p,
                    Some(AttrValue::Vec3(p)) => screen_plane(d).project(*p),
                    _ => [0.0, 0.0],
                };
                match flick_release(local, *velocity, d, &self.config.flick) {
                    FlickOutcome::Stays => Ok(Vec::new()),
                    FlickOutcome::Released { shared } => Ok(vec![
                        Payload::ContentUpsert {
                            element_id: element.clone(),
                            owner: Some(Owner::Shared),
                            attributes: [(attr::POSITION.to_owned(), AttrValue::Vec3(shared))].into(),
                        },
                        Payload::InteractionEvent {
                            event: InteractionEvent::new(
                                EventKind::Flick,
                                vec![Participant::Device(sender), Participant::Element(element.clone())],
                                EventDetail::Flick { placed_at: shared },
                                t,
                            ),
                        },
                    ]),
                }
            }
        }
    }
}
