use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EventDetail, EventKind, InteractionEvent, Link, LinkTarget, SnapshotRecord};
use crate::model::{
    AttrValue, ContentElement, DeviceId, DeviceKind, DeviceRecord, ElementId, GroupId, ModelError, Owner, Pose,
    Presence, ScreenExtents,
};
use crate::protocol::{to_canonical_bytes, Envelope, Payload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub devices: BTreeMap<DeviceId, DeviceRecord>,
    pub elements: BTreeMap<ElementId, ContentElement>,
    pub links: Vec<Link>,
    pub groups: BTreeMap<GroupId, BTreeSet<DeviceId>>,
    pub snapshots: Vec<SnapshotRecord>,
    /// Seq of the last applied write.
    pub seq: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplyError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("{0} cannot be applied to session state")]
    NotApplicable(&'static str),
}

/// SHA-256 digest of a session's synchronized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateHash(pub [u8; 32]);

impl StateHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Serialize)]
struct DeviceView<'a> {
    kind: DeviceKind,
    extents: &'a ScreenExtents,
    pose: &'a Pose,
    presence: Presence,
    possessed_by: Option<DeviceId>,
}

#[derive(Serialize)]
struct ElementView {
    owner: Owner,
    attributes: BTreeMap<String, AttrValue>,
}

#[derive(Serialize)]
struct HashView<'a> {
    devices: BTreeMap<DeviceId, DeviceView<'a>>,
    elements: BTreeMap<&'a ElementId, ElementView>,
    links: Vec<&'a Link>,
    groups: &'a BTreeMap<GroupId, BTreeSet<DeviceId>>,
}

fn digest(bytes: &[u8]) -> StateHash {
    StateHash(Sha256::digest(bytes).into())
}

fn element_view(e: &ContentElement) -> ElementView {
    ElementView { owner: e.owner, attributes: e.values() }
}

/// Digest over element values only, for comparing one device's content.
pub fn content_hash<'a>(elements: impl IntoIterator<Item = &'a ContentElement>) -> StateHash {
    let view: BTreeMap<&ElementId, ElementView> = elements.into_iter().map(|e| (&e.element_id, element_view(e))).collect();
    digest(&to_canonical_bytes(&view))
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            devices: BTreeMap::new(),
            elements: BTreeMap::new(),
            links: Vec::new(),
            groups: BTreeMap::new(),
            snapshots: Vec::new(),
            seq: 0,
        }
    }

    pub fn next_device_id(&self) -> DeviceId {
        DeviceId(self.devices.keys().next_back().map_or(1, |d| d.0 + 1))
    }

    /// Digest over devices, elements, links and groups. Write bookkeeping
    /// (seqs) is excluded, so states holding the same values hash equal
    /// however they were built.
    pub fn state_hash(&self) -> StateHash {
        let mut links: Vec<&Link> = self.links.iter().collect();
        links.sort_by_key(|l| l.link_id);
        let view = HashView {
            devices: self
                .devices
                .iter()
                .map(|(id, d)| {
                    (
                        *id,
                        DeviceView {
                            kind: d.kind,
                            extents: &d.extents,
                            pose: &d.pose,
                            presence: d.presence,
                            possessed_by: d.possessed_by,
                        },
                    )
                })
                .collect(),
            elements: self.elements.iter().map(|(id, e)| (id, element_view(e))).collect(),
            links,
            groups: &self.groups,
        };
        digest(&to_canonical_bytes(&view))
    }

    /// Content owned by one device.
    pub fn device_content(&self, device: DeviceId) -> impl Iterator<Item = &ContentElement> {
        self.elements.values().filter(move |e| e.owner == Owner::Device(device))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for d in self.devices.values() {
            d.extents.validate()?;
            d.pose.validate()?;
        }
        for e in self.elements.values() {
            if !e.attributes.values().all(|a| a.value.is_finite()) {
                return Err(ModelError::NonFinite("attribute"));
            }
        }
        for s in &self.snapshots {
            s.display_pose.validate()?;
        }
        Ok(())
    }

    /// Applies one sequenced envelope. Writes carry their seq, and
    /// attribute and pose writes are last-writer-wins by seq, so replicas
    /// converge regardless of the order writes arrive in.
    pub fn apply(&mut self, env: &Envelope) -> Result<(), ApplyError> {
        let seq = env.seq;
        match &env.payload {
            Payload::Join { descriptor } => {
                let id = descriptor.device_id.unwrap_or(env.sender);
                let mut record = DeviceRecord::new(id, descriptor.kind, descriptor.extents, descriptor.presence)
                    .with_pose(descriptor.pose);
                record.last_seq = seq;
                record.joined_seq = seq;
                self.devices.insert(id, record);
            }
            Payload::PoseUpdate { device_id, pose } => {
                let d = self.devices.get_mut(device_id).ok_or(ApplyError::UnknownDevice(*device_id))?;
                if seq > d.last_seq {
                    d.pose = *pose;
                    d.last_seq = seq;
                }
            }
            Payload::ContentUpsert { element_id, owner, attributes } => {
                let default_owner = if env.sender == DeviceId::SERVER { Owner::Shared } else { Owner::Device(env.sender) };
                let e = self.elements.entry(element_id.clone()).or_insert_with(|| {
                    let mut e = ContentElement::new(element_id.clone(), owner.unwrap_or(default_owner));
                    e.owner_seq = seq;
                    e
                });
                if let Some(o) = owner {
                    e.set_owner(*o, seq);
                }
                for (name, value) in attributes {
                    e.write(name, value.clone(), seq);
                }
            }
            Payload::ContentRemove { element_id } => {
                self.elements.remove(element_id).ok_or_else(|| ApplyError::UnknownElement(element_id.clone()))?;
                self.links.retain(|l| &l.source != element_id && l.target != LinkTarget::Element(element_id.clone()));
            }
            Payload::InteractionEvent { event } => self.apply_event(event),
            Payload::Command { .. } => {}
            Payload::Welcome { .. } | Payload::StreamFrameHeader { .. } | Payload::Error { .. } => {
                return Err(ApplyError::NotApplicable(env.payload.tag()));
            }
        }
        self.seq = self.seq.max(seq);
        Ok(())
    }

    fn apply_event(&mut self, event: &InteractionEvent) {
        let devices: Vec<DeviceId> = event.devices().collect();
        match (&event.kind, &event.detail) {
            (EventKind::PossessionGranted, _) if devices.len() == 2 => {
                if let Some(h) = self.devices.get_mut(&devices[1]) {
                    h.possessed_by = Some(devices[0]);
                }
            }
            (EventKind::PossessionReleased, _) if devices.len() == 2 => {
                if let Some(h) = self.devices.get_mut(&devices[1]) {
                    h.possessed_by = None;
                }
            }
            (EventKind::GroupCreated, EventDetail::Group { group_id, members }) => {
                self.groups.insert(*group_id, members.clone());
            }
            (EventKind::SnapshotRecorded, EventDetail::Snapshot { record }) => {
                if !self.snapshots.iter().any(|s| s.snapshot_id == record.snapshot_id) {
                    self.snapshots.push(record.clone());
                }
            }
            (EventKind::LinkCreated, EventDetail::Link { link })
                if !self.links.iter().any(|l| l.link_id == link.link_id) => {
                    self.links.push(link.clone());
                }
            _ => {}
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt session file at byte {offset}: {message}")]
    Corrupt { offset: usize, message: String },
    #[error("invalid session: {0}")]
    Invalid(#[from] ModelError),
}

pub fn save_session(state: &SessionState, path: &Path) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, to_canonical_bytes(state))?;
    fs::rename(&tmp, path)
}

pub fn load_session(path: &Path) -> Result<SessionState, LoadError> {
    let bytes = fs::read(path)?;
    let state: SessionState = serde_json::from_slice(&bytes).map_err(|e| LoadError::Corrupt {
        offset: crate::protocol::error_offset(&bytes, &e),
        message: e.to_string(),
    })?;
    state.validate()?;
    Ok(state)
}
