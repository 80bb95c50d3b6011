use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AttrValue, DeviceId, ElementId, GroupId, LinkId, ModelError, Owner, Pose, SnapshotId, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Bump,
    PossessionGranted,
    PossessionReleased,
    SnapAttached,
    SnapReleased,
    Pour,
    Flick,
    AlignApplied,
    GroupCreated,
    GroupMoved,
    SnapshotRecorded,
    SnapshotReverted,
    LinkCreated,
    ProxemicChanged,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Bump => "bump",
            EventKind::PossessionGranted => "possession_granted",
            EventKind::PossessionReleased => "possession_released",
            EventKind::SnapAttached => "snap_attached",
            EventKind::SnapReleased => "snap_released",
            EventKind::Pour => "pour",
            EventKind::Flick => "flick",
            EventKind::AlignApplied => "align_applied",
            EventKind::GroupCreated => "group_created",
            EventKind::GroupMoved => "group_moved",
            EventKind::SnapshotRecorded => "snapshot_recorded",
            EventKind::SnapshotReverted => "snapshot_reverted",
            EventKind::LinkCreated => "link_created",
            EventKind::ProxemicChanged => "proxemic_changed",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participant {
    Device(DeviceId),
    Element(ElementId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkTarget {
    Device(DeviceId),
    Element(ElementId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: LinkId,
    pub source: ElementId,
    pub target: LinkTarget,
    pub author: DeviceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedElement {
    pub owner: Owner,
    pub attributes: BTreeMap<String, AttrValue>,
}

/// Frozen copy of one device's content, displayed as a hologram at `display_pose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub snapshot_id: SnapshotId,
    pub source_device: DeviceId,
    pub elements: BTreeMap<ElementId, CapturedElement>,
    pub display_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementCopy {
    pub source: ElementId,
    pub copy: ElementId,
    pub receiver: DeviceId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Line,
    Grid,
    Stack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum SortKey {
    JoinOrder,
    /// Value of the named attribute on the device's first owned element
    /// carrying it; devices without one sort last.
    Attribute { name: String },
}

/// Kind-specific event data. Structural details are what replicas apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventDetail {
    None,
    Transfer { copies: Vec<ElementCopy>, approach_speed: f64 },
    Snap { relative: Pose },
    Align { layout: Layout, order: Vec<DeviceId> },
    Group { group_id: GroupId, members: BTreeSet<DeviceId> },
    GroupMoved { group_id: GroupId, delta: Pose },
    Snapshot { record: SnapshotRecord },
    SnapshotRef { snapshot_id: SnapshotId },
    Link { link: Link },
    Flick { placed_at: Vec3 },
    Proxemic { level: u32, previous: u32, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub participants: Vec<Participant>,
    pub detail: EventDetail,
    pub tick_time_s: f64,
}

impl InteractionEvent {
    pub fn new(kind: EventKind, participants: Vec<Participant>, detail: EventDetail, tick_time_s: f64) -> Self {
        Self { kind, participants, detail, tick_time_s }
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.participants.iter().filter_map(|p| match p {
            Participant::Device(d) => Some(*d),
            Participant::Element(_) => None,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.tick_time_s.is_finite() {
            return Err(ModelError::NonFinite("tick_time_s"));
        }
        match &self.detail {
            EventDetail::Transfer { approach_speed, .. } if !approach_speed.is_finite() => {
                Err(ModelError::NonFinite("approach_speed"))
            }
            EventDetail::Snap { relative } => relative.validate(),
            EventDetail::GroupMoved { delta, .. } => delta.validate(),
            EventDetail::Snapshot { record } => {
                if record.elements.values().all(|e| e.attributes.values().all(AttrValue::is_finite)) {
                    record.display_pose.validate()
                } else {
                    Err(ModelError::NonFinite("snapshot attribute"))
                }
            }
            EventDetail::Flick { placed_at } if !placed_at.is_finite() => Err(ModelError::NonFinite("placed_at")),
            EventDetail::Proxemic { distance, .. } if !distance.is_finite() => Err(ModelError::NonFinite("distance")),
            _ => Ok(()),
        }
    }
}
