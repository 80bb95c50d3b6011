//! Message catalog and codecs for everything that crosses the wire.
//!
//! Control messages are canonical JSON text (stable key order, shortest
//! round-trip float formatting). Stream frames are a compact little-endian
//! binary layout behind the `HDPC` magic.

mod control;
mod stream;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{InteractionEvent, Layout, LinkTarget, SortKey};
use crate::model::{
    AttrValue, DeviceId, DeviceKind, ElementId, GroupId, ModelError, Owner, Pose, Presence, ScreenExtents,
    SnapshotId,
};
use crate::server::SessionState;

pub use control::{decode_control, encode_control, to_canonical_bytes};
pub(crate) use control::error_offset;
pub use stream::{
    decode_stream_frame, encode_stream_frame, peek_header, HandFrame, Joint, StreamFrameHeader, StreamKind, StreamPayload, HAND_JOINT_BYTES,
    HAND_PREFIX_BYTES, ROOT_JOINT, STREAM_HEADER_BYTES, STREAM_MAGIC, STREAM_VERSION,
};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("non-finite number in {0}")]
    NonFinite(&'static str),
    #[error("malformed message at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unsupported protocol version {found}")]
    Version { found: u64 },
    #[error("invalid value: {0}")]
    Invalid(#[from] ModelError),
    #[error("bad stream magic")]
    BadMagic,
    #[error("unsupported stream frame version {0}")]
    FrameVersion(u8),
    #[error("unknown stream kind {0}")]
    UnknownKind(u8),
    #[error("buffer too short: need {needed} bytes, have {available}")]
    Short { needed: usize, available: usize },
    #[error("count mismatch: header declares {declared}, payload holds {actual}")]
    CountMismatch { declared: u32, actual: usize },
    #[error("stream kind {header:?} does not match payload {payload:?}")]
    KindMismatch { header: StreamKind, payload: StreamKind },
}

/// The versioned wrapper around every control message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub protocol_version: u32,
    /// Server-assigned; `0` from senders.
    pub seq: u64,
    pub sender: DeviceId,
    /// Server clock, milliseconds.
    pub timestamp_ms: u64,
    pub payload: Payload,
}

impl Envelope {
    /// An unstamped envelope as a client would send it.
    pub fn new(sender: DeviceId, payload: Payload) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, seq: 0, sender, timestamp_ms: 0, payload }
    }

    pub fn stamped(seq: u64, sender: DeviceId, timestamp_ms: u64, payload: Payload) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, seq, sender, timestamp_ms, payload }
    }

    pub fn as_event(&self) -> Option<&InteractionEvent> {
        match &self.payload {
            Payload::InteractionEvent { event } => Some(event),
            _ => None,
        }
    }
}

/// What a device tells the server about itself when joining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub kind: DeviceKind,
    pub extents: ScreenExtents,
    pub presence: Presence,
    #[serde(default)]
    pub pose: Pose,
    /// Filled in by the server when broadcasting a join.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<DeviceId>,
}

impl DeviceDescriptor {
    pub fn new(kind: DeviceKind, extents: ScreenExtents, presence: Presence) -> Self {
        Self { kind, extents, presence, pose: Pose::IDENTITY, device_id: None }
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.extents.validate()?;
        self.pose.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Join {
        descriptor: DeviceDescriptor,
    },
    Welcome {
        device_id: DeviceId,
        state: Box<SessionState>,
    },
    PoseUpdate {
        device_id: DeviceId,
        pose: Pose,
    },
    ContentUpsert {
        element_id: ElementId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        owner: Option<Owner>,
        #[serde(default)]
        attributes: BTreeMap<String, AttrValue>,
    },
    ContentRemove {
        element_id: ElementId,
    },
    Command {
        command: Command,
    },
    InteractionEvent {
        event: InteractionEvent,
    },
    StreamFrameHeader {
        kind: StreamKind,
        frame_id: u32,
        count: u32,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Payload {
    pub fn tag(&self) -> &'static str {
        match self {
            Payload::Join { .. } => "join",
            Payload::Welcome { .. } => "welcome",
            Payload::PoseUpdate { .. } => "pose_update",
            Payload::ContentUpsert { .. } => "content_upsert",
            Payload::ContentRemove { .. } => "content_remove",
            Payload::Command { .. } => "command",
            Payload::InteractionEvent { .. } => "interaction_event",
            Payload::StreamFrameHeader { .. } => "stream_frame_header",
            Payload::Error { .. } => "error",
        }
    }

    /// Checks finiteness and domain invariants of every number carried.
    pub fn validate(&self) -> Result<(), CodecError> {
        match self {
            Payload::Join { descriptor } => descriptor.validate().map_err(finite_or_invalid),
            Payload::Welcome { state, .. } => state.validate().map_err(finite_or_invalid),
            Payload::PoseUpdate { pose, .. } => pose.validate().map_err(finite_or_invalid),
            Payload::ContentUpsert { attributes, .. } => {
                if attributes.values().all(AttrValue::is_finite) {
                    Ok(())
                } else {
                    Err(CodecError::NonFinite("attribute"))
                }
            }
            Payload::Command { command } => command.validate().map_err(finite_or_invalid),
            Payload::InteractionEvent { event } => event.validate().map_err(finite_or_invalid),
            Payload::ContentRemove { .. } | Payload::StreamFrameHeader { .. } | Payload::Error { .. } => Ok(()),
        }
    }
}

fn finite_or_invalid(e: ModelError) -> CodecError {
    match e {
        ModelError::NonFinite(what) => CodecError::NonFinite(what),
        other => CodecError::Invalid(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    SnapAttach {
        target: DeviceId,
    },
    SnapRelease,
    PossessRelease,
    Align {
        criterion: SortKey,
        layout: Layout,
        /// Devices to arrange; empty means every holographic device.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        devices: Vec<DeviceId>,
        /// Layout origin; defaults to a spot above the sender's device.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<Pose>,
    },
    GroupCreate {
        devices: Vec<DeviceId>,
    },
    GroupMove {
        group_id: GroupId,
        delta: Pose,
    },
    Pour {
        target: DeviceId,
    },
    RecordSnapshot {
        device: DeviceId,
    },
    Revert {
        snapshot_id: SnapshotId,
    },
    LinkCreate {
        source: ElementId,
        target: LinkTarget,
    },
    /// Touch release with a 2D velocity in screen meters per second.
    Flick {
        element: ElementId,
        velocity: [f64; 2],
    },
}

impl Command {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Command::Align { origin: Some(p), .. } => p.validate(),
            Command::GroupMove { delta, .. } => delta.validate(),
            Command::Flick { velocity, .. } if !velocity.iter().all(|v| v.is_finite()) => {
                Err(ModelError::NonFinite("velocity"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    Version,
    NotJoined,
    UnknownDevice,
    UnknownElement,
    Rejected,
}
