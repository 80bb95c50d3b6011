//! Domain primitives shared across the crate: ids, poses, devices, content
//! elements and arrangement geometry.

mod geometry;
mod math;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{
    classify_arrangement, rect_gap, screen_plane, Arrangement, ArrangementConfig, ScreenPlane,
};
pub use math::{angle_between, compose_pose, relative_pose, Pose, Quat, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rotation is not a unit quaternion (norm {0})")]
    NotUnitQuaternion(f64),
    #[error("scale components must be strictly positive")]
    NonPositiveScale,
    #[error("screen extents must be strictly positive")]
    NonPositiveExtents,
}

/// Server-assigned device identifier. `0` is reserved for the server itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        deserialize_u32_id(d).map(DeviceId)
    }
}

// Map keys arrive as strings, and buffered (tagged) payloads don't coerce them.
fn deserialize_u32_id<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    struct V;
    impl serde::de::Visitor<'_> for V {
        type Value = u32;
        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a non-negative 32-bit id")
        }
        fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<u32, E> {
            u32::try_from(v).map_err(|_| E::custom("id out of range"))
        }
        fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<u32, E> {
            u32::try_from(v).map_err(|_| E::custom("id out of range"))
        }
        fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<u32, E> {
            v.parse().map_err(|_| E::custom(format!("bad id {v:?}")))
        }
    }
    d.deserialize_any(V)
}

impl DeviceId {
    pub const SERVER: DeviceId = DeviceId(0);
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Self {
        ElementId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_owned())
    }
}

macro_rules! numeric_id {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                deserialize_u32_id(d).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

numeric_id!(GroupId);
numeric_id!(LinkId);
numeric_id!(SnapshotId);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenExtents {
    pub width: f64,
    pub height: f64,
}

impl ScreenExtents {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.width.is_finite() || !self.height.is_finite() {
            return Err(ModelError::NonFinite("extents"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(ModelError::NonPositiveExtents);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Phone,
    Tablet,
    Desktop,
    Hmd,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    LocalPhysical,
    RemoteHolographic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub kind: DeviceKind,
    pub extents: ScreenExtents,
    pub pose: Pose,
    pub presence: Presence,
    /// Seq of the last write that touched this device.
    pub last_seq: u64,
    /// Seq at which the device joined; a stable join-order key.
    pub joined_seq: u64,
    /// Local device currently possessing this hologram, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub possessed_by: Option<DeviceId>,
}

impl DeviceRecord {
    pub fn new(device_id: DeviceId, kind: DeviceKind, extents: ScreenExtents, presence: Presence) -> Self {
        Self {
            device_id,
            kind,
            extents,
            pose: Pose::IDENTITY,
            presence,
            last_seq: 0,
            joined_seq: 0,
            possessed_by: None,
        }
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn is_holographic(&self) -> bool {
        self.presence == Presence::RemoteHolographic
    }

    pub fn is_physical(&self) -> bool {
        self.presence == Presence::LocalPhysical
    }

    /// Screen width and height after applying the pose scale.
    pub fn scaled_extents(&self) -> (f64, f64) {
        (self.extents.width * self.pose.scale.x, self.extents.height * self.pose.scale.y)
    }
}

/// Who an element belongs to: a device's screen or the shared space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Device(DeviceId),
    Shared,
}

/// A synchronized attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrValue {
    Number(f64),
    Text(String),
    Bool(bool),
    /// Screen-local coordinates in meters, origin at the screen center.
    Vec2([f64; 2]),
    /// Shared-space coordinates in meters.
    Vec3(Vec3),
    Color([u8; 3]),
    /// Opaque reference to a mesh asset.
    Mesh(String),
}

impl AttrValue {
    pub fn is_finite(&self) -> bool {
        match self {
            AttrValue::Number(v) => v.is_finite(),
            AttrValue::Vec2(v) => v.iter().all(|c| c.is_finite()),
            AttrValue::Vec3(v) => v.is_finite(),
            _ => true,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            AttrValue::Number(_) => 0,
            AttrValue::Text(_) => 1,
            AttrValue::Bool(_) => 2,
            AttrValue::Vec2(_) => 3,
            AttrValue::Vec3(_) => 4,
            AttrValue::Color(_) => 5,
            AttrValue::Mesh(_) => 6,
        }
    }

    /// A total order over values: by variant, then numerically or
    /// lexicographically within a variant.
    pub fn total_cmp(&self, other: &AttrValue) -> std::cmp::Ordering {
        use AttrValue::*;
        match (self, other) {
            (Number(a), Number(b)) => a.total_cmp(b),
            (Text(a), Text(b)) | (Mesh(a), Mesh(b)) => a.cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            (Vec2(a), Vec2(b)) => a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])),
            (Vec3(a), Vec3(b)) => a
                .x
                .total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z)),
            (Color(a), Color(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub value: AttrValue,
    /// Seq of the write that produced `value`.
    pub seq: u64,
}

/// Attribute names with defined meaning across the crate.
pub mod attr {
    pub const POSITION: &str = "position";
    pub const COLOR: &str = "color";
    pub const SCALE: &str = "scale";
    pub const ORIENTATION: &str = "orientation";
    pub const PAYLOAD: &str = "payload";
    /// Marks an element as the content a bump or pour transfers.
    pub const DESIGNATED: &str = "designated";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentElement {
    pub element_id: ElementId,
    pub owner: Owner,
    pub owner_seq: u64,
    pub attributes: BTreeMap<String, Attribute>,
}

impl ContentElement {
    pub fn new(element_id: ElementId, owner: Owner) -> Self {
        Self { element_id, owner, owner_seq: 0, attributes: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attributes.get(name).map(|a| &a.value)
    }

    /// Last-writer-wins update of one attribute. Returns whether it applied.
    pub fn write(&mut self, name: &str, value: AttrValue, seq: u64) -> bool {
        match self.attributes.get_mut(name) {
            Some(existing) if existing.seq >= seq => false,
            Some(existing) => {
                existing.value = value;
                existing.seq = seq;
                true
            }
            None => {
                self.attributes.insert(name.to_owned(), Attribute { value, seq });
                true
            }
        }
    }

    /// Last-writer-wins ownership change.
    pub fn set_owner(&mut self, owner: Owner, seq: u64) -> bool {
        if seq > self.owner_seq {
            self.owner = owner;
            self.owner_seq = seq;
            true
        } else {
            false
        }
    }

    /// Plain attribute values without write bookkeeping.
    pub fn values(&self) -> BTreeMap<String, AttrValue> {
        self.attributes.iter().map(|(k, a)| (k.clone(), a.value.clone())).collect()
    }

    pub fn is_designated(&self) -> bool {
        matches!(self.get(attr::DESIGNATED), Some(AttrValue::Bool(true)))
    }
}
