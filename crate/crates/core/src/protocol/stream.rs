//! Binary stream frames.
//!
//! ```text
//! "HDPC" | version u8 | kind u8 | frame_id u32 LE | count u32 LE | payload
//! ```
//!
//! Point cloud payloads are `count` packed 9-byte points. Hand payloads are a
//! 36-byte prefix (device id u32, timestamp u64, root scale 3×f64) followed by
//! `count` joints of 26 bytes (id u16, position 3×f64).

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::model::{DeviceId, Vec3};
use crate::pointcloud::{PackedPoint, PACKED_POINT_BYTES};

pub const STREAM_MAGIC: &[u8; 4] = b"HDPC";
pub const STREAM_VERSION: u8 = 1;
pub const STREAM_HEADER_BYTES: usize = 14;
pub const HAND_PREFIX_BYTES: usize = 36;
pub const HAND_JOINT_BYTES: usize = 26;
/// Joint id of the hand's root bone.
pub const ROOT_JOINT: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Pointcloud,
    Hand,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Pointcloud => "pointcloud",
            StreamKind::Hand => "hand",
        }
    }

    fn code(self) -> u8 {
        match self {
            StreamKind::Pointcloud => 0,
            StreamKind::Hand => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            0 => Ok(StreamKind::Pointcloud),
            1 => Ok(StreamKind::Hand),
            other => Err(CodecError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamFrameHeader {
    pub kind: StreamKind,
    pub frame_id: u32,
    /// Points or joints in the payload.
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub id: u16,
    pub position: Vec3,
}

/// One frame of a tracked hand skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub device_id: DeviceId,
    pub joints: Vec<Joint>,
    pub root_scale: Vec3,
    pub timestamp_ms: u64,
}

impl HandFrame {
    pub fn root(&self) -> Option<&Joint> {
        self.joints.iter().find(|j| j.id == ROOT_JOINT)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamPayload {
    Points(Vec<PackedPoint>),
    Hand(HandFrame),
}

impl StreamPayload {
    pub fn kind(&self) -> StreamKind {
        match self {
            StreamPayload::Points(_) => StreamKind::Pointcloud,
            StreamPayload::Hand(_) => StreamKind::Hand,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            StreamPayload::Points(p) => p.len(),
            StreamPayload::Hand(h) => h.joints.len(),
        }
    }
}

pub fn encode_stream_frame(header: &StreamFrameHeader, payload: &StreamPayload) -> Result<Vec<u8>, CodecError> {
    if header.kind != payload.kind() {
        return Err(CodecError::KindMismatch { header: header.kind, payload: payload.kind() });
    }
    if header.count as usize != payload.count() {
        return Err(CodecError::CountMismatch { declared: header.count, actual: payload.count() });
    }
    let body_len = match payload {
        StreamPayload::Points(p) => p.len() * PACKED_POINT_BYTES,
        StreamPayload::Hand(h) => HAND_PREFIX_BYTES + h.joints.len() * HAND_JOINT_BYTES,
    };
    let mut out = Vec::with_capacity(STREAM_HEADER_BYTES + body_len);
    out.extend_from_slice(STREAM_MAGIC);
    out.push(STREAM_VERSION);
    out.push(header.kind.code());
    out.extend_from_slice(&header.frame_id.to_le_bytes());
    out.extend_from_slice(&header.count.to_le_bytes());
    match payload {
        StreamPayload::Points(points) => {
            for p in points {
                out.extend_from_slice(&p.to_bytes());
            }
        }
        StreamPayload::Hand(hand) => {
            if !hand.root_scale.is_finite() || !hand.joints.iter().all(|j| j.position.is_finite()) {
                return Err(CodecError::NonFinite("hand frame"));
            }
            out.extend_from_slice(&hand.device_id.0.to_le_bytes());
            out.extend_from_slice(&hand.timestamp_ms.to_le_bytes());
            put_vec3(&mut out, hand.root_scale);
            for j in &hand.joints {
                out.extend_from_slice(&j.id.to_le_bytes());
                put_vec3(&mut out, j.position);
            }
        }
    }
    Ok(out)
}

/// Reads only the fixed header, leaving the payload undecoded.
pub fn peek_header(bytes: &[u8]) -> Result<StreamFrameHeader, CodecError> {
    if bytes.len() < STREAM_MAGIC.len() || &bytes[..4] != STREAM_MAGIC {
        return Err(if bytes.len() < 4 && STREAM_MAGIC.starts_with(bytes) {
            CodecError::Short { needed: STREAM_HEADER_BYTES, available: bytes.len() }
        } else {
            CodecError::BadMagic
        });
    }
    if bytes.len() < STREAM_HEADER_BYTES {
        return Err(CodecError::Short { needed: STREAM_HEADER_BYTES, available: bytes.len() });
    }
    if bytes[4] != STREAM_VERSION {
        return Err(CodecError::FrameVersion(bytes[4]));
    }
    let kind = StreamKind::from_code(bytes[5])?;
    let frame_id = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    Ok(StreamFrameHeader { kind, frame_id, count })
}

pub fn decode_stream_frame(bytes: &[u8]) -> Result<(StreamFrameHeader, StreamPayload), CodecError> {
    let header = peek_header(bytes)?;
    let body = &bytes[STREAM_HEADER_BYTES..];
    let payload = match header.kind {
        StreamKind::Pointcloud => {
            if !body.len().is_multiple_of(PACKED_POINT_BYTES) || body.len() / PACKED_POINT_BYTES != header.count as usize {
                return Err(CodecError::CountMismatch {
                    declared: header.count,
                    actual: body.len() / PACKED_POINT_BYTES,
                });
            }
            let points = body
                .chunks_exact(PACKED_POINT_BYTES)
                .map(|c| PackedPoint::from_bytes(c.try_into().unwrap()))
                .collect();
            StreamPayload::Points(points)
        }
        StreamKind::Hand => {
            if body.len() < HAND_PREFIX_BYTES {
                return Err(CodecError::Short { needed: STREAM_HEADER_BYTES + HAND_PREFIX_BYTES, available: bytes.len() });
            }
            let joints_bytes = &body[HAND_PREFIX_BYTES..];
            if !joints_bytes.len().is_multiple_of(HAND_JOINT_BYTES)
                || joints_bytes.len() / HAND_JOINT_BYTES != header.count as usize
            {
                return Err(CodecError::CountMismatch {
                    declared: header.count,
                    actual: joints_bytes.len() / HAND_JOINT_BYTES,
                });
            }
            let device_id = DeviceId(u32::from_le_bytes(body[0..4].try_into().unwrap()));
            let timestamp_ms = u64::from_le_bytes(body[4..12].try_into().unwrap());
            let root_scale = get_vec3(&body[12..36]);
            let joints = joints_bytes
                .chunks_exact(HAND_JOINT_BYTES)
                .map(|c| Joint { id: u16::from_le_bytes([c[0], c[1]]), position: get_vec3(&c[2..26]) })
                .collect();
            StreamPayload::Hand(HandFrame { device_id, joints, root_scale, timestamp_ms })
        }
    };
    Ok((header, payload))
}

fn put_vec3(out: &mut Vec<u8>, v: Vec3) {
    for c in v.to_array() {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn get_vec3(b: &[u8]) -> Vec3 {
    let f = |i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
    Vec3::new(f(0), f(1), f(2))
}
