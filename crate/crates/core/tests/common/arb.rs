//! Proptest strategies for protocol and geometry values.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use holosync::engine::{EventDetail, EventKind, InteractionEvent, Layout, LinkTarget, Participant, SortKey};
use holosync::model::{
    AttrValue, ContentElement, DeviceId, DeviceKind, DeviceRecord, GroupId, Owner, Pose, Presence, Quat, ScreenExtents,
    SnapshotId, Vec3,
};
use holosync::pointcloud::PackedPoint;
use holosync::protocol::{
    Command, DeviceDescriptor, Envelope, ErrorCode, HandFrame, Joint, Payload, StreamFrameHeader, StreamKind,
    StreamPayload, STREAM_MAGIC,
};
use holosync::server::SessionState;

pub fn finite(r: f64) -> impl Strategy<Value = f64> {
    -r..r
}

pub fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (finite(r), finite(r), finite(r)).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn quat() -> impl Strategy<Value = Quat> {
    (vec3(1.0).prop_filter("axis", |a| a.norm() > 1e-3), -std::f64::consts::PI..std::f64::consts::PI)
        .prop_map(|(axis, angle)| Quat::from_axis_angle(axis, angle))
}

pub fn scale() -> impl Strategy<Value = Vec3> {
    (0.2..3.0, 0.2..3.0, 0.2..3.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn pose() -> impl Strategy<Value = Pose> {
    (vec3(5.0), quat(), scale()).prop_map(|(p, r, s)| Pose::new(p, r, s))
}

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _@.\\-\"\\\\é]{0,12}"
}

pub fn any_f64() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

pub fn any_vec3() -> impl Strategy<Value = Vec3> {
    (any_f64(), any_f64(), any_f64()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn attr_value() -> impl Strategy<Value = AttrValue> {
    prop_oneof![
        any_f64().prop_map(AttrValue::Number),
        text().prop_map(AttrValue::Text),
        any::<bool>().prop_map(AttrValue::Bool),
        (any_f64(), any_f64()).prop_map(|(a, b)| AttrValue::Vec2([a, b])),
        any_vec3().prop_map(AttrValue::Vec3),
        any::<[u8; 3]>().prop_map(AttrValue::Color),
        text().prop_map(AttrValue::Mesh),
    ]
}

pub fn attributes() -> impl Strategy<Value = BTreeMap<String, AttrValue>> {
    prop::collection::btree_map("[a-z_]{1,8}", attr_value(), 0..5)
}

pub fn device_id() -> impl Strategy<Value = DeviceId> {
    (0u32..20).prop_map(DeviceId)
}

pub fn descriptor() -> impl Strategy<Value = DeviceDescriptor> {
    (
        prop_oneof![Just(DeviceKind::Phone), Just(DeviceKind::Tablet), Just(DeviceKind::Hmd)],
        0.01..2.0f64,
        0.01..2.0f64,
        prop_oneof![Just(Presence::LocalPhysical), Just(Presence::RemoteHolographic)],
        pose(),
    )
        .prop_map(|(k, w, h, p, pose)| DeviceDescriptor::new(k, ScreenExtents::new(w, h), p).with_pose(pose))
}

pub fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        device_id().prop_map(|target| Command::SnapAttach { target }),
        Just(Command::SnapRelease),
        Just(Command::PossessRelease),
        (
            prop_oneof![Just(SortKey::JoinOrder), "[a-z]{1,6}".prop_map(|name| SortKey::Attribute { name })],
            prop_oneof![Just(Layout::Line), Just(Layout::Grid), Just(Layout::Stack)],
            prop::collection::vec(device_id(), 0..4),
            prop::option::of(pose()),
        )
            .prop_map(|(criterion, layout, devices, origin)| Command::Align { criterion, layout, devices, origin }),
        prop::collection::vec(device_id(), 0..5).prop_map(|devices| Command::GroupCreate { devices }),
        (any::<u32>(), pose()).prop_map(|(g, delta)| Command::GroupMove { group_id: GroupId(g), delta }),
        device_id().prop_map(|target| Command::Pour { target }),
        device_id().prop_map(|device| Command::RecordSnapshot { device }),
        any::<u32>().prop_map(|s| Command::Revert { snapshot_id: SnapshotId(s) }),
        (text(), prop_oneof![device_id().prop_map(LinkTarget::Device), text().prop_map(|t| LinkTarget::Element(t.as_str().into()))])
            .prop_map(|(s, target)| Command::LinkCreate { source: s.as_str().into(), target }),
        (text(), any_f64(), any_f64()).prop_map(|(e, x, y)| Command::Flick { element: e.as_str().into(), velocity: [x, y] }),
    ]
}

pub fn event() -> impl Strategy<Value = InteractionEvent> {
    (
        prop_oneof![Just(EventKind::PossessionGranted), Just(EventKind::SnapAttached), Just(EventKind::Flick)],
        prop::collection::vec(device_id().prop_map(Participant::Device), 0..3),
        prop_oneof![
            Just(EventDetail::None),
            pose().prop_map(|relative| EventDetail::Snap { relative }),
            any_vec3().prop_map(|placed_at| EventDetail::Flick { placed_at }),
        ],
        0.0..1e6f64,
    )
        .prop_map(|(kind, participants, detail, t)| InteractionEvent::new(kind, participants, detail, t))
}

/// A small but structurally complete state: numeric-keyed maps inside a tagged payload.
pub fn state() -> impl Strategy<Value = SessionState> {
    (
        "[a-z0-9_-]{1,10}",
        prop::collection::vec(descriptor(), 0..4),
        prop::collection::btree_map("[a-z]{1,4}", attributes(), 0..3),
        any::<bool>(),
    )
        .prop_map(|(id, devices, elements, grouped)| {
            let mut s = SessionState::new(id);
            for (i, d) in devices.into_iter().enumerate() {
                let id = DeviceId(i as u32 + 1);
                let mut r = DeviceRecord::new(id, d.kind, d.extents, d.presence).with_pose(d.pose);
                r.joined_seq = i as u64 + 1;
                s.devices.insert(id, r);
            }
            let mut seq = s.devices.len() as u64;
            for (name, attrs) in elements {
                let mut e = ContentElement::new(name.as_str().into(), Owner::Shared);
                for (k, v) in attrs {
                    seq += 1;
                    e.write(&k, v, seq);
                }
                s.elements.insert(e.element_id.clone(), e);
            }
            if grouped && s.devices.len() > 1 {
                s.groups.insert(GroupId(1), s.devices.keys().copied().collect::<BTreeSet<_>>());
            }
            s.seq = seq;
            s
        })
}

pub fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        descriptor().prop_map(|descriptor| Payload::Join { descriptor }),
        (device_id(), state()).prop_map(|(device_id, s)| Payload::Welcome { device_id, state: Box::new(s) }),
        (device_id(), pose()).prop_map(|(device_id, pose)| Payload::PoseUpdate { device_id, pose }),
        (text(), prop::option::of(prop_oneof![Just(Owner::Shared), device_id().prop_map(Owner::Device)]), attributes())
            .prop_map(|(id, owner, attributes)| Payload::ContentUpsert { element_id: id.as_str().into(), owner, attributes }),
        text().prop_map(|id| Payload::ContentRemove { element_id: id.as_str().into() }),
        command().prop_map(|command| Payload::Command { command }),
        event().prop_map(|event| Payload::InteractionEvent { event }),
        (prop_oneof![Just(StreamKind::Pointcloud), Just(StreamKind::Hand)], any::<u32>(), any::<u32>())
            .prop_map(|(kind, frame_id, count)| Payload::StreamFrameHeader { kind, frame_id, count }),
        (prop_oneof![Just(ErrorCode::Malformed), Just(ErrorCode::UnknownDevice), Just(ErrorCode::Rejected)], text())
            .prop_map(|(code, message)| Payload::Error { code, message }),
    ]
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (any::<u64>(), device_id(), any::<u64>(), payload()).prop_map(|(seq, s, t, p)| Envelope::stamped(seq, s, t, p))
}

pub fn packed_point() -> impl Strategy<Value = PackedPoint> {
    any::<(i16, i16, i16, u8, u8, u8)>().prop_map(|(x, y, z, r, g, b)| PackedPoint { x, y, z, r, g, b })
}

pub fn stream_frame() -> impl Strategy<Value = (StreamFrameHeader, StreamPayload)> {
    let points = prop::collection::vec(packed_point(), 0..64).prop_map(StreamPayload::Points);
    let hand = (
        device_id(),
        prop::collection::vec((1u16..40, any_vec3()), 0..25),
        any_vec3(),
        any::<u64>(),
        any_vec3(),
    )
        .prop_map(|(device_id, rest, root_scale, timestamp_ms, root)| {
            let mut joints = vec![Joint { id: 0, position: root }];
            joints.extend(rest.into_iter().map(|(id, position)| Joint { id, position }));
            StreamPayload::Hand(HandFrame { device_id, joints, root_scale, timestamp_ms })
        });
    (prop_oneof![points, hand], any::<u32>()).prop_map(|(payload, frame_id)| {
        let header = StreamFrameHeader { kind: payload.kind(), frame_id, count: payload.count() as u32 };
        (header, payload)
    })
}

pub fn noise() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..200),
        // valid-looking prefixes reach deeper into the decoders
        prop::collection::vec(any::<u8>(), 0..200).prop_map(|mut v| {
            let mut out = STREAM_MAGIC.to_vec();
            out.push(1);
            out.append(&mut v);
            out
        }),
        "\\{\"protocol_version\":1,\"seq\":[0-9]{1,3},\"payload\":\\{\"type\":\"[a-z_]{3,20}\".{0,40}"
            .prop_map(String::into_bytes),
    ]
}
