//! Pure geometric operations used by the engine and by clients.

use serde::{Deserialize, Serialize};

use crate::model::{
    angle_between, attr, screen_plane, AttrValue, DeviceId, DeviceRecord, ElementId, Owner, Pose, Vec3,
};
use crate::protocol::{HandFrame, ROOT_JOINT};
use crate::server::SessionState;

use super::{EngineError, Layout, Link, LinkTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub pitch_factor: f64,
    pub stack_pitch: f64,
    /// Default layout origin relative to the commanding device.
    pub origin_offset: Vec3,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { pitch_factor: 1.2, stack_pitch: 0.05, origin_offset: Vec3::new(0.0, 0.3, 0.0) }
    }
}

/// Target poses for `devices`, which must already be in sort order.
/// Physical devices are skipped and do not take a slot.
pub fn align_devices(devices: &[&DeviceRecord], layout: Layout, origin: &Pose, cfg: &AlignConfig) -> Vec<(DeviceId, Pose)> {
    let movable: Vec<&DeviceRecord> = devices.iter().copied().filter(|d| d.is_holographic()).collect();
    let n = movable.len();
    if n == 0 {
        return Vec::new();
    }
    let max_w = movable.iter().map(|d| d.scaled_extents().0).fold(0.0, f64::max);
    let max_h = movable.iter().map(|d| d.scaled_extents().1).fold(0.0, f64::max);
    let cols = (n as f64).sqrt().ceil() as usize;
    movable
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let local = match layout {
                Layout::Line => Vec3::new(i as f64 * cfg.pitch_factor * max_w, 0.0, 0.0),
                Layout::Grid => Vec3::new(
                    (i % cols) as f64 * cfg.pitch_factor * max_w,
                    -((i / cols) as f64) * cfg.pitch_factor * max_h,
                    0.0,
                ),
                Layout::Stack => Vec3::new(0.0, 0.0, i as f64 * cfg.stack_pitch),
            };
            let pose = Pose::new(origin.transform_point(local), origin.rotation, d.pose.scale);
            (d.device_id, pose)
        })
        .collect()
}

/// Applies `delta` rigidly about the members' centroid; scales multiply.
pub fn group_move(members: &[&DeviceRecord], delta: &Pose) -> Vec<(DeviceId, Pose)> {
    if members.is_empty() {
        return Vec::new();
    }
    let sum = members.iter().fold(Vec3::ZERO, |acc, d| acc + d.pose.position);
    let pivot = sum * (1.0 / members.len() as f64);
    members
        .iter()
        .map(|d| {
            let p = &d.pose;
            let pose = Pose::new(
                pivot + delta.position + delta.rotation.rotate(p.position - pivot),
                (delta.rotation * p.rotation).normalized(),
                delta.scale.hadamard(p.scale),
            );
            (d.device_id, pose)
        })
        .collect()
}

/// Screen-local coordinates of a shared-space point, or `None` when its
/// projection falls outside the screen.
pub fn extended_shared_to_local(device: &DeviceRecord, shared: Vec3) -> Option<[f64; 2]> {
    let plane = screen_plane(device);
    let local = plane.project(shared);
    plane.contains_local(local).then_some(local)
}

pub fn extended_local_to_shared(device: &DeviceRecord, local: [f64; 2]) -> Vec3 {
    screen_plane(device).local_to_shared(local)
}

/// Where an element sits in the shared space, if it has a position.
pub fn element_shared_position(state: &SessionState, element: &ElementId) -> Option<Vec3> {
    let e = state.elements.get(element)?;
    match (e.get(attr::POSITION)?, e.owner) {
        (AttrValue::Vec3(p), _) => Some(*p),
        (AttrValue::Vec2(local), Owner::Device(d)) => {
            state.devices.get(&d).map(|dev| extended_local_to_shared(dev, *local))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkView {
    pub link: Link,
    pub source_local: [f64; 2],
    /// Unit in-screen direction from the source toward the target; zero when
    /// the target has no position or projects onto the source.
    pub target_direction: [f64; 2],
}

pub fn links_for_view(device: &DeviceRecord, state: &SessionState) -> Vec<LinkView> {
    let plane = screen_plane(device);
    state
        .links
        .iter()
        .filter_map(|link| {
            let src = element_shared_position(state, &link.source)?;
            let source_local = extended_shared_to_local(device, src)?;
            let target = match &link.target {
                LinkTarget::Device(d) => state.devices.get(d).map(|t| t.pose.position),
                LinkTarget::Element(e) => element_shared_position(state, e),
            };
            let target_direction = target
                .map(|t| {
                    let [u, v] = plane.project(t);
                    let (du, dv) = (u - source_local[0], v - source_local[1]);
                    let n = (du * du + dv * dv).sqrt();
                    if n > 1e-12 {
                        [du / n, dv / n]
                    } else {
                        [0.0, 0.0]
                    }
                })
                .unwrap_or([0.0, 0.0]);
            Some(LinkView { link: link.clone(), source_local, target_direction })
        })
        .collect()
}

/// Axis-aligned box in its own frame, placed by the rigid part of `pose`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub min: Vec3,
    pub max: Vec3,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePolygon {
    pub center: Vec3,
    pub normal: Vec3,
    /// Counter-clockwise seen from the front of the screen.
    pub vertices: Vec<Vec3>,
}

/// Cross-section of `volume` by the device's screen plane.
pub fn slice_plane(device: &DeviceRecord, volume: &Volume) -> Option<SlicePolygon> {
    let plane = screen_plane(device);
    let (lo, hi) = (volume.min, volume.max);
    let corner = |i: usize| {
        volume.pose.transform_point(Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        ))
    };
    let corners: Vec<Vec3> = (0..8).map(corner).collect();
    let dist: Vec<f64> = corners.iter().map(|c| (*c - plane.center).dot(plane.normal)).collect();
    let eps = 1e-12;
    let mut points = Vec::new();
    for i in 0..8 {
        if dist[i].abs() <= eps {
            points.push(corners[i]);
        }
        for bit in [1, 2, 4] {
            let j = i | bit;
            if j == i {
                continue;
            }
            let (da, db) = (dist[i], dist[j]);
            if (da < -eps && db > eps) || (da > eps && db < -eps) {
                points.push(corners[i].lerp(corners[j], da / (da - db)));
            }
        }
    }
    let mut unique: Vec<Vec3> = Vec::new();
    for p in points {
        if unique.iter().all(|q| q.distance(p) > 1e-9) {
            unique.push(p);
        }
    }
    if unique.len() < 3 {
        return None;
    }
    let centroid = unique.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / unique.len() as f64);
    unique.sort_by(|a, b| {
        let ang = |p: &Vec3| {
            let d = *p - centroid;
            d.dot(plane.up).atan2(d.dot(plane.right))
        };
        ang(a).total_cmp(&ang(b))
    });
    Some(SlicePolygon { center: plane.center, normal: plane.normal, vertices: unique })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickConfig {
    pub min_speed: f64,
    pub throw_distance: f64,
}

impl Default for FlickConfig {
    fn default() -> Self {
        Self { min_speed: 0.5, throw_distance: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlickOutcome {
    Stays,
    Released { shared: Vec3 },
}

/// Where a flicked element lands: past the screen edge it would exit
/// through, along the flick direction.
pub fn flick_release(local: [f64; 2], velocity: [f64; 2], device: &DeviceRecord, cfg: &FlickConfig) -> FlickOutcome {
    let speed = (velocity[0] * velocity[0] + velocity[1] * velocity[1]).sqrt();
    if speed.is_nan() || speed < cfg.min_speed || speed == 0.0 {
        return FlickOutcome::Stays;
    }
    let dir = [velocity[0] / speed, velocity[1] / speed];
    let (w, h) = device.scaled_extents();
    let half = [w / 2.0, h / 2.0];
    let start = [local[0].clamp(-half[0], half[0]), local[1].clamp(-half[1], half[1])];
    let t_exit = (0..2)
        .filter(|&k| dir[k].abs() > 1e-15)
        .map(|k| (half[k] * dir[k].signum() - start[k]) / dir[k])
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let t = t_exit + cfg.throw_distance;
    let target = [start[0] + dir[0] * t, start[1] + dir[1] * t];
    FlickOutcome::Released { shared: extended_local_to_shared(device, target) }
}

/// World position of a tracked hand: root joint scaled per axis.
pub fn hand_world_position(frame: &HandFrame) -> Result<Vec3, EngineError> {
    frame
        .joints
        .iter()
        .find(|j| j.id == ROOT_JOINT)
        .map(|j| j.position.hadamard(frame.root_scale))
        .ok_or(EngineError::MissingRoot)
}

/// Angle in radians between a device's screen-up and world up.
pub fn tilt(pose: &Pose) -> f64 {
    angle_between(pose.rotation.rotate(Vec3::Y), Vec3::Y)
}

/// Linear interpolation of position and scale with slerped rotation.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    Pose::new(a.position.lerp(b.position, t), a.rotation.slerp(b.rotation, t), a.scale.lerp(b.scale, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceKind, Presence, Quat, ScreenExtents};
    use crate::protocol::Joint;
    use std::f64::consts::FRAC_PI_2;

    fn holo(id: u32, pose: Pose) -> DeviceRecord {
        DeviceRecord::new(DeviceId(id), DeviceKind::Tablet, ScreenExtents::new(0.2, 0.15), Presence::RemoteHolographic)
            .with_pose(pose)
    }

    #[test]
    fn single_device_lands_on_origin() {
        let d = holo(1, Pose::translation(3.0, 1.0, 2.0));
        let origin = Pose::translation(0.5, 1.0, 0.0);
        let out = align_devices(&[&d], Layout::Grid, &origin, &AlignConfig::default());
        assert_eq!(out, vec![(DeviceId(1), origin)]);
    }

    #[test]
    fn grid_of_fifteen_is_four_by_four() {
        let ds: Vec<DeviceRecord> = (1..=15).map(|i| holo(i, Pose::IDENTITY)).collect();
        let refs: Vec<&DeviceRecord> = ds.iter().collect();
        let out = align_devices(&refs, Layout::Grid, &Pose::IDENTITY, &AlignConfig::default());
        let mut xs: Vec<i64> = out.iter().map(|(_, p)| (p.position.x * 1e6).round() as i64).collect();
        let mut ys: Vec<i64> = out.iter().map(|(_, p)| (p.position.y * 1e6).round() as i64).collect();
        xs.sort();
        xs.dedup();
        ys.sort();
        ys.dedup();
        assert_eq!((xs.len(), ys.len()), (4, 4));
        let last_row = out.iter().filter(|(_, p)| (p.position.y - ys[0] as f64 / 1e6).abs() < 1e-9).count();
        assert_eq!(last_row, 3);
        for (i, (_, a)) in out.iter().enumerate() {
            for (_, b) in &out[i + 1..] {
                let dx = (a.position.x - b.position.x).abs();
                let dy = (a.position.y - b.position.y).abs();
                assert!(dx >= 0.2 - 1e-9 || dy >= 0.15 - 1e-9, "overlap");
            }
        }
    }

    #[test]
    fn physical_devices_are_not_moved() {
        let mut p = holo(1, Pose::IDENTITY);
        p.presence = Presence::LocalPhysical;
        let h = holo(2, Pose::IDENTITY);
        let out = align_devices(&[&p, &h], Layout::Line, &Pose::IDENTITY, &AlignConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, DeviceId(2));
    }

    #[test]
    fn group_translation_and_rotation() {
        let ds = [
            holo(1, Pose::translation(0.0, 0.0, 0.0)),
            holo(2, Pose::translation(1.0, 0.0, 0.0)),
            holo(3, Pose::translation(0.0, 2.0, 1.0)),
        ];
        let refs: Vec<&DeviceRecord> = ds.iter().collect();
        let moved = group_move(&refs, &Pose::translation(1.0, 0.0, 0.0));
        for ((_, p), d) in moved.iter().zip(&ds) {
            assert_eq!(p.position, d.pose.position + Vec3::X);
        }
        let rot = Pose::IDENTITY.with_rotation(Quat::yaw(FRAC_PI_2));
        let moved = group_move(&refs, &rot);
        for i in 0..3 {
            for j in 0..3 {
                let before = ds[i].pose.position.distance(ds[j].pose.position);
                let after = moved[i].1.position.distance(moved[j].1.position);
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn extended_mapping() {
        let d = holo(1, Pose::IDENTITY);
        assert_eq!(extended_shared_to_local(&d, Vec3::ZERO), Some([0.0, 0.0]));
        assert_eq!(extended_shared_to_local(&d, Vec3::new(0.5, 0.0, 0.0)), None);
    }

    #[test]
    fn flick_thresholds_and_direction() {
        let d = holo(1, Pose::IDENTITY);
        let cfg = FlickConfig::default();
        assert_eq!(flick_release([0.0, 0.0], [0.0, 0.0], &d, &cfg), FlickOutcome::Stays);
        assert!(matches!(flick_release([0.0, 0.0], [0.5, 0.0], &d, &cfg), FlickOutcome::Released { .. }));
        match flick_release([0.0, 0.0], [1.0, 0.0], &d, &cfg) {
            FlickOutcome::Released { shared } => {
                assert!((shared.x - 0.4).abs() < 1e-12 && shared.y.abs() < 1e-12);
            }
            FlickOutcome::Stays => panic!("should release"),
        }
    }

    #[test]
    fn hand_root_scaling() {
        let frame = |joints: Vec<Joint>, s: f64| HandFrame {
            device_id: DeviceId(1),
            timestamp_ms: 0,
            root_scale: Vec3::new(s, s, s),
            joints,
        };
        let root = Joint { id: ROOT_JOINT, position: Vec3::new(1.0, 2.0, 3.0) };
        assert_eq!(hand_world_position(&frame(vec![root], 1.0)).unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(hand_world_position(&frame(vec![root], 2.0)).unwrap(), Vec3::new(2.0, 4.0, 6.0));
        assert!(hand_world_position(&frame(vec![], 1.0)).is_err());
    }

    // Clip a large square in the screen plane by the six faces of the box.
    fn clip_oracle(device: &DeviceRecord, v: &Volume) -> Vec<Vec3> {
        let plane = screen_plane(device);
        let big = 100.0;
        let mut poly: Vec<Vec3> = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
            .iter()
            .map(|c| plane.local_to_shared([c[0] * big, c[1] * big]))
            .collect();
        let axes = [Vec3::X, Vec3::Y, Vec3::Z];
        for (k, axis) in axes.iter().enumerate() {
            let n = v.pose.rotation.rotate(*axis);
            let lo = [v.min.x, v.min.y, v.min.z][k];
            let hi = [v.max.x, v.max.y, v.max.z][k];
            let origin = v.pose.position;
            // Keep points with lo <= (p - origin)·n <= hi.
            for (sign, bound) in [(1.0, hi), (-1.0, -lo)] {
                let f = |p: Vec3| sign * (p - origin).dot(n) - bound;
                let mut out = Vec::new();
                for i in 0..poly.len() {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    let (fa, fb) = (f(a), f(b));
                    if fa <= 0.0 {
                        out.push(a);
                    }
                    if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
                        out.push(a.lerp(b, fa / (fa - fb)));
                    }
                }
                poly = out;
            }
        }
        poly
    }

    fn same_vertex_set(a: &[Vec3], b: &[Vec3]) -> bool {
        let mut b_unique: Vec<Vec3> = Vec::new();
        for p in b {
            if b_unique.iter().all(|q| q.distance(*p) > 1e-9) {
                b_unique.push(*p);
            }
        }
        a.len() == b_unique.len() && a.iter().all(|p| b_unique.iter().any(|q| q.distance(*p) < 1e-9))
    }

    #[test]
    fn slice_unit_cube() {
        let cube = Volume { min: Vec3::new(-0.5, -0.5, -0.5), max: Vec3::new(0.5, 0.5, 0.5), pose: Pose::IDENTITY };
        let d = holo(1, Pose::IDENTITY);
        let s = slice_plane(&d, &cube).unwrap();
        assert_eq!(s.vertices.len(), 4);
        assert!(s.vertices.iter().all(|v| (v.x.abs() - 0.5).abs() < 1e-12 && (v.y.abs() - 0.5).abs() < 1e-12));
        let far = holo(2, Pose::translation(0.0, 0.0, 2.0));
        assert!(slice_plane(&far, &cube).is_none());
    }

    #[test]
    fn tilted_slice_matches_clipping() {
        let cube = Volume { min: Vec3::new(-0.5, -0.5, -0.5), max: Vec3::new(0.5, 0.5, 0.5), pose: Pose::IDENTITY };
        // Normal along (1,1,1): a regular hexagon through the center.
        let n = Vec3::new(1.0, 1.0, 1.0).normalized();
        let axis = Vec3::Z.cross(n).normalized();
        let rot = Quat::from_axis_angle(axis, angle_between(Vec3::Z, n));
        let d = holo(1, Pose::IDENTITY.with_rotation(rot));
        let s = slice_plane(&d, &cube).unwrap();
        assert_eq!(s.vertices.len(), 6);
        assert!(same_vertex_set(&s.vertices, &clip_oracle(&d, &cube)));

        // 45 degree tilt about x, off-center.
        let d = holo(2, Pose::translation(0.1, 0.2, 0.1).with_rotation(Quat::from_axis_angle(Vec3::X, std::f64::consts::FRAC_PI_4)));
        let s = slice_plane(&d, &cube).unwrap();
        assert!(same_vertex_set(&s.vertices, &clip_oracle(&d, &cube)));
    }

    #[test]
    fn tilt_of_rolled_device() {
        let p = Pose::IDENTITY.with_rotation(Quat::roll(150f64.to_radians()));
        assert!((tilt(&p).to_degrees() - 150.0).abs() < 1e-9);
        assert!(tilt(&Pose::IDENTITY) < 1e-12);
    }
}
