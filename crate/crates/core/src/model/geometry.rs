use serde::{Deserialize, Serialize};

use super::math::{angle_between, Vec3};
use super::DeviceRecord;

/// A device screen as an oriented rectangle in the shared space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPlane {
    pub center: Vec3,
    pub normal: Vec3,
    /// Unit vector along the screen's local +x.
    pub right: Vec3,
    /// Unit vector along the screen's local +y.
    pub up: Vec3,
    pub half_width: f64,
    pub half_height: f64,
    /// Counter-clockwise seen from the front, starting bottom-left.
    pub corners: [Vec3; 4],
}

pub fn screen_plane(device: &DeviceRecord) -> ScreenPlane {
    let pose = &device.pose;
    let right = pose.rotation.rotate(Vec3::X);
    let up = pose.rotation.rotate(Vec3::Y);
    let normal = pose.rotation.rotate(Vec3::Z).normalized();
    let (w, h) = device.scaled_extents();
    let (hw, hh) = (w * 0.5, h * 0.5);
    let c = pose.position;
    let corners = [
        c - right * hw - up * hh,
        c + right * hw - up * hh,
        c + right * hw + up * hh,
        c - right * hw + up * hh,
    ];
    ScreenPlane { center: c, normal, right, up, half_width: hw, half_height: hh, corners }
}

impl ScreenPlane {
    /// In-plane coordinates of the orthogonal projection of `p`.
    pub fn project(&self, p: Vec3) -> [f64; 2] {
        let d = p - self.center;
        [d.dot(self.right), d.dot(self.up)]
    }

    pub fn contains_local(&self, local: [f64; 2]) -> bool {
        local[0].abs() <= self.half_width && local[1].abs() <= self.half_height
    }

    pub fn local_to_shared(&self, local: [f64; 2]) -> Vec3 {
        self.center + self.right * local[0] + self.up * local[1]
    }

    fn edges(&self) -> [(Vec3, Vec3); 4] {
        let c = &self.corners;
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    /// Distance from a point to the filled rectangle.
    pub fn point_distance(&self, p: Vec3) -> f64 {
        let [u, v] = self.project(p);
        let cu = u.clamp(-self.half_width, self.half_width);
        let cv = v.clamp(-self.half_height, self.half_height);
        p.distance(self.local_to_shared([cu, cv]))
    }

    /// Whether the segment passes through the filled rectangle.
    fn segment_crosses(&self, a: Vec3, b: Vec3) -> bool {
        let da = (a - self.center).dot(self.normal);
        let db = (b - self.center).dot(self.normal);
        if da * db > 0.0 || da == db {
            return false;
        }
        let t = da / (da - db);
        let hit = a.lerp(b, t);
        let [u, v] = self.project(hit);
        u.abs() <= self.half_width + 1e-12 && v.abs() <= self.half_height + 1e-12
    }
}

/// Closest distance between segments `p1-q1` and `p2-q2`.
fn segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return p1.distance(p2);
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s).distance(p2 + d2 * t)
}

/// Minimal distance between two screen rectangles (0 when they touch or cross).
pub fn rect_gap(a: &ScreenPlane, b: &ScreenPlane) -> f64 {
    for (p, q) in a.edges() {
        if b.segment_crosses(p, q) {
            return 0.0;
        }
    }
    for (p, q) in b.edges() {
        if a.segment_crosses(p, q) {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for (p1, q1) in a.edges() {
        for (p2, q2) in b.edges() {
            best = best.min(segment_distance(p1, q1, p2, q2));
        }
    }
    for c in a.corners {
        best = best.min(b.point_distance(c));
    }
    for c in b.corners {
        best = best.min(a.point_distance(c));
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    Separated,
    SideBySide,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrangementConfig {
    pub overlap_distance: f64,
    pub overlap_angle_deg: f64,
    pub side_gap: f64,
    pub side_angle_deg: f64,
}

impl Default for ArrangementConfig {
    fn default() -> Self {
        Self { overlap_distance: 0.05, overlap_angle_deg: 15.0, side_gap: 0.10, side_angle_deg: 20.0 }
    }
}

pub fn classify_arrangement(a: &DeviceRecord, b: &DeviceRecord, cfg: &ArrangementConfig) -> Arrangement {
    let pa = screen_plane(a);
    let pb = screen_plane(b);
    let center_distance = pa.center.distance(pb.center);
    let angle = angle_between(pa.normal, pb.normal).to_degrees();
    if center_distance < cfg.overlap_distance && angle < cfg.overlap_angle_deg {
        return Arrangement::Overlap;
    }
    if angle < cfg.side_angle_deg && rect_gap(&pa, &pb) < cfg.side_gap {
        return Arrangement::SideBySide;
    }
    Arrangement::Separated
}
