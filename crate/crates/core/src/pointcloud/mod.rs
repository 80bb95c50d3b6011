//! The user-embodiment data path: RGBD frames become colored points, are
//! thinned by stride sampling, quantized to 9-byte points and throttled
//! before they ride the stream relay.

mod recording;
mod synthetic;
mod throttle;

use std::time::Instant;

use thiserror::Error;

use crate::model::Vec3;
use crate::protocol::{encode_stream_frame, StreamFrameHeader, StreamKind, StreamPayload};

pub use recording::{read_recording, recording_size, write_recording, RecordingError, RecordingHeader};
pub use synthetic::{synthetic_frame, SyntheticScene, DEFAULT_HEIGHT, DEFAULT_INTRINSICS, DEFAULT_WIDTH};
pub use throttle::Throttle;

pub const PACKED_POINT_BYTES: usize = 9;
/// Largest representable coordinate magnitude in millimeters.
pub const PACKED_RANGE_MM: i32 = i16::MAX as i32;
pub const DEFAULT_STRIDE: usize = 2;
pub const DEFAULT_TARGET_FPS: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointCloudError {
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("point {index} is outside the packable range of ±32.767 m")]
    OutOfRange { index: usize },
    #[error("packed buffer length {0} is not a multiple of 9")]
    BadLength(usize),
    #[error("frame arrays do not match {width}x{height}")]
    BadFrame { width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major millimeters, 0 = no reading.
    pub depth: Vec<u16>,
    /// Row-major RGB888.
    pub color: Vec<u8>,
    pub intrinsics: Intrinsics,
    pub timestamp_ms: u64,
    pub frame_id: u32,
}

impl DepthFrame {
    pub fn validate(&self) -> Result<(), PointCloudError> {
        let n = self.width as usize * self.height as usize;
        if self.depth.len() != n
            || self.color.len() != 3 * n
            || self.intrinsics.fx <= 0.0
            || self.intrinsics.fy <= 0.0
        {
            return Err(PointCloudError::BadFrame { width: self.width, height: self.height });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vec3,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<ColoredPoint>,
    pub frame_id: u32,
    pub timestamp_ms: u64,
}

/// Pinhole unprojection of every pixel with a depth reading, row-major:
/// `x = (u - cx) * (1/fx) * z`, `y = (v - cy) * (1/fy) * z`.
pub fn depth_to_points(frame: &DepthFrame) -> PointCloud {
    let Intrinsics { fx, fy, cx, cy } = frame.intrinsics;
    let (inv_fx, inv_fy) = (1.0 / fx, 1.0 / fy);
    let width = frame.width as usize;
    let mut points = Vec::with_capacity(frame.depth.len());
    for (v, row) in frame.depth.chunks_exact(width.max(1)).enumerate() {
        let y_scale = (v as f64 - cy) * inv_fy;
        for (u, &d) in row.iter().enumerate() {
            if d == 0 {
                continue;
            }
            let z = f64::from(d) / 1000.0;
            let i = (v * width + u) * 3;
            points.push(ColoredPoint {
                position: Vec3::new((u as f64 - cx) * inv_fx * z, y_scale * z, z),
                rgb: [frame.color[i], frame.color[i + 1], frame.color[i + 2]],
            });
        }
    }
    PointCloud { points, frame_id: frame.frame_id, timestamp_ms: frame.timestamp_ms }
}

/// Keeps every `stride`-th point starting with the first.
pub fn downsample_stride(cloud: &PointCloud, stride: usize) -> Result<PointCloud, PointCloudError> {
    if stride == 0 {
        return Err(PointCloudError::ZeroStride);
    }
    Ok(PointCloud {
        points: cloud.points.iter().step_by(stride).copied().collect(),
        frame_id: cloud.frame_id,
        timestamp_ms: cloud.timestamp_ms,
    })
}

/// A point quantized to signed millimeters plus color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedPoint {
    pub x: i16,
    pub y: i16,
    pub z: i16,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl PackedPoint {
    pub fn to_bytes(self) -> [u8; PACKED_POINT_BYTES] {
        let [x0, x1] = self.x.to_le_bytes();
        let [y0, y1] = self.y.to_le_bytes();
        let [z0, z1] = self.z.to_le_bytes();
        [x0, x1, y0, y1, z0, z1, self.r, self.g, self.b]
    }

    pub fn from_bytes(b: [u8; PACKED_POINT_BYTES]) -> Self {
        PackedPoint {
            x: i16::from_le_bytes([b[0], b[1]]),
            y: i16::from_le_bytes([b[2], b[3]]),
            z: i16::from_le_bytes([b[4], b[5]]),
            r: b[6],
            g: b[7],
            b: b[8],
        }
    }

    pub fn position(self) -> Vec3 {
        Vec3::new(f64::from(self.x) / 1000.0, f64::from(self.y) / 1000.0, f64::from(self.z) / 1000.0)
    }
}

fn quantize_axis(meters: f64) -> Option<i16> {
    let mm = (meters * 1000.0).round();
    if mm.is_finite() && mm.abs() <= f64::from(PACKED_RANGE_MM) {
        Some(mm as i16)
    } else {
        None
    }
}

pub fn quantize(cloud: &PointCloud) -> Result<Vec<PackedPoint>, PointCloudError> {
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let q = |v| quantize_axis(v).ok_or(PointCloudError::OutOfRange { index });
            Ok(PackedPoint {
                x: q(p.position.x)?,
                y: q(p.position.y)?,
                z: q(p.position.z)?,
                r: p.rgb[0],
                g: p.rgb[1],
                b: p.rgb[2],
            })
        })
        .collect()
}

pub fn pack_points(cloud: &PointCloud) -> Result<Vec<u8>, PointCloudError> {
    let packed = quantize(cloud)?;
    let mut out = Vec::with_capacity(packed.len() * PACKED_POINT_BYTES);
    for p in packed {
        out.extend_from_slice(&p.to_bytes());
    }
    Ok(out)
}

pub fn unpack_points(bytes: &[u8]) -> Result<PointCloud, PointCloudError> {
    if !bytes.len().is_multiple_of(PACKED_POINT_BYTES) {
        return Err(PointCloudError::BadLength(bytes.len()));
    }
    let points = bytes
        .chunks_exact(PACKED_POINT_BYTES)
        .map(|c| {
            let p = PackedPoint::from_bytes(c.try_into().unwrap());
            ColoredPoint { position: p.position(), rgb: [p.r, p.g, p.b] }
        })
        .collect();
    Ok(PointCloud { points, frame_id: 0, timestamp_ms: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub input_fps: f64,
    pub output_fps: f64,
    pub dropped: u64,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineMetrics {
    pub input_frames: u64,
    pub output_frames: u64,
    pub dropped: u64,
    pub latencies_ms: Vec<f64>,
    first_input_ms: Option<u64>,
    last_input_ms: u64,
    first_output_ms: Option<u64>,
    last_output_ms: u64,
}

fn rate(frames: u64, first: Option<u64>, last: u64) -> f64 {
    match first {
        Some(first) if last > first && frames > 1 => (frames - 1) as f64 * 1000.0 / (last - first) as f64,
        _ => 0.0,
    }
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) * 0.5
    }
}

impl PipelineMetrics {
    pub fn report(&self) -> MetricsReport {
        let mean = if self.latencies_ms.is_empty() {
            0.0
        } else {
            self.latencies_ms.iter().sum::<f64>() / self.latencies_ms.len() as f64
        };
        MetricsReport {
            input_fps: rate(self.input_frames, self.first_input_ms, self.last_input_ms),
            output_fps: rate(self.output_frames, self.first_output_ms, self.last_output_ms),
            dropped: self.dropped,
            mean_latency_ms: mean,
            median_latency_ms: median(&self.latencies_ms),
        }
    }
}

/// Throttle, then unproject, downsample and pack one frame at a time.
#[derive(Debug, Clone)]
pub struct Pipeline {
    throttle: Throttle,
    stride: usize,
    metrics: PipelineMetrics,
}

impl Pipeline {
    pub fn new(target_fps: f64, stride: usize) -> Result<Self, PointCloudError> {
        if stride == 0 {
            return Err(PointCloudError::ZeroStride);
        }
        Ok(Self { throttle: Throttle::new(target_fps), stride, metrics: PipelineMetrics::default() })
    }

    /// Unproject, downsample and pack without throttling.
    pub fn process(&self, frame: &DepthFrame) -> Result<Vec<u8>, PointCloudError> {
        let cloud = depth_to_points(frame);
        let thinned = downsample_stride(&cloud, self.stride)?;
        let points = quantize(&thinned)?;
        let header = StreamFrameHeader {
            kind: StreamKind::Pointcloud,
            frame_id: frame.frame_id,
            count: points.len() as u32,
        };
        Ok(encode_stream_frame(&header, &StreamPayload::Points(points)).expect("header built from payload"))
    }

    /// Returns an encoded stream frame when the throttle admits `frame`.
    pub fn ingest(&mut self, frame: &DepthFrame) -> Result<Option<Vec<u8>>, PointCloudError> {
        frame.validate()?;
        let m = &mut self.metrics;
        m.input_frames += 1;
        m.first_input_ms.get_or_insert(frame.timestamp_ms);
        m.last_input_ms = frame.timestamp_ms;
        if !self.throttle.admit(frame.timestamp_ms) {
            self.metrics.dropped += 1;
            return Ok(None);
        }
        let started = Instant::now();
        let encoded = self.process(frame)?;
        let m = &mut self.metrics;
        m.latencies_ms.push(started.elapsed().as_secs_f64() * 1000.0);
        m.output_frames += 1;
        m.first_output_ms.get_or_insert(frame.timestamp_ms);
        m.last_output_ms = frame.timestamp_ms;
        Ok(Some(encoded))
    }

    pub fn metrics(&self) -> &PipelineMetrics {
        &self.metrics
    }
}
