//! Recorded depth file: a 24-byte little-endian header
//! (width u32, height u32, fx f32, fy f32, cx f32, cy f32) followed by frame
//! blocks (timestamp u64, depth u16 × w·h, color u8 × 3·w·h).

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{DepthFrame, Intrinsics};

pub const RECORDING_HEADER_BYTES: u64 = 24;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame {index} is {width}x{height}, recording is {expected_width}x{expected_height}")]
    SizeMismatch { index: usize, width: u32, height: u32, expected_width: u32, expected_height: u32 },
    #[error("truncated frame block {index}")]
    Truncated { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingHeader {
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
}

/// Byte size of a recording holding `frames` frames.
pub fn recording_size(width: u32, height: u32, frames: u64) -> u64 {
    let px = u64::from(width) * u64::from(height);
    RECORDING_HEADER_BYTES + frames * (8 + 2 * px + 3 * px)
}

pub fn write_recording<W: Write>(
    out: &mut W,
    header: &RecordingHeader,
    frames: impl IntoIterator<Item = DepthFrame>,
) -> Result<u64, RecordingError> {
    out.write_all(&header.width.to_le_bytes())?;
    out.write_all(&header.height.to_le_bytes())?;
    let i = header.intrinsics;
    for v in [i.fx, i.fy, i.cx, i.cy] {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    let mut count = 0u64;
    for (index, f) in frames.into_iter().enumerate() {
        if f.width != header.width || f.height != header.height {
            return Err(RecordingError::SizeMismatch {
                index,
                width: f.width,
                height: f.height,
                expected_width: header.width,
                expected_height: header.height,
            });
        }
        out.write_all(&f.timestamp_ms.to_le_bytes())?;
        let mut buf = Vec::with_capacity(f.depth.len() * 2);
        for d in &f.depth {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.write_all(&f.color)?;
        count += 1;
    }
    Ok(count)
}

pub fn read_recording<R: Read>(input: &mut R) -> Result<(RecordingHeader, Vec<DepthFrame>), RecordingError> {
    let mut head = [0u8; RECORDING_HEADER_BYTES as usize];
    input.read_exact(&mut head)?;
    let u = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    let f = |i: usize| f64::from(f32::from_le_bytes(head[i..i + 4].try_into().unwrap()));
    let header = RecordingHeader {
        width: u(0),
        height: u(4),
        intrinsics: Intrinsics { fx: f(8), fy: f(12), cx: f(16), cy: f(20) },
    };
    let px = header.width as usize * header.height as usize;
    let block = 8 + 5 * px;
    let mut frames = Vec::new();
    let mut buf = vec![0u8; block];
    loop {
        let index = frames.len();
        let mut filled = 0;
        while filled < block {
            match input.read(&mut buf[filled..])? {
                0 => break,
                n => filled += n,
            }
        }
        if filled == 0 {
            break;
        }
        if filled < block {
            return Err(RecordingError::Truncated { index });
        }
        let timestamp_ms = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let depth = buf[8..8 + 2 * px].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let color = buf[8 + 2 * px..].to_vec();
        frames.push(DepthFrame {
            width: header.width,
            height: header.height,
            depth,
            color,
            intrinsics: header.intrinsics,
            timestamp_ms,
            frame_id: index as u32,
        });
    }
    Ok((header, frames))
}
