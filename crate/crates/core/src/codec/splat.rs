//! 32-byte SPLAT records and the `VSPL` frame container.
//!
//! Record layout (little-endian): position `3×f32` at 0, scales `3×f32` at
//! 12, RGBA `4×u8` at 24, quaternion `w x y z` as `4×u8` at 28.
//!
//! Stream layout: `"VSPL"`, `u16` version, `u32` frame count, one `u32`
//! byte size per frame, then the frame blocks back to back.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::splats::{GaussianSplat, SplatFrame};

pub const RECORD_SIZE: usize = 32;
pub const VSPL_MAGIC: [u8; 4] = *b"VSPL";
pub const VSPL_VERSION: u16 = 1;
pub const VSPL_HEADER_SIZE: usize = 10;

fn unit_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn quat_bytes(q: &Quaternion<f64>) -> [u8; 4] {
    [q.w, q.i, q.j, q.k].map(|c| (c * 128.0 + 128.0).round().clamp(0.0, 255.0) as u8)
}

fn bytes_quat(b: [u8; 4]) -> Option<UnitQuaternion<f64>> {
    let v = b.map(|x| (x as f64 - 128.0) / 128.0);
    let q = Quaternion::new(v[0], v[1], v[2], v[3]);
    if q.norm() == 0.0 {
        return None;
    }
    Some(UnitQuaternion::from_quaternion(q))
}

/// Quantized quaternion bytes that decode and re-encode to themselves.
/// Plain rounding followed by renormalization is occasionally off by one
/// step, so the quantizer is iterated until it settles.
pub fn quantize_quaternion(q: &UnitQuaternion<f64>) -> [u8; 4] {
    let mut b = quat_bytes(q.quaternion());
    for _ in 0..8 {
        let Some(d) = bytes_quat(b) else { break };
        let next = quat_bytes(d.quaternion());
        if next == b {
            break;
        }
        b = next;
    }
    b
}

fn encode_record(s: &GaussianSplat, out: &mut Vec<u8>) {
    for v in s.mu.iter().chain(s.scales.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&[unit_byte(s.color[0]), unit_byte(s.color[1]), unit_byte(s.color[2]), unit_byte(s.opacity)]);
    out.extend_from_slice(&quantize_quaternion(&s.rot));
}

fn f32_at(b: &[u8], i: usize) -> f64 {
    f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]) as f64
}

fn decode_record(b: &[u8], offset: u64) -> Result<GaussianSplat> {
    let mu = Vector3::new(f32_at(b, 0), f32_at(b, 4), f32_at(b, 8));
    let scales = Vector3::new(f32_at(b, 12), f32_at(b, 16), f32_at(b, 20));
    if !mu.iter().all(|v| v.is_finite()) {
        return Err(Error::malformed("splat record", offset, "non-finite position"));
    }
    if !scales.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::malformed("splat record", offset + 12, "scale must be finite and non-negative"));
    }
    let rot = bytes_quat([b[28], b[29], b[30], b[31]])
        .ok_or_else(|| Error::malformed("splat record", offset + 28, "zero quaternion"))?;
    let color = [b[24] as f64 / 255.0, b[25] as f64 / 255.0, b[26] as f64 / 255.0];
    GaussianSplat::new(mu, rot, scales, color, b[27] as f64 / 255.0)
}

pub fn encode_splat_frame(frame: &SplatFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.splats.len() * RECORD_SIZE);
    for s in &frame.splats {
        encode_record(s, &mut out);
    }
    out
}

fn decode_records(bytes: &[u8], base: u64) -> Result<Vec<GaussianSplat>> {
    if !bytes.len().is_multiple_of(RECORD_SIZE) {
        let whole = bytes.len() - bytes.len() % RECORD_SIZE;
        return Err(Error::malformed(
            "splat frame",
            base + whole as u64,
            format!("{} trailing bytes do not form a 32-byte record", bytes.len() - whole),
        ));
    }
    bytes
        .chunks_exact(RECORD_SIZE)
        .enumerate()
        .map(|(i, c)| decode_record(c, base + (i * RECORD_SIZE) as u64))
        .collect()
}

/// Inverse of [`encode_splat_frame`]; the source camera and frame index are
/// not stored and come back empty.
pub fn decode_splat_frame(bytes: &[u8]) -> Result<SplatFrame> {
    Ok(SplatFrame {
        splats: decode_records(bytes, 0)?,
        source_camera: String::new(),
        frame_index: 0,
    })
}

/// Frame as it survives a SPLAT round trip.
pub fn quantize_frame(frame: &SplatFrame) -> SplatFrame {
    let mut q = decode_splat_frame(&encode_splat_frame(frame)).expect("encoder output always decodes");
    q.source_camera = frame.source_camera.clone();
    q.frame_index = frame.frame_index;
    q
}

pub fn video_splat_size(splat_counts: &[usize]) -> u64 {
    VSPL_HEADER_SIZE as u64 + 4 * splat_counts.len() as u64 + splat_counts.iter().map(|&n| 32 * n as u64).sum::<u64>()
}

pub fn encode_video_splat(frames: &[SplatFrame]) -> Result<Vec<u8>> {
    let blocks: Vec<Vec<u8>> = frames.iter().map(encode_splat_frame).collect();
    let count = u32::try_from(frames.len()).map_err(|_| Error::InvalidInput("too many frames for a stream".into()))?;
    let total: usize = blocks.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(VSPL_HEADER_SIZE + 4 * blocks.len() + total);
    out.extend_from_slice(&VSPL_MAGIC);
    out.extend_from_slice(&VSPL_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for b in &blocks {
        let size = u32::try_from(b.len()).map_err(|_| Error::InvalidInput("frame too large for a stream".into()))?;
        out.extend_from_slice(&size.to_le_bytes());
    }
    for b in blocks {
        out.extend_from_slice(&b);
    }
    Ok(out)
}

/// Parses the header and size table, returning the byte range of each
/// frame block.
pub fn video_splat_index(bytes: &[u8]) -> Result<Vec<std::ops::Range<usize>>> {
    const WHAT: &str = "video splat stream";
    if bytes.len() < VSPL_HEADER_SIZE {
        return Err(Error::malformed(WHAT, bytes.len() as u64, "truncated header"));
    }
    if bytes[0..4] != VSPL_MAGIC {
        return Err(Error::malformed(WHAT, 0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VSPL_VERSION {
        return Err(Error::malformed(WHAT, 4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as u64;
    let table_end = VSPL_HEADER_SIZE as u64 + 4 * count;
    if table_end > bytes.len() as u64 {
        return Err(Error::malformed(
            WHAT,
            6,
            format!("frame count {count} needs a {}-byte size table but the stream has {} bytes", 4 * count, bytes.len()),
        ));
    }
    let mut ranges = Vec::with_capacity(count as usize);
    let mut pos = table_end;
    for i in 0..count {
        let at = (VSPL_HEADER_SIZE as u64 + 4 * i) as usize;
        let size = u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as u64;
        if !size.is_multiple_of(RECORD_SIZE as u64) {
            return Err(Error::malformed(WHAT, at as u64, format!("frame {i} size {size} is not a multiple of 32")));
        }
        let end = pos + size;
        if end > bytes.len() as u64 {
            return Err(Error::malformed(WHAT, at as u64, format!("frame {i} runs past the end of the stream")));
        }
        ranges.push(pos as usize..end as usize);
        pos = end;
    }
    if pos != bytes.len() as u64 {
        return Err(Error::malformed(
            WHAT,
            pos,
            format!("size table accounts for {pos} bytes but the stream has {}", bytes.len()),
        ));
    }
    Ok(ranges)
}

pub fn decode_video_splat(bytes: &[u8]) -> Result<Vec<SplatFrame>> {
    video_splat_index(bytes)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(SplatFrame {
                splats: decode_records(&bytes[r.clone()], r.start as u64)?,
                source_camera: String::new(),
                frame_index: i as u64,
            })
        })
        .collect()
}
