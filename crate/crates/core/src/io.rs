//! File formats for rasters consumed and produced by the pipeline.
//!
//! - depth: 16-bit grayscale PNG in millimeters, 0 = invalid
//! - mask: 8-bit grayscale PNG, values above 127 are foreground
//! - color: 8-bit RGB PNG
//! - flow: Middlebury `.flo`
//! - disparity: `VDSP`, `u32` width and height, then `f32` values (NaN = invalid)
//! - splat pre-activations: `SPRE`, `u32` width and height, then eight `f32`
//!   per pixel (quaternion `w x y z`, three scale pre-activations, opacity logit)

use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use image::{ImageBuffer, ImageFormat, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, FlowField, GuidanceImage, Mask};
use crate::render::RenderImage;
use crate::splats::PreactivationMap;
use crate::stereo::DisparityMap;

pub const FLO_MAGIC: f32 = 202021.25;
pub const DISPARITY_MAGIC: [u8; 4] = *b"VDSP";
pub const PREACTIVATION_MAGIC: [u8; 4] = *b"SPRE";

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let seq = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{name}.{}.{seq}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn load(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn png_bytes<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<Vec<u8>>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(out.into_inner())
}

pub fn depth_to_millimeters(depth: &DepthMap) -> Vec<u16> {
    depth
        .values()
        .iter()
        .zip(depth.valid_mask())
        .map(|(&d, &ok)| if ok { (d * 1000.0).round().clamp(1.0, 65535.0) as u16 } else { 0 })
        .collect()
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let img = load(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.into_raw().into_iter().map(|mm| mm as f64 / 1000.0).collect();
    DepthMap::from_values(w, h, values)
}

pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>> {
    let (w, h) = depth.dims();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, depth_to_millimeters(depth)).expect("buffer size matches");
    png_bytes(&img, Path::new("<depth>"))
}

pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    write_atomic(path, &encode_depth_png(depth)?)
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = load(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::new(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let (w, h) = mask.dims();
    let data = mask.data().iter().map(|&m| if m { 255u8 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer size matches");
    png_bytes(&img, Path::new("<mask>"))
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask)?)
}

pub fn read_color_png(path: &Path) -> Result<GuidanceImage> {
    let img = load(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    GuidanceImage::new(w, h, px)
}

pub fn color_to_bytes(img: &GuidanceImage) -> Vec<u8> {
    img.pixels().iter().flat_map(|p| p.map(crate::render::quantize)).collect()
}

pub fn encode_color_png(img: &GuidanceImage) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, color_to_bytes(img)).expect("buffer size matches");
    png_bytes(&buf, Path::new("<color>"))
}

pub fn write_color_png(path: &Path, img: &GuidanceImage) -> Result<()> {
    write_atomic(path, &encode_color_png(img)?)
}

pub fn write_render_png(path: &Path, img: &RenderImage) -> Result<()> {
    let (w, h) = img.dims();
    let buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, img.to_rgba8()).expect("buffer size matches");
    write_atomic(path, &png_bytes(&buf, path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::malformed(self.what, self.pos as u64, "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    /// Width and height, checked against the bytes left for `per_pixel`
    /// 32-bit values each.
    fn dims(&mut self, per_pixel: u64) -> Result<(usize, usize)> {
        let at = self.pos as u64;
        let w = self.u32()? as u64;
        let h = self.u32()? as u64;
        let need = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(4 * per_pixel))
            .ok_or_else(|| Error::malformed(self.what, at, "dimensions overflow"))?;
        let left = (self.bytes.len() - self.pos) as u64;
        if need != left {
            return Err(Error::malformed(
                self.what,
                at,
                format!("{w}x{h} needs {need} payload bytes, found {left}"),
            ));
        }
        Ok((w as usize, h as usize))
    }
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader { bytes, pos: 0, what: "flo file" };
    if r.f32()? != FLO_MAGIC {
        return Err(Error::malformed("flo file", 0, "bad magic"));
    }
    let (w, h) = r.dims(2)?;
    let mut v = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        v.push([r.f32()? as f64, r.f32()? as f64]);
    }
    FlowField::new(w, h, v)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for f in flow.vectors() {
        out.extend_from_slice(&(f[0] as f32).to_le_bytes());
        out.extend_from_slice(&(f[1] as f32).to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_atomic(path, &encode_flo(flow))
}

pub fn encode_disparity(d: &DisparityMap) -> Vec<u8> {
    let (w, h) = d.dims();
    let mut out = Vec::with_capacity(12 + 4 * w * h);
    out.extend_from_slice(&DISPARITY_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let v = d.get(x, y).map_or(f32::NAN, |v| v as f32);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_disparity(bytes: &[u8]) -> Result<DisparityMap> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "disparity file",
    };
    if r.take(4)? != DISPARITY_MAGIC {
        return Err(Error::malformed("disparity file", 0, "bad magic"));
    }
    let (w, h) = r.dims(1)?;
    let mut v = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        v.push(r.f32()? as f64);
    }
    DisparityMap::from_values(w, h, v)
}

pub fn read_disparity(path: &Path) -> Result<DisparityMap> {
    decode_disparity(&read_bytes(path)?)
}

pub fn write_disparity(path: &Path, d: &DisparityMap) -> Result<()> {
    write_atomic(path, &encode_disparity(d))
}

pub fn encode_preactivations(p: &PreactivationMap) -> Vec<u8> {
    let (w, h) = p.dims();
    let mut out = Vec::with_capacity(12 + 32 * w * h);
    out.extend_from_slice(&PREACTIVATION_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for v in p.values() {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_preactivations(bytes: &[u8]) -> Result<PreactivationMap> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "pre-activation file",
    };
    if r.take(4)? != PREACTIVATION_MAGIC {
        return Err(Error::malformed("pre-activation file", 0, "bad magic"));
    }
    let (w, h) = r.dims(8)?;
    let mut v = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let mut px = [0.0; 8];
        for c in px.iter_mut() {
            *c = r.f32()? as f64;
        }
        v.push(px);
    }
    PreactivationMap::new(w, h, v)
}

pub fn read_preactivations(path: &Path) -> Result<PreactivationMap> {
    decode_preactivations(&read_bytes(path)?)
}

pub fn write_preactivations(path: &Path, p: &PreactivationMap) -> Result<()> {
    write_atomic(path, &encode_preactivations(p))
}
