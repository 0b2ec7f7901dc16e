use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raster::{same_dims, DepthMap, Mask};

/// Mask-edge erosion settings. Thresholds are fractions of the maximum Sobel
/// magnitude over the mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeErosionParams {
    pub low: f64,
    pub high: f64,
    pub erode_px: usize,
}

impl Default for EdgeErosionParams {
    fn default() -> Self {
        EdgeErosionParams {
            low: 0.1,
            high: 0.2,
            erode_px: 2,
        }
    }
}

impl EdgeErosionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low && self.low <= self.high) {
            return Err(Error::InvalidInput(format!(
                "edge thresholds must satisfy 0 <= low <= high, got {} and {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Sobel magnitude of the binary mask. Pixels outside the image count as
/// background, so a mask touching the border has an edge there.
fn sobel_magnitude(mask: &Mask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else if mask.get(x as usize, y as usize) {
            1.0
        } else {
            0.0
        }
    };
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    mag
}

/// Edge pixels of the mask: Sobel magnitude with hysteresis thresholding.
/// The band straddles the boundary (pixels on both sides respond).
pub fn detect_mask_edges(mask: &Mask, low: f64, high: f64) -> Mask {
    let (w, h) = mask.dims();
    let mag = sobel_magnitude(mask);
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Mask::filled(w, h, false);
    }
    let (lo, hi) = (low * max, high * max);
    let weak: Vec<bool> = mag.iter().map(|&m| m > 0.0 && m >= lo).collect();
    let mut edge = vec![false; w * h];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in mag.iter().enumerate() {
        if m > 0.0 && m >= hi {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if weak[j] && !edge[j] {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Mask::new(w, h, edge).expect("dimensions preserved")
}

/// Square (Chebyshev) dilation by `radius` pixels, separable max filter.
fn dilate(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|xx| mask[y * w + xx]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

/// Invalidates depth outside the mask and on foreground pixels near a
/// detected mask edge. Because the edge band covers the outermost foreground
/// ring, dilating it by `erode_px - 1` removes exactly `erode_px` pixels from
/// a straight boundary.
pub fn erode_mask_edges(depth: &DepthMap, mask: &Mask, params: &EdgeErosionParams) -> Result<DepthMap> {
    params.validate()?;
    same_dims(depth.dims(), mask.dims())?;
    let (w, h) = depth.dims();
    let mut out = depth.clone();
    if params.erode_px == 0 {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    out.invalidate(x, y);
                }
            }
        }
        return Ok(out);
    }
    let edges = detect_mask_edges(mask, params.low, params.high);
    let near = dilate(edges.data(), w, h, params.erode_px - 1);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || near[y * w + x] {
                out.invalidate(x, y);
            }
        }
    }
    Ok(out)
}
