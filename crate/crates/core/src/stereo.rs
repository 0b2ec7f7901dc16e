//! Rectified stereo: disparity/depth conversion, the mirror-and-negate
//! flipping identity, the flip-patch trigger, adjacent-pair gating and a
//! deterministic block matcher.
//!
//! Disparity convention: for a rectified pair `(first, second)`,
//! `first(u, v) = second(u - d, v)`. It is positive when `first` is the left
//! view.

use rayon::prelude::*;

use crate::camera::{backproject_pixel, camera_to_world, project_point, Camera};
use crate::error::{Error, Result};
use crate::raster::{same_dims, DepthMap, GuidanceImage, Mask};

/// Disparities at or below this floor (pixels) produce no depth.
pub const MIN_DISPARITY: f64 = 0.5;

/// Block-matcher uniqueness ratio: the best cost must be strictly below this
/// fraction of the best cost at a disparity more than one step away.
pub const UNIQUENESS_RATIO: f64 = 0.9;

/// Working-distance range used for frustum overlap sampling, meters.
pub const WORKING_RANGE: (f64, f64) = (0.5, 3.5);

pub const DEFAULT_MIN_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        DisparityMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Non-finite entries become invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "disparity buffer of {} does not match {width}x{height}",
                values.len()
            )));
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        Ok(DisparityMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, d: Option<f64>) {
        let i = y * self.width + x;
        match d {
            Some(v) if v.is_finite() => {
                self.values[i] = v;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for (v, &ok) in out.values.iter_mut().zip(&self.valid) {
            if ok {
                *v = -*v;
            }
        }
        out
    }
}

/// A rectified image pair with its focal length (px) and baseline (m).
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub first: GuidanceImage,
    pub second: GuidanceImage,
    pub focal: f64,
    pub baseline: f64,
}

impl RectifiedPair {
    pub fn new(first: GuidanceImage, second: GuidanceImage, focal: f64, baseline: f64) -> Result<Self> {
        same_dims(first.dims(), second.dims())?;
        if !(focal > 0.0 && baseline > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal ({focal}) and baseline ({baseline}) must be positive"
            )));
        }
        Ok(RectifiedPair {
            first,
            second,
            focal,
            baseline,
        })
    }

    pub fn width(&self) -> usize {
        self.first.width()
    }

    /// Both images mirrored horizontally.
    pub fn flipped(&self) -> Self {
        RectifiedPair {
            first: flip_image(&self.first),
            second: flip_image(&self.second),
            focal: self.focal,
            baseline: self.baseline,
        }
    }
}

/// `Z = f B / d`; pixels with `d <= MIN_DISPARITY` become invalid.
pub fn disparity_to_depth(d: &DisparityMap, focal: f64, baseline: f64) -> Result<DepthMap> {
    if !(focal > 0.0 && baseline > 0.0) {
        return Err(Error::InvalidInput("focal and baseline must be positive".into()));
    }
    let (w, h) = d.dims();
    let mut out = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(v) = d.get(x, y) {
                if v > MIN_DISPARITY {
                    out.set(x, y, focal * baseline / v);
                }
            }
        }
    }
    Ok(out)
}

/// `d = f B / Z` on valid depth.
pub fn depth_to_disparity(depth: &DepthMap, focal: f64, baseline: f64) -> DisparityMap {
    let (w, h) = depth.dims();
    let mut out = DisparityMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(z) = depth.get(x, y) {
                out.set(x, y, Some(focal * baseline / z));
            }
        }
    }
    out
}

/// `out(u, v) = -d(W - 1 - u, v)`, validity mirrored.
pub fn flip_disparity(d: &DisparityMap) -> DisparityMap {
    mirror_disparity(d).negated()
}

fn mirror_disparity(d: &DisparityMap) -> DisparityMap {
    let (w, h) = d.dims();
    let mut out = DisparityMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, d.get(w - 1 - x, y));
        }
    }
    out
}

pub fn flip_image(img: &GuidanceImage) -> GuidanceImage {
    let (w, h) = img.dims();
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            px.push(img.get(w - 1 - x, y));
        }
    }
    GuidanceImage::new(w, h, px).expect("dimensions preserved")
}

pub fn flip_mask(mask: &Mask) -> Mask {
    let w = mask.width();
    Mask::from_fn(w, mask.height(), |x, y| mask.get(w - 1 - x, y))
}

fn median_foreground_x(mask: &Mask) -> Option<f64> {
    // Row-major scan yields x per row; collect and select.
    let mut xs: Vec<usize> = Vec::with_capacity(mask.count());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                xs.push(x);
            }
        }
    }
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2] as f64
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0
    })
}

/// Whether the pair is in reversed order and needs the flip patch: the
/// median foreground x of the first image is strictly smaller than that of
/// the second. `None` when either mask is empty.
pub fn should_apply_flip_patch(mask_first: &Mask, mask_second: &Mask) -> Option<bool> {
    let a = median_foreground_x(mask_first)?;
    let b = median_foreground_x(mask_second)?;
    Some(a < b)
}

/// Per-channel 8-bit intensities for exact integer matching costs.
fn quantize(img: &GuidanceImage) -> Vec<[i32; 3]> {
    img.pixels()
        .iter()
        .map(|p| p.map(|c| (c * 255.0).round() as i32))
        .collect()
}

/// Sum-of-absolute-differences block matcher over signed disparities
/// `-d_max..=d_max`. Costs are integer so results do not depend on
/// summation order; ambiguous pixels (ties, or failing the uniqueness
/// ratio) are invalid. The matcher is mirror-equivariant, so
/// `-flip(d(L, R)) == d(flip(L), flip(R))` holds exactly.
pub fn estimate_disparity_blockmatch(pair: &RectifiedPair, window: usize, d_max: usize) -> Result<DisparityMap> {
    let (w, h) = pair.first.dims();
    if window.is_multiple_of(2) || window == 0 {
        return Err(Error::InvalidInput(format!("window must be odd, got {window}")));
    }
    if d_max >= w {
        return Err(Error::InvalidInput(format!(
            "max disparity {d_max} must be below the image width {w}"
        )));
    }
    let half = (window / 2) as isize;
    let left = quantize(&pair.first);
    let right = quantize(&pair.second);
    let d_max = d_max as isize;
    let ndisp = (2 * d_max + 1) as usize;

    // Window-summed costs per disparity via an integral image of |L - R|.
    let costs: Vec<Vec<Option<i64>>> = (-d_max..=d_max)
        .into_par_iter()
        .map(|d| {
            let iw = w + 1;
            let mut integral = vec![0i64; iw * (h + 1)];
            for y in 0..h {
                let mut row = 0i64;
                for x in 0..w {
                    let xr = x as isize - d;
                    let diff = if xr >= 0 && xr < w as isize {
                        let a = left[y * w + x];
                        let b = right[y * w + xr as usize];
                        ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) as i64
                    } else {
                        0
                    };
                    row += diff;
                    integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row;
                }
            }
            let mut out = vec![None; w * h];
            for y in half..h as isize - half {
                for x in half..w as isize - half {
                    let xr = x - d;
                    if xr - half < 0 || xr + half >= w as isize {
                        continue;
                    }
                    let (x0, x1) = ((x - half) as usize, (x + half + 1) as usize);
                    let (y0, y1) = ((y - half) as usize, (y + half + 1) as usize);
                    let s = integral[y1 * iw + x1] - integral[y0 * iw + x1] - integral[y1 * iw + x0]
                        + integral[y0 * iw + x0];
                    out[y as usize * w + x as usize] = Some(s);
                }
            }
            out
        })
        .collect();

    let mut out = DisparityMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best: Option<(i64, usize)> = None;
            let mut tied = false;
            for k in 0..ndisp {
                if let Some(c) = costs[k][i] {
                    match best {
                        None => best = Some((c, k)),
                        Some((b, _)) if c < b => {
                            best = Some((c, k));
                            tied = false;
                        }
                        Some((b, _)) if c == b => tied = true,
                        _ => {}
                    }
                }
            }
            let Some((bc, bk)) = best else { continue };
            if tied {
                continue;
            }
            let second = (0..ndisp)
                .filter(|&k| k.abs_diff(bk) > 1)
                .filter_map(|k| costs[k][i])
                .min();
            if let Some(sc) = second {
                // bc < 0.9 * sc, exactly in integers
                if 10 * bc >= 9 * sc {
                    continue;
                }
            }
            out.set(x, y, Some((bk as isize - d_max) as f64));
        }
    }
    Ok(out)
}

/// Depth for the first image of a pair, applying the flip patch when the
/// pair is in reversed order. A patched pair is matched mirrored and the
/// estimate mirrored back, giving positive disparities for the first view.
#[derive(Debug, Clone)]
pub struct StereoDepth {
    pub depth: DepthMap,
    pub disparity: DisparityMap,
    pub flipped: bool,
}

pub fn stereo_depth(
    pair: &RectifiedPair,
    mask_first: &Mask,
    mask_second: &Mask,
    window: usize,
    d_max: usize,
) -> Result<StereoDepth> {
    let flipped = should_apply_flip_patch(mask_first, mask_second).ok_or_else(|| {
        Error::InvalidInput("flip patch indeterminate: empty foreground mask".into())
    })?;
    let disparity = if flipped {
        mirror_disparity(&estimate_disparity_blockmatch(&pair.flipped(), window, d_max)?)
    } else {
        estimate_disparity_blockmatch(pair, window, d_max)?
    };
    let mut depth = disparity_to_depth(&disparity, pair.focal, pair.baseline)?;
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if !mask_first.get(x, y) {
                depth.invalidate(x, y);
            }
        }
    }
    Ok(StereoDepth {
        depth,
        disparity,
        flipped,
    })
}

/// Fraction of frustum samples of `a` (pixel grid times the working depth
/// range) that project inside `b`.
pub fn pair_overlap(a: &Camera, b: &Camera) -> f64 {
    const GRID: usize = 24;
    const DEPTHS: usize = 16;
    let k = &a.intrinsics;
    let (near, far) = WORKING_RANGE;
    let mut seen = 0usize;
    let mut total = 0usize;
    for iv in 0..GRID {
        for iu in 0..GRID {
            let u = (iu as f64 + 0.5) / GRID as f64 * (k.width - 1) as f64;
            let v = (iv as f64 + 0.5) / GRID as f64 * (k.height - 1) as f64;
            for id in 0..DEPTHS {
                let z = near + (id as f64 + 0.5) / DEPTHS as f64 * (far - near);
                let p = camera_to_world(&backproject_pixel(u, v, z, k).expect("positive depth"), &a.pose);
                total += 1;
                if let Ok((pu, pv, _)) = project_point(&p, b) {
                    if b.intrinsics.contains(pu, pv) {
                        seen += 1;
                    }
                }
            }
        }
    }
    seen as f64 / total as f64
}

/// Adjacent-pair gate: stereo is attempted only when the views overlap by at
/// least `min_overlap` over the working range.
pub fn gate_pair(a: &Camera, b: &Camera, min_overlap: f64) -> bool {
    pair_overlap(a, b) >= min_overlap
}
