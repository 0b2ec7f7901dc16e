use rayon::prelude::*;

use super::warp::FlowWarp;
use crate::error::{Error, Result};
use crate::numeric::{gauss, CompensatedSum};
use crate::raster::{same_dims, DepthMap, FlowField, GuidanceImage};

/// Guided bilateral filter settings. Defaults: 15x15 window (radius 7),
/// spatial sigma 7 px, range sigma 0.1 on unit RGB, temporal sigma 0.06,
/// temporal weight 0.6.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    pub radius: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub sigma_t: f64,
    pub lambda_t: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        BilateralParams {
            radius: 7,
            sigma_s: 7.0,
            sigma_r: 0.1,
            sigma_t: 0.06,
            lambda_t: 0.6,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::InvalidInput("bilateral radius must be >= 1".into()));
        }
        for (name, v) in [
            ("sigma_s", self.sigma_s),
            ("sigma_r", self.sigma_r),
            ("sigma_t", self.sigma_t),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_t >= 0.0 && self.lambda_t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda_t must be non-negative, got {}",
                self.lambda_t
            )));
        }
        Ok(())
    }
}

/// Neighbor enumeration order inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    RowMajor,
    Reversed,
}

#[inline]
fn color_dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

struct Kernel {
    radius: isize,
    spatial: Vec<f64>,
    sigma_r: f64,
}

impl Kernel {
    fn new(p: &BilateralParams) -> Self {
        let r = p.radius as isize;
        let side = 2 * r + 1;
        let mut spatial = Vec::with_capacity((side * side) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                spatial.push(gauss((dx * dx + dy * dy) as f64, p.sigma_s));
            }
        }
        Kernel {
            radius: r,
            spatial,
            sigma_r: p.sigma_r,
        }
    }

    /// Accumulates the spatial numerator and denominator at `(x, y)` over
    /// valid neighbors.
    fn accumulate(
        &self,
        depth: &DepthMap,
        guide: &GuidanceImage,
        x: usize,
        y: usize,
        order: Traversal,
        num: &mut CompensatedSum,
        den: &mut CompensatedSum,
    ) {
        let (w, h) = depth.dims();
        let r = self.radius;
        let side = 2 * r + 1;
        let center = guide.get(x, y);
        let mut visit = |k: isize| {
            let dy = k / side - r;
            let dx = k % side - r;
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                return;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if let Some(d) = depth.get(nx, ny) {
                let wt = self.spatial[k as usize]
                    * gauss(color_dist_sq(guide.get(nx, ny), center), self.sigma_r);
                num.add(d * wt);
                den.add(wt);
            }
        };
        match order {
            Traversal::RowMajor => (0..side * side).for_each(&mut visit),
            Traversal::Reversed => (0..side * side).rev().for_each(&mut visit),
        }
    }
}

/// Guided bilateral spatial (BS) filter. Only valid pixels are filtered and
/// the window only draws on valid pixels.
pub fn bilateral_spatial(depth: &DepthMap, guide: &GuidanceImage, p: &BilateralParams) -> Result<DepthMap> {
    bilateral_spatial_traversal(depth, guide, p, Traversal::RowMajor)
}

pub fn bilateral_spatial_traversal(
    depth: &DepthMap,
    guide: &GuidanceImage,
    p: &BilateralParams,
    order: Traversal,
) -> Result<DepthMap> {
    p.validate()?;
    same_dims(depth.dims(), guide.dims())?;
    let kernel = Kernel::new(p);
    Ok(filter_rows(depth.dims(), |x, y| {
        if !depth.is_valid(x, y) {
            return None;
        }
        let mut num = CompensatedSum::default();
        let mut den = CompensatedSum::default();
        kernel.accumulate(depth, guide, x, y, order, &mut num, &mut den);
        Some(num.value() / den.value())
    }))
}

/// Bilateral spatiotemporal (BS+T) filter. The previous filtered depth and
/// guide are warped to frame `t` by the backward flow; where the warped depth
/// is valid and `lambda_t > 0` it enters both sums with weight
/// `lambda_t * G_t(|I_warp(x) - I_t(x)|)`. Holes with temporal support are
/// filled.
pub fn bilateral_spatiotemporal(
    depth_t: &DepthMap,
    guide_t: &GuidanceImage,
    prev_filtered: &DepthMap,
    prev_guide: &GuidanceImage,
    flow: &FlowField,
    p: &BilateralParams,
) -> Result<DepthMap> {
    p.validate()?;
    let dims = depth_t.dims();
    same_dims(dims, guide_t.dims())?;
    same_dims(dims, prev_filtered.dims())?;
    same_dims(dims, prev_guide.dims())?;
    same_dims(dims, flow.dims())?;
    let warped_depth = prev_filtered.warp(flow)?;
    let warped_guide = prev_guide.warp(flow)?;
    let kernel = Kernel::new(p);
    Ok(filter_rows(dims, |x, y| {
        let temporal = if p.lambda_t > 0.0 {
            warped_depth.get(x, y).map(|d| {
                let wt = p.lambda_t
                    * gauss(color_dist_sq(warped_guide.get(x, y), guide_t.get(x, y)), p.sigma_t);
                (d, wt)
            })
        } else {
            None
        };
        if !depth_t.is_valid(x, y) && temporal.is_none() {
            return None;
        }
        let mut num = CompensatedSum::default();
        let mut den = CompensatedSum::default();
        kernel.accumulate(depth_t, guide_t, x, y, Traversal::RowMajor, &mut num, &mut den);
        if let Some((d, wt)) = temporal {
            num.add(d * wt);
            den.add(wt);
        }
        let den = den.value();
        (den > 0.0).then(|| num.value() / den)
    }))
}

fn filter_rows(dims: (usize, usize), f: impl Fn(usize, usize) -> Option<f64> + Sync) -> DepthMap {
    let (w, h) = dims;
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    values
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (vrow, mrow))| {
            for x in 0..w {
                if let Some(d) = f(x, y) {
                    if d.is_finite() && d > 0.0 {
                        vrow[x] = d;
                        mrow[x] = true;
                    }
                }
            }
        });
    DepthMap::from_parts(w, h, values, valid)
}
