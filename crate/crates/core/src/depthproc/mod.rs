//! Depth cleaning: foreground quantile outlier removal, mask-edge erosion,
//! guided bilateral spatial (BS) and spatiotemporal (BS+T) filtering.

mod bilateral;
mod edges;
mod warp;

pub use bilateral::{bilateral_spatial, bilateral_spatiotemporal, BilateralParams};
pub use edges::{detect_mask_edges, erode_mask_edges, EdgeErosionParams};
pub use warp::{warp_by_flow, FlowWarp};

#[doc(hidden)]
pub use bilateral::{bilateral_spatial_traversal, Traversal};

use crate::error::Result;
use crate::raster::{same_dims, DepthMap, Mask};

/// Default upper quantile kept on the foreground.
pub const DEFAULT_QUANTILE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileStatus {
    Ok,
    /// The mask selected no valid depth; the output is all-invalid.
    EmptyForeground,
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Drops background pixels and foreground depths above the `q` quantile of
/// the valid foreground depths. The lower tail is left untouched.
pub fn quantile_outlier_removal(
    depth: &DepthMap,
    mask: &Mask,
    q: f64,
) -> Result<(DepthMap, QuantileStatus)> {
    same_dims(depth.dims(), mask.dims())?;
    if !(0.0..=1.0).contains(&q) {
        return Err(crate::Error::InvalidInput(format!("quantile {q} outside [0, 1]")));
    }
    let (w, h) = depth.dims();
    let mut fg: Vec<f64> = (0..w * h)
        .filter(|&i| mask.data()[i] && depth.valid_mask()[i])
        .map(|i| depth.values()[i])
        .collect();
    if fg.is_empty() {
        log::warn!("quantile outlier removal: empty foreground");
        return Ok((DepthMap::invalid(w, h), QuantileStatus::EmptyForeground));
    }
    fg.sort_by(f64::total_cmp);
    let limit = quantile_sorted(&fg, q);
    let mut out = depth.clone();
    for y in 0..h {
        for x in 0..w {
            match depth.get(x, y) {
                Some(d) if mask.get(x, y) && d <= limit => {}
                _ => out.invalidate(x, y),
            }
        }
    }
    Ok((out, QuantileStatus::Ok))
}
