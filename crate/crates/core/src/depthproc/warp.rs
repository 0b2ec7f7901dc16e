use crate::error::Result;
use crate::raster::{same_dims, DepthMap, FlowField, GuidanceImage};

/// Backward warping: `out(x) = src(x + flow(x))` with bilinear sampling.
pub trait FlowWarp: Sized {
    fn warp(&self, flow: &FlowField) -> Result<Self>;
}

pub fn warp_by_flow<T: FlowWarp>(source: &T, flow: &FlowField) -> Result<T> {
    source.warp(flow)
}

/// Non-zero bilinear taps around `(sx, sy)` as `(x, y, weight)`; coordinates
/// may fall outside the image.
fn taps(sx: f64, sy: f64) -> impl Iterator<Item = (isize, isize, f64)> {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let tx = sx - x0;
    let ty = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    [
        (x0, y0, (1.0 - tx) * (1.0 - ty)),
        (x0 + 1, y0, tx * (1.0 - ty)),
        (x0, y0 + 1, (1.0 - tx) * ty),
        (x0 + 1, y0 + 1, tx * ty),
    ]
    .into_iter()
    .filter(|t| t.2 != 0.0)
}

impl FlowWarp for GuidanceImage {
    /// Out-of-bounds taps are clamped to the nearest edge pixel.
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        same_dims(self.dims(), flow.dims())?;
        let (w, h) = self.dims();
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let f = flow.get(x, y);
                let mut acc = [0.0; 3];
                for (tx, ty, wt) in taps(x as f64 + f[0], y as f64 + f[1]) {
                    let cx = tx.clamp(0, w as isize - 1) as usize;
                    let cy = ty.clamp(0, h as isize - 1) as usize;
                    let p = self.get(cx, cy);
                    for c in 0..3 {
                        acc[c] += wt * p[c];
                    }
                }
                out.pixels_mut()[y * w + x] = acc.map(|c| c.clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }
}

impl FlowWarp for DepthMap {
    /// A sample is invalid if any contributing tap is invalid or outside the
    /// image; mixed taps are never renormalized.
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        same_dims(self.dims(), flow.dims())?;
        let (w, h) = self.dims();
        let mut out = DepthMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let f = flow.get(x, y);
                let mut acc = 0.0;
                let mut ok = true;
                for (tx, ty, wt) in taps(x as f64 + f[0], y as f64 + f[1]) {
                    if tx < 0 || ty < 0 || tx >= w as isize || ty >= h as isize {
                        ok = false;
                        break;
                    }
                    match self.get(tx as usize, ty as usize) {
                        Some(d) => acc += wt * d,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    out.set(x, y, acc);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ramp(w: usize, h: usize) -> (DepthMap, GuidanceImage) {
        let d: Vec<f64> = (0..w * h).map(|i| 1.0 + (i % w) as f64 * 0.1).collect();
        let g: Vec<[f64; 3]> = (0..w * h)
            .map(|i| {
                let v = (i % w) as f64 / (w - 1) as f64;
                [v, 1.0 - v, 0.5]
            })
            .collect();
        (
            DepthMap::from_values(w, h, d).unwrap(),
            GuidanceImage::new(w, h, g).unwrap(),
        )
    }

    #[test]
    fn zero_flow_is_identity() {
        let (d, g) = ramp(7, 5);
        let flow = FlowField::zeros(7, 5);
        assert_eq!(warp_by_flow(&d, &flow).unwrap(), d);
        assert_eq!(warp_by_flow(&g, &flow).unwrap(), g);
    }

    #[test]
    fn unit_shift_moves_ramp_one_pixel() {
        let (d, g) = ramp(6, 3);
        let flow = FlowField::new(6, 3, vec![[1.0, 0.0]; 18]).unwrap();
        let wd = warp_by_flow(&d, &flow).unwrap();
        let wg = warp_by_flow(&g, &flow).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(wd.get(x, y), d.get(x + 1, y));
                assert_eq!(wg.get(x, y), g.get(x + 1, y));
            }
            assert_eq!(wd.get(5, y), None, "sample falls off the right edge");
            assert_eq!(wg.get(5, y), g.get(5, y), "guidance clamps to the edge");
        }
    }

    #[test]
    fn invalid_tap_poisons_depth_sample() {
        let mut d = DepthMap::from_values(4, 4, vec![2.0; 16]).unwrap();
        d.invalidate(2, 1);
        let flow = FlowField::new(4, 4, vec![[0.5, 0.0]; 16]).unwrap();
        let out = warp_by_flow(&d, &flow).unwrap();
        assert_eq!(out.get(1, 1), None);
        assert_eq!(out.get(2, 1), None);
        assert_eq!(out.get(0, 1), Some(2.0));
    }

    #[test]
    fn smooth_random_flow_matches_direct_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (24, 18);
        let depth: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.5..3.0)).collect();
        let depth = DepthMap::from_values(w, h, depth).unwrap();
        let guide: Vec<[f64; 3]> = (0..w * h)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let guide = GuidanceImage::new(w, h, guide).unwrap();
        let (a, b) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let flow: Vec<[f64; 2]> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                [a * (0.3 * y).sin(), b * (0.2 * x).cos()]
            })
            .collect();
        let flow = FlowField::new(w, h, flow).unwrap();
        let wd = warp_by_flow(&depth, &flow).unwrap();
        let wg = warp_by_flow(&guide, &flow).unwrap();

        for y in 0..h {
            for x in 0..w {
                let f = flow.get(x, y);
                let (sx, sy) = (x as f64 + f[0], y as f64 + f[1]);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let clampx = |v: f64| v.max(0.0).min((w - 1) as f64) as usize;
                let clampy = |v: f64| v.max(0.0).min((h - 1) as f64) as usize;
                for c in 0..3 {
                    let s = |xx: f64, yy: f64| guide.get(clampx(xx), clampy(yy))[c];
                    let top = s(x0, y0) * (1.0 - fx) + s(x0 + 1.0, y0) * fx;
                    let bot = s(x0, y0 + 1.0) * (1.0 - fx) + s(x0 + 1.0, y0 + 1.0) * fx;
                    let expect = top * (1.0 - fy) + bot * fy;
                    assert!((wg.get(x, y)[c] - expect).abs() < 1e-6);
                }
                let inside = x0 >= 0.0
                    && y0 >= 0.0
                    && (x0 + if fx > 0.0 { 1.0 } else { 0.0 }) <= (w - 1) as f64
                    && (y0 + if fy > 0.0 { 1.0 } else { 0.0 }) <= (h - 1) as f64;
                if inside {
                    let s = |xx: f64, yy: f64| depth.get(xx as usize, yy as usize).unwrap_or(0.0);
                    let x1 = if fx > 0.0 { x0 + 1.0 } else { x0 };
                    let y1 = if fy > 0.0 { y0 + 1.0 } else { y0 };
                    let top = s(x0, y0) * (1.0 - fx) + s(x1, y0) * fx;
                    let bot = s(x0, y1) * (1.0 - fx) + s(x1, y1) * fx;
                    let expect = top * (1.0 - fy) + bot * fy;
                    assert!((wd.get(x, y).unwrap() - expect).abs() < 1e-6);
                } else {
                    assert_eq!(wd.get(x, y), None);
                }
            }
        }
    }
}
