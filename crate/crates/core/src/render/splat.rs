use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{project_camera_point, projection_jacobian, Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::splats::{GaussianSplat, SplatFrame};

use super::image::RenderImage;

const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    /// Added to the projected covariance as `term · I₂` (px²).
    pub footprint_term: f64,
    /// Eigenvalue floor of the screen covariance (px²).
    pub min_footprint: f64,
    /// Mahalanobis radius beyond which a splat contributes nothing.
    pub cutoff_sigma: f64,
    pub transmittance_eps: f64,
    pub background: [f64; 3],
}

impl RenderSettings {
    pub fn for_intrinsics(k: &Intrinsics) -> Self {
        RenderSettings {
            width: k.width,
            height: k.height,
            footprint_term: 0.3,
            min_footprint: 0.3,
            cutoff_sigma: 3.0,
            transmittance_eps: 1e-4,
            background: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("render size must be non-zero".into()));
        }
        if !(self.footprint_term >= 0.0) || !(self.min_footprint >= 0.0) {
            return Err(Error::InvalidInput("footprint terms must be non-negative".into()));
        }
        if !(self.cutoff_sigma > 0.0) {
            return Err(Error::InvalidInput("cutoff_sigma must be positive".into()));
        }
        if !(self.transmittance_eps >= 0.0 && self.transmittance_eps < 1.0) {
            return Err(Error::InvalidInput("transmittance_eps must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A splat projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenSplat {
    pub center: Vector2<f64>,
    pub lambda: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// A world-space Gaussian given by an explicit covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldGaussian {
    pub mu: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl From<&GaussianSplat> for WorldGaussian {
    fn from(s: &GaussianSplat) -> Self {
        WorldGaussian {
            mu: s.mu,
            cov: s.covariance(),
            color: s.color,
            opacity: s.opacity,
        }
    }
}

/// Screen covariance `J Rᵥ Σ Rᵥᵀ Jᵀ + term·I₂` with eigenvalues floored.
/// Returns `None` for Gaussians whose mean is not in front of the camera.
pub fn project_gaussian(g: &WorldGaussian, cam: &Camera, settings: &RenderSettings) -> Option<ScreenSplat> {
    let p = cam.pose.world_to_camera(&g.mu);
    let (u, v, z) = project_camera_point(&p, &cam.intrinsics).ok()?;
    let j = projection_jacobian(&p, &cam.intrinsics).ok()?;
    let rv = cam.pose.rotation().transpose();
    let cov_cam = rv * g.cov * rv.transpose();
    let mut lambda = j * cov_cam * j.transpose() + Matrix2::identity() * settings.footprint_term;
    lambda = (lambda + lambda.transpose()) * 0.5;
    let eig = SymmetricEigen::new(lambda);
    let floor = settings.min_footprint;
    if eig.eigenvalues.iter().any(|&l| l < floor * (1.0 - 1e-9)) {
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        lambda = eig.eigenvectors * Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        lambda = (lambda + lambda.transpose()) * 0.5;
    }
    Some(ScreenSplat {
        center: Vector2::new(u, v),
        lambda,
        depth: z,
        color: g.color,
        opacity: g.opacity,
    })
}

pub fn project_splat(splat: &GaussianSplat, cam: &Camera, settings: &RenderSettings) -> Option<ScreenSplat> {
    project_gaussian(&splat.into(), cam, settings)
}

/// Screen splat prepared for evaluation: inverse covariance and a clipped
/// pixel bounding box `[x0, x1) × [y0, y1)`.
struct Prepared {
    s: ScreenSplat,
    inv: Matrix2<f64>,
    bbox: (usize, usize, usize, usize),
}

fn prepare(s: ScreenSplat, settings: &RenderSettings) -> Option<Prepared> {
    let inv = s.lambda.try_inverse()?;
    let k = settings.cutoff_sigma;
    let ex = k * s.lambda[(0, 0)].sqrt();
    let ey = k * s.lambda[(1, 1)].sqrt();
    let x0 = (s.center.x - ex).ceil().max(0.0);
    let y0 = (s.center.y - ey).ceil().max(0.0);
    let x1 = (s.center.x + ex).floor() + 1.0;
    let y1 = (s.center.y + ey).floor() + 1.0;
    let x1 = x1.min(settings.width as f64);
    let y1 = y1.min(settings.height as f64);
    if !(x0 < x1 && y0 < y1) {
        return None;
    }
    Some(Prepared {
        s,
        inv,
        bbox: (x0 as usize, x1 as usize, y0 as usize, y1 as usize),
    })
}

/// Gaussian weight at pixel center `(x, y)`, zero outside the cutoff ellipse.
#[inline]
pub(crate) fn falloff(center: &Vector2<f64>, inv: &Matrix2<f64>, cutoff: f64, x: f64, y: f64) -> f64 {
    let dx = x - center.x;
    let dy = y - center.y;
    let m = inv[(0, 0)] * dx * dx + (inv[(0, 1)] + inv[(1, 0)]) * dx * dy + inv[(1, 1)] * dy * dy;
    if m > cutoff * cutoff {
        0.0
    } else {
        (-0.5 * m).exp()
    }
}

/// Composites Gaussians front to back, sorted by camera depth with ties
/// broken by input index.
pub fn rasterize_gaussians(gaussians: &[WorldGaussian], cam: &Camera, settings: &RenderSettings) -> Result<RenderImage> {
    settings.validate()?;
    let mut projected: Vec<(usize, Prepared)> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let s = project_gaussian(g, cam, settings)?;
            Some((i, prepare(s, settings)?))
        })
        .collect();
    projected.sort_by(|a, b| a.1.s.depth.total_cmp(&b.1.s.depth).then(a.0.cmp(&b.0)));

    let (w, h) = (settings.width, settings.height);
    let (tx, ty) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tx * ty];
    for (k, (_, p)) in projected.iter().enumerate() {
        let (x0, x1, y0, y1) = p.bbox;
        for ty_i in y0 / TILE..=(y1 - 1) / TILE {
            for tx_i in x0 / TILE..=(x1 - 1) / TILE {
                bins[ty_i * tx + tx_i].push(k);
            }
        }
    }
    let tiles: Vec<(usize, Vec<[f64; 4]>)> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (bx, by) = ((t % tx) * TILE, (t / tx) * TILE);
            let (bw, bh) = (TILE.min(w - bx), TILE.min(h - by));
            let mut out = Vec::with_capacity(bw * bh);
            for y in by..by + bh {
                for x in bx..bx + bw {
                    out.push(composite_pixel(list.iter().map(|&k| &projected[k].1), x, y, settings));
                }
            }
            (t, out)
        })
        .collect();
    let mut data = vec![[0.0; 4]; w * h];
    for (t, block) in tiles {
        let (bx, by) = ((t % tx) * TILE, (t / tx) * TILE);
        let bw = TILE.min(w - bx);
        for (i, px) in block.into_iter().enumerate() {
            data[(by + i / bw) * w + bx + i % bw] = px;
        }
    }
    Ok(RenderImage::from_data(w, h, data))
}

fn composite_pixel<'a>(list: impl Iterator<Item = &'a Prepared>, x: usize, y: usize, settings: &RenderSettings) -> [f64; 4] {
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for p in list {
        let (x0, x1, y0, y1) = p.bbox;
        if x < x0 || x >= x1 || y < y0 || y >= y1 {
            continue;
        }
        let a = p.s.opacity * falloff(&p.s.center, &p.inv, settings.cutoff_sigma, x as f64, y as f64);
        if a <= 0.0 {
            continue;
        }
        for k in 0..3 {
            c[k] += t * a * p.s.color[k];
        }
        t *= 1.0 - a;
        if t < settings.transmittance_eps {
            break;
        }
    }
    [
        c[0] + t * settings.background[0],
        c[1] + t * settings.background[1],
        c[2] + t * settings.background[2],
        1.0 - t,
    ]
}

pub fn rasterize_splats(frame: &SplatFrame, cam: &Camera, settings: &RenderSettings) -> Result<RenderImage> {
    let gaussians: Vec<WorldGaussian> = frame.splats.iter().map(WorldGaussian::from).collect();
    rasterize_gaussians(&gaussians, cam, settings)
}
