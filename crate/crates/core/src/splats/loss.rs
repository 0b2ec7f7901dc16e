use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{same_dims, GuidanceImage, Mask};

use super::entropy::{soft_histogram_entropy, EntropyParams};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub delta: f64,
    pub window: usize,
    pub entropy: EntropyParams,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            delta: 0.05,
            window: 11,
            entropy: EntropyParams::default(),
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_ssim >= 0.0) {
            return Err(Error::InvalidInput("loss weights must be non-negative".into()));
        }
        if !(self.delta > 0.0) || self.window == 0 {
            return Err(Error::InvalidInput("delta and window must be positive".into()));
        }
        self.entropy.validate()
    }
}

/// Smooth L1 penalty.
pub fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() < delta {
        e * e / (2.0 * delta)
    } else {
        e.abs() - delta / 2.0
    }
}

pub fn huber_grad(e: f64, delta: f64) -> f64 {
    if e.abs() < delta {
        e / delta
    } else {
        e.signum()
    }
}

/// A loss value with its gradient with respect to the rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad: Vec<[f64; 3]>,
}

/// Mean SSIM over every fully contained `window × window` box and all
/// three channels, plus its gradient with respect to `b`.
pub(crate) fn ssim_raw(a: &[[f64; 3]], b: &[[f64; 3]], w: usize, h: usize, window: usize) -> Result<(f64, Vec<[f64; 3]>)> {
    if w < window || h < window {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than the {window}x{window} SSIM window"
        )));
    }
    let (nx, ny) = (w - window + 1, h - window + 1);
    let n = (window * window) as f64;
    // per-window gradient coefficients: d S / d b_p = c0 + cx a_p + cy b_p
    let rows: Vec<(f64, Vec<[[f64; 3]; 3]>)> = (0..ny)
        .into_par_iter()
        .map(|wy| {
            let mut total = 0.0;
            let mut coeffs = Vec::with_capacity(nx);
            for wx in 0..nx {
                let mut cw = [[0.0; 3]; 3];
                for c in 0..3 {
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for y in wy..wy + window {
                        for x in wx..wx + window {
                            sa += a[y * w + x][c];
                            sb += b[y * w + x][c];
                        }
                    }
                    let (mx, my) = (sa / n, sb / n);
                    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                    for y in wy..wy + window {
                        for x in wx..wx + window {
                            let dx = a[y * w + x][c] - mx;
                            let dy = b[y * w + x][c] - my;
                            vx += dx * dx;
                            vy += dy * dy;
                            cxy += dx * dy;
                        }
                    }
                    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
                    let a1 = 2.0 * mx * my + SSIM_C1;
                    let a2 = 2.0 * cxy + SSIM_C2;
                    let b1 = mx * mx + my * my + SSIM_C1;
                    let b2 = vx + vy + SSIM_C2;
                    let s = a1 * a2 / (b1 * b2);
                    total += s;
                    let k = 2.0 / n;
                    let bb = b1 * b2;
                    cw[c] = [
                        k * (mx * a2 / bb - a1 * mx / bb - s * my / b1 + s * my / b2),
                        k * a1 / bb,
                        -k * s / b2,
                    ];
                }
                coeffs.push(cw);
            }
            (total, coeffs)
        })
        .collect();
    let count = (nx * ny * 3) as f64;
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / count;

    // Sum coefficients of all windows covering each pixel via a prefix table.
    let mut table = vec![[[0.0; 3]; 3]; (nx + 1) * (ny + 1)];
    for wy in 0..ny {
        for wx in 0..nx {
            let v = rows[wy].1[wx];
            let mut cell = [[0.0; 3]; 3];
            for c in 0..3 {
                for k in 0..3 {
                    cell[c][k] = v[c][k] + table[wy * (nx + 1) + wx + 1][c][k] + table[(wy + 1) * (nx + 1) + wx][c][k]
                        - table[wy * (nx + 1) + wx][c][k];
                }
            }
            table[(wy + 1) * (nx + 1) + wx + 1] = cell;
        }
    }
    let rect = |x0: usize, y0: usize, x1: usize, y1: usize, c: usize, k: usize| {
        table[y1 * (nx + 1) + x1][c][k] - table[y0 * (nx + 1) + x1][c][k] - table[y1 * (nx + 1) + x0][c][k]
            + table[y0 * (nx + 1) + x0][c][k]
    };
    let mut grad = vec![[0.0; 3]; w * h];
    for y in 0..h {
        let y0 = (y + 1).saturating_sub(window);
        let y1 = (y + 1).min(ny);
        for x in 0..w {
            let x0 = (x + 1).saturating_sub(window);
            let x1 = (x + 1).min(nx);
            let i = y * w + x;
            for c in 0..3 {
                let g = rect(x0, y0, x1, y1, c, 0) + a[i][c] * rect(x0, y0, x1, y1, c, 1) + b[i][c] * rect(x0, y0, x1, y1, c, 2);
                grad[i][c] = g / count;
            }
        }
    }
    Ok((mean, grad))
}

/// Mean structural similarity with uniform 11×11-style box windows.
pub fn ssim(a: &GuidanceImage, b: &GuidanceImage, window: usize) -> Result<f64> {
    same_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    Ok(ssim_raw(a.pixels(), b.pixels(), w, h, window)?.0)
}

pub(crate) fn reconstruction_raw(
    target: &[[f64; 3]],
    rendered: &[[f64; 3]],
    omega: &[bool],
    w: usize,
    h: usize,
    p: &LossParams,
) -> Result<LossWithGrad> {
    p.validate()?;
    let visible = omega.iter().filter(|&&o| o).count();
    if visible == 0 {
        return Err(Error::InvalidInput("reconstruction loss needs a non-empty visible set".into()));
    }
    let norm = (visible * 3) as f64;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; w * h];
    for i in 0..w * h {
        if !omega[i] {
            continue;
        }
        for c in 0..3 {
            let e = target[i][c] - rendered[i][c];
            value += huber(e, p.delta);
            grad[i][c] = -p.lambda_l1 * huber_grad(e, p.delta) / norm;
        }
    }
    value *= p.lambda_l1 / norm;
    if p.lambda_ssim > 0.0 {
        let (s, gs) = ssim_raw(target, rendered, w, h, p.window)?;
        value += p.lambda_ssim * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(&gs) {
            for c in 0..3 {
                g[c] -= p.lambda_ssim * d[c];
            }
        }
    }
    Ok(LossWithGrad { value, grad })
}

/// Huber term averaged over visible pixels and channels plus the SSIM term
/// over the whole image; the gradient is with respect to `rendered`.
pub fn reconstruction_loss(target: &GuidanceImage, rendered: &GuidanceImage, omega: &Mask, p: &LossParams) -> Result<LossWithGrad> {
    same_dims(target.dims(), rendered.dims())?;
    same_dims(target.dims(), omega.dims())?;
    let (w, h) = target.dims();
    reconstruction_raw(target.pixels(), rendered.pixels(), omega.data(), w, h, p)
}

/// Reconstruction loss plus the scale-entropy regularizer.
pub fn total_finetune_loss(
    target: &GuidanceImage,
    rendered: &GuidanceImage,
    omega: &Mask,
    scales: &[[f64; 3]],
    p: &LossParams,
) -> Result<f64> {
    let rec = reconstruction_loss(target, rendered, omega, p)?;
    let ent = soft_histogram_entropy(scales, &p.entropy)?;
    Ok(rec.value + ent.value)
}
