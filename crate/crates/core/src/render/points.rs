use crate::camera::{project_point, Camera};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

use super::image::RenderImage;
use super::splat::RenderSettings;

/// Z-buffered square points followed by a 3×3 median over the depth buffer.
/// Empty pixels count as infinitely far, so the median fills isolated holes
/// and drops isolated speckles; the color is taken from the neighbor that
/// supplied the median depth. Border windows use only in-image neighbors.
pub fn render_pointcloud(cloud: &PointCloud, cam: &Camera, point_size: usize, settings: &RenderSettings) -> Result<RenderImage> {
    settings.validate()?;
    if point_size == 0 {
        return Err(Error::InvalidInput("point size must be at least 1 px".into()));
    }
    let (w, h) = (settings.width, settings.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut cbuf = vec![[0.0; 3]; w * h];
    let half = (point_size as f64 - 1.0) / 2.0;
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        let Ok((u, v, z)) = project_point(p, cam) else {
            continue;
        };
        let x0 = (u - half).round();
        let y0 = (v - half).round();
        for dy in 0..point_size {
            let y = y0 + dy as f64;
            if y < 0.0 || y >= h as f64 {
                continue;
            }
            for dx in 0..point_size {
                let x = x0 + dx as f64;
                if x < 0.0 || x >= w as f64 {
                    continue;
                }
                let i = y as usize * w + x as usize;
                if z < zbuf[i] {
                    zbuf[i] = z;
                    cbuf[i] = *c;
                }
            }
        }
    }
    let bg = settings.background;
    let mut data = vec![[bg[0], bg[1], bg[2], 0.0]; w * h];
    let mut window: Vec<(f64, usize)> = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            window.clear();
            for ny in y as isize - 1..=y as isize + 1 {
                for nx in x as isize - 1..=x as isize + 1 {
                    if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                        let j = ny as usize * w + nx as usize;
                        window.push((zbuf[j], j));
                    }
                }
            }
            window.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (z, j) = window[window.len() / 2];
            if z.is_finite() {
                let c = cbuf[j];
                data[y * w + x] = [c[0], c[1], c[2], 1.0];
            }
        }
    }
    Ok(RenderImage::from_data(w, h, data))
}
