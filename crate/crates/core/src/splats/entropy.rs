use crate::error::{Error, Result};

/// Soft-histogram scale regularizer settings. Bin centers are spaced
/// uniformly on `[0, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyParams {
    pub bins: usize,
    pub sigma_h: f64,
    pub s_max: f64,
    pub h_star: f64,
    pub lambda_ent: f64,
    pub eps: f64,
}

impl Default for EntropyParams {
    fn default() -> Self {
        let bins = 64;
        let s_max = 0.05;
        EntropyParams {
            bins,
            sigma_h: s_max / bins as f64,
            s_max,
            h_star: 0.8 * (bins as f64).ln(),
            lambda_ent: 1e-2,
            eps: 1e-12,
        }
    }
}

impl EntropyParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidInput("entropy histogram needs at least 2 bins".into()));
        }
        if !(self.sigma_h > 0.0 && self.s_max > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidInput("sigma_h, s_max and eps must be positive".into()));
        }
        if !(self.lambda_ent >= 0.0) {
            return Err(Error::InvalidInput("lambda_ent must be non-negative".into()));
        }
        Ok(())
    }

    pub fn bin_center(&self, m: usize) -> f64 {
        self.s_max * m as f64 / (self.bins - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyWithGrad {
    pub value: f64,
    pub axis_entropy: [f64; 3],
    pub grad: Vec<[f64; 3]>,
}

/// Clipped negative entropy of the per-axis soft histograms of `scales`,
/// with its gradient.
pub fn soft_histogram_entropy(scales: &[[f64; 3]], p: &EntropyParams) -> Result<EntropyWithGrad> {
    p.validate()?;
    if scales.is_empty() {
        return Err(Error::InvalidInput("entropy regularizer needs at least one splat".into()));
    }
    if !scales.iter().flatten().all(|s| s.is_finite()) {
        return Err(Error::InvalidInput("scales must be finite".into()));
    }
    let m = p.bins;
    let inv2s2 = 1.0 / (2.0 * p.sigma_h * p.sigma_h);
    let centers: Vec<f64> = (0..m).map(|k| p.bin_center(k)).collect();
    let mut value = 0.0;
    let mut axis_entropy = [0.0; 3];
    let mut grad = vec![[0.0; 3]; scales.len()];
    for a in 0..3 {
        // Kernel values are shifted by the largest log-kernel so the
        // histogram never underflows; p is invariant to that shift.
        let shift = scales
            .iter()
            .flat_map(|s| centers.iter().map(move |b| -(s[a] - b).powi(2) * inv2s2))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut hist = vec![0.0; m];
        for s in scales {
            for (k, b) in centers.iter().enumerate() {
                hist[k] += (-(s[a] - b).powi(2) * inv2s2 - shift).exp();
            }
        }
        let total: f64 = hist.iter().sum();
        let prob: Vec<f64> = hist.iter().map(|h| h / total).collect();
        let entropy: f64 = -prob.iter().map(|q| q * (q + p.eps).ln()).sum::<f64>();
        axis_entropy[a] = entropy;
        if entropy >= p.h_star {
            continue;
        }
        value += p.lambda_ent * (p.h_star - entropy);
        let dh_dp: Vec<f64> = prob.iter().map(|q| -(q + p.eps).ln() - q / (q + p.eps)).collect();
        let mean_dp: f64 = dh_dp.iter().zip(&prob).map(|(d, q)| d * q).sum();
        let dh_dhist: Vec<f64> = dh_dp.iter().map(|d| (d - mean_dp) / total).collect();
        for (g, s) in grad.iter_mut().zip(scales) {
            let mut d = 0.0;
            for (k, b) in centers.iter().enumerate() {
                let e = (-(s[a] - b).powi(2) * inv2s2 - shift).exp();
                d += dh_dhist[k] * -e * (s[a] - b) / (p.sigma_h * p.sigma_h);
            }
            g[a] = -p.lambda_ent * d;
        }
    }
    Ok(EntropyWithGrad {
        value,
        axis_entropy,
        grad,
    })
}
