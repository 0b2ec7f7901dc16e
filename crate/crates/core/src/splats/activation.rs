use crate::error::{Error, Result};

/// Bounded, instance-normalized scale parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleActivationParams {
    pub gamma: [f64; 3],
    pub beta: [f64; 3],
    pub s_max: f64,
    pub eps: f64,
}

impl Default for ScaleActivationParams {
    fn default() -> Self {
        ScaleActivationParams {
            gamma: [0.1; 3],
            beta: [0.2; 3],
            s_max: 0.05,
            eps: 1e-6,
        }
    }
}

impl ScaleActivationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidInput("s_max and eps must be positive".into()));
        }
        if !self.gamma.iter().chain(&self.beta).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("affine parameters must be finite".into()));
        }
        Ok(())
    }
}

struct AxisStats {
    mean: f64,
    std: f64,
}

fn axis_stats(t: &[[f64; 3]], a: usize) -> AxisStats {
    let n = t.len() as f64;
    let mean = t.iter().map(|v| v[a]).sum::<f64>() / n;
    let var = t.iter().map(|v| (v[a] - mean).powi(2)).sum::<f64>() / n;
    AxisStats { mean, std: var.sqrt() }
}

fn check(z: &[[f64; 3]], p: &ScaleActivationParams) -> Result<Vec<[f64; 3]>> {
    p.validate()?;
    if z.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "instance statistics need at least 2 splats, got {}",
            z.len()
        )));
    }
    if !z.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("scale pre-activations must be finite".into()));
    }
    Ok(z.iter().map(|v| v.map(f64::tanh)).collect())
}

/// Signed scales `s_max (γ z̄ + β)` with `z̄` the per-axis instance
/// normalization of `tanh(z)`. The exported magnitude is `|s|`.
pub fn scale_activation(z: &[[f64; 3]], p: &ScaleActivationParams) -> Result<Vec<[f64; 3]>> {
    let t = check(z, p)?;
    let mut out = vec![[0.0; 3]; t.len()];
    for a in 0..3 {
        let st = axis_stats(&t, a);
        let d = st.std + p.eps;
        for (o, v) in out.iter_mut().zip(&t) {
            o[a] = p.s_max * (p.gamma[a] * (v[a] - st.mean) / d + p.beta[a]);
        }
    }
    Ok(out)
}

pub fn scale_magnitudes(s: &[[f64; 3]]) -> Vec<[f64; 3]> {
    s.iter().map(|v| v.map(f64::abs)).collect()
}

/// Vector-Jacobian product: gradient with respect to `z` given the gradient
/// with respect to the signed scales.
pub fn scale_activation_vjp(z: &[[f64; 3]], p: &ScaleActivationParams, grad_s: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let t = check(z, p)?;
    if grad_s.len() != z.len() {
        return Err(Error::InvalidInput("gradient length does not match".into()));
    }
    let n = t.len() as f64;
    let mut out = vec![[0.0; 3]; t.len()];
    for a in 0..3 {
        let st = axis_stats(&t, a);
        let d = st.std + p.eps;
        let u: Vec<f64> = grad_s.iter().map(|g| p.s_max * p.gamma[a] * g[a]).collect();
        let u_mean = u.iter().sum::<f64>() / n;
        let uc: f64 = u.iter().zip(&t).map(|(ui, v)| ui * (v[a] - st.mean)).sum();
        let spread = if st.std > 0.0 { uc / (d * d * n * st.std) } else { 0.0 };
        for (i, v) in t.iter().enumerate() {
            let c = v[a] - st.mean;
            let g_hat = (u[i] - u_mean) / d - spread * c;
            out[i][a] = g_hat * (1.0 - v[a] * v[a]);
        }
    }
    Ok(out)
}
