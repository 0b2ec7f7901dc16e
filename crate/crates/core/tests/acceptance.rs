//! Acceptance suite. Runs as a plain binary and prints one PASS/FAIL line per
//! criterion; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use volcap_core::camera::{Camera, Intrinsics, Pose};
use volcap_core::codec::*;
use volcap_core::depthproc::*;
use volcap_core::pipeline::*;
use volcap_core::pointcloud::*;
use volcap_core::raster::{DepthMap, FlowField, GuidanceImage, Mask};
use volcap_core::render::*;
use volcap_core::splats::*;
use volcap_core::stereo::*;
use volcap_core::synthetic::{render_view, sensor_rig, write_session, Scene, SynthConfig};
use volcap_core::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn random_rotation(r: &mut impl Rng) -> UnitQuaternion<f64> {
    let q = Quaternion::new(normal(r), normal(r), normal(r), normal(r));
    UnitQuaternion::from_quaternion(q)
}

// ---------------------------------------------------------------------------
// bilateral filter

fn random_depth(r: &mut impl Rng, w: usize, h: usize, valid: f64) -> DepthMap {
    let (a, b, c) = (r.random_range(0.8..2.5), r.random_range(-0.02..0.02), r.random_range(-0.02..0.02));
    let (ex, ey) = (r.random_range(0..w), r.random_range(0..h));
    let mut d = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if r.random::<f64>() >= valid {
                continue;
            }
            let step = if x > ex && y > ey { 0.4 } else { 0.0 };
            d.set(x, y, a + b * x as f64 + c * y as f64 + step + 0.01 * normal(r));
        }
    }
    d
}

fn random_guide(r: &mut impl Rng, w: usize, h: usize) -> GuidanceImage {
    let base: [f64; 3] = [r.random(), r.random(), r.random()];
    let px = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let wave = 0.2 * (0.3 * x).sin() * (0.2 * y).cos();
            base.map(|c| (0.6 * c + wave + 0.1 * r.random::<f64>()).clamp(0.0, 1.0))
        })
        .collect();
    GuidanceImage::new(w, h, px).unwrap()
}

fn random_flow(r: &mut impl Rng, w: usize, h: usize) -> FlowField {
    let v = (0..w * h)
        .map(|_| {
            let f: [f64; 2] = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
            // integral components exercise the zero-weight tap rule
            if r.random::<f64>() < 0.2 {
                f.map(f64::round)
            } else {
                f
            }
        })
        .collect();
    FlowField::new(w, h, v).unwrap()
}

fn g(d2: f64, s: f64) -> f64 {
    (-d2 / (2.0 * s * s)).exp()
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

fn oracle_taps(sx: f64, sy: f64) -> Vec<(i64, i64, f64)> {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    vec![
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
}

fn oracle_warp_depth(d: &DepthMap, f: &FlowField) -> Vec<Option<f64>> {
    let (w, h) = d.dims();
    let mut out = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = f.get(x, y);
            let mut acc = 0.0;
            let mut ok = true;
            for (tx, ty, wt) in oracle_taps(x as f64 + v[0], y as f64 + v[1]) {
                if wt == 0.0 {
                    continue;
                }
                let inside = tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h;
                match inside.then(|| d.get(tx as usize, ty as usize)).flatten() {
                    Some(s) => acc += wt * s,
                    None => ok = false,
                }
            }
            out[y * w + x] = ok.then_some(acc);
        }
    }
    out
}

fn oracle_warp_guide(img: &GuidanceImage, f: &FlowField) -> Vec<[f64; 3]> {
    let (w, h) = img.dims();
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = f.get(x, y);
            let mut acc = [0.0; 3];
            for (tx, ty, wt) in oracle_taps(x as f64 + v[0], y as f64 + v[1]) {
                let p = img.get(tx.clamp(0, w as i64 - 1) as usize, ty.clamp(0, h as i64 - 1) as usize);
                for c in 0..3 {
                    acc[c] += wt * p[c];
                }
            }
            out[y * w + x] = acc.map(|c| c.clamp(0.0, 1.0));
        }
    }
    out
}

/// Direct evaluation of the joint bilateral filter, optionally with the
/// temporal term `(warped depth, warped guide)`.
fn oracle_bilateral(
    d: &DepthMap,
    guide: &GuidanceImage,
    p: &BilateralParams,
    temporal: Option<(&[Option<f64>], &[[f64; 3]])>,
) -> Vec<Option<f64>> {
    let (w, h) = d.dims();
    let r = p.radius as i64;
    let mut out = vec![None; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = (y as usize) * w + x as usize;
            let gx = guide.get(x as usize, y as usize);
            let t = temporal.and_then(|(wd, wg)| {
                let dt = wd[i]?;
                (p.lambda_t > 0.0).then(|| (dt, p.lambda_t * g(dist2(wg[i], gx), p.sigma_t)))
            });
            if d.get(x as usize, y as usize).is_none() && t.is_none() {
                continue;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let Some(dy) = d.get(xx as usize, yy as usize) else { continue };
                    let ws = g(((xx - x).pow(2) + (yy - y).pow(2)) as f64, p.sigma_s);
                    let wr = g(dist2(guide.get(xx as usize, yy as usize), gx), p.sigma_r);
                    num += ws * wr * dy;
                    den += ws * wr;
                }
            }
            if let Some((dt, wt)) = t {
                num += wt * dt;
                den += wt;
            }
            if den > 0.0 {
                out[i] = Some(num / den);
            }
        }
    }
    out
}

fn compare_depth(lib: &DepthMap, oracle: &[Option<f64>]) -> Result<f64, String> {
    let (w, _) = lib.dims();
    let mut worst: f64 = 0.0;
    for (i, o) in oracle.iter().enumerate() {
        match (lib.get(i % w, i / w), o) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            (a, b) => return Err(format!("validity differs at pixel {i}: {a:?} vs {b:?}")),
        }
    }
    Ok(worst)
}

fn bilateral_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    let (w, h) = (64, 64);
    let mut worst: f64 = 0.0;
    let mut reduction_exact = true;
    let mut filled = 0usize;
    for k in 0..20 {
        let p = if k == 0 {
            BilateralParams::default()
        } else {
            BilateralParams {
                radius: r.random_range(1..=7),
                sigma_s: r.random_range(1.0..8.0),
                sigma_r: r.random_range(0.05..0.4),
                sigma_t: r.random_range(0.03..0.3),
                lambda_t: r.random_range(0.1..1.5),
            }
        };
        let depth = random_depth(&mut r, w, h, 0.85);
        let guide = random_guide(&mut r, w, h);
        let prev = random_depth(&mut r, w, h, 0.9);
        let prev_guide = random_guide(&mut r, w, h);
        let flow = random_flow(&mut r, w, h);

        let bs = bilateral_spatial(&depth, &guide, &p).map_err(|e| e.to_string())?;
        worst = worst.max(compare_depth(&bs, &oracle_bilateral(&depth, &guide, &p, None))?);

        let wd = oracle_warp_depth(&prev, &flow);
        let wg = oracle_warp_guide(&prev_guide, &flow);
        let bst = bilateral_spatiotemporal(&depth, &guide, &prev, &prev_guide, &flow, &p).map_err(|e| e.to_string())?;
        worst = worst.max(compare_depth(&bst, &oracle_bilateral(&depth, &guide, &p, Some((&wd, &wg))))?);
        filled += bst.valid_count().saturating_sub(bs.valid_count());

        let zero = BilateralParams { lambda_t: 0.0, ..p };
        let a = bilateral_spatial(&depth, &guide, &zero).map_err(|e| e.to_string())?;
        let b = bilateral_spatiotemporal(&depth, &guide, &prev, &prev_guide, &flow, &zero).map_err(|e| e.to_string())?;
        let bits = |m: &DepthMap| -> Vec<Option<u64>> {
            (0..w * h).map(|i| m.get(i % w, i / w).map(f64::to_bits)).collect()
        };
        reduction_exact &= bits(&a) == bits(&b);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-6 && reduction_exact && secs < 30.0 && filled > 0,
        format!(
            "20 instances, max |diff| {worst:.2e} m, lambda_t=0 reduction byte-exact: {reduction_exact}, \
             {filled} holes filled temporally, {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// stereo

fn textured_pair(r: &mut impl Rng, w: usize, h: usize) -> (GuidanceImage, GuidanceImage) {
    let second: Vec<[f64; 3]> = (0..w * h).map(|_| [r.random(), r.random(), r.random()]).collect();
    let (bx0, bx1) = (r.random_range(15..35), r.random_range(50..80));
    let (by0, by1) = (r.random_range(5..15), r.random_range(25..40));
    let (bg, fg) = (r.random_range(1..5) as usize, r.random_range(6..12) as usize);
    let mut first = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = if (bx0..bx1).contains(&x) && (by0..by1).contains(&y) { fg } else { bg };
            first[y * w + x] = if x >= d { second[y * w + x - d] } else { [r.random(), r.random(), r.random()] };
        }
    }
    (
        GuidanceImage::new(w, h, first).unwrap(),
        GuidanceImage::new(w, h, second).unwrap(),
    )
}

fn flipping_identity() -> Outcome {
    let mut r = rng(22);
    let (w, h) = (96, 48);
    let mut valid = 0usize;
    let mut negatives = 0usize;
    for _ in 0..10 {
        let (first, second) = textured_pair(&mut r, w, h);
        let pair = RectifiedPair::new(first.clone(), second.clone(), 500.0, 0.12).unwrap();
        let d = estimate_disparity_blockmatch(&pair, 5, 16).map_err(|e| e.to_string())?;
        let flipped = RectifiedPair::new(flip_image(&first), flip_image(&second), 500.0, 0.12).unwrap();
        let df = estimate_disparity_blockmatch(&flipped, 5, 16).map_err(|e| e.to_string())?;
        if flip_disparity(&d) != df {
            return Err("flipped estimate differs from the mirrored, negated estimate".into());
        }
        valid += d.valid_count();
        negatives += (0..w * h).filter(|&i| df.get(i % w, i / w).is_some_and(|v| v < 0.0)).count();
    }
    let frac = valid as f64 / (10 * w * h) as f64;
    if frac < 0.5 || negatives == 0 {
        return Err(format!("degenerate matcher output: {:.0}% valid", 100.0 * frac));
    }

    let mut worst: f64 = 0.0;
    let mut worst_direct: f64 = 0.0;
    for _ in 0..10 {
        let (f, b) = (r.random_range(200.0..1200.0), r.random_range(0.05..1.0));
        let vals: Vec<f64> = (0..w * h).map(|_| r.random_range(0.5..90.0)).collect();
        let d = DisparityMap::from_values(w, h, vals.clone()).unwrap();
        let depth = disparity_to_depth(&d, f, b).map_err(|e| e.to_string())?;
        let back = depth_to_disparity(&depth, f, b);
        for (i, &v) in vals.iter().enumerate() {
            let z = depth.get(i % w, i / w).ok_or("valid disparity lost")?;
            worst_direct = worst_direct.max((z - f * b / v).abs() / (f * b / v));
            let dv = back.get(i % w, i / w).ok_or("valid depth lost")?;
            worst = worst.max((dv - v).abs() / v);
        }
    }
    ensure(
        worst < 1e-9 && worst_direct < 1e-12,
        format!(
            "identity exact on 10 pairs ({:.0}% valid), depth round trip max rel err {worst:.1e}, fB/d check {worst_direct:.1e}",
            100.0 * frac
        ),
    )
}

// ---------------------------------------------------------------------------
// frame correction

fn frame_correction() -> Outcome {
    let mut r = rng(33);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let q_cg = random_rotation(&mut r);
        let q_wc = random_rotation(&mut r);
        let s = Vector3::new(r.random_range(1e-3..0.5), r.random_range(1e-3..0.5), r.random_range(1e-3..0.5));
        let a = assemble_covariance(&reparameterize_rotation(&q_cg, &q_wc), &s);
        let rw = q_wc.to_rotation_matrix().into_inner();
        let b = world_covariance_from_camera(&assemble_covariance(&q_cg, &s), &rw);
        worst = worst.max((a - b).abs().max());
    }
    if worst >= 1e-12 {
        return Err(format!("max elementwise covariance difference {worst:.2e}"));
    }

    let k = Intrinsics::new(110.0, 110.0, 63.5, 47.5, 128, 96).unwrap();
    let settings = RenderSettings::for_intrinsics(&k);
    let mut float_identical = 0;
    for scene in 0..20 {
        let capture = Pose::look_at(
            Vector3::new(r.random_range(-1.0..1.0), r.random_range(-0.5..0.5), -2.5),
            Vector3::zeros(),
            Vector3::y(),
        )
        .unwrap();
        let q_wc = UnitQuaternion::from_matrix(capture.rotation());
        let view = Camera::new(
            "v",
            k,
            Pose::look_at(Vector3::new(r.random_range(-0.8..0.8), 0.3, -2.8), Vector3::zeros(), Vector3::y()).unwrap(),
        );
        let mut splats = Vec::new();
        let mut gaussians = Vec::new();
        for _ in 0..200 {
            let p_cam = Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.4..0.4), r.random_range(2.0..3.0));
            let mu = capture.rotation() * p_cam + capture.translation();
            let q_cg = random_rotation(&mut r);
            let s = Vector3::new(r.random_range(0.005..0.06), r.random_range(0.005..0.06), r.random_range(0.005..0.06));
            let color = [r.random(), r.random(), r.random()];
            let opacity = r.random_range(0.2..1.0);
            splats.push(GaussianSplat::new(mu, reparameterize_rotation(&q_cg, &q_wc), s, color, opacity).unwrap());
            gaussians.push(WorldGaussian {
                mu,
                cov: world_covariance_from_camera(&assemble_covariance(&q_cg, &s), capture.rotation()),
                color,
                opacity,
            });
        }
        let frame = SplatFrame {
            splats,
            ..Default::default()
        };
        let a = rasterize_splats(&frame, &view, &settings).map_err(|e| e.to_string())?;
        let b = rasterize_gaussians(&gaussians, &view, &settings).map_err(|e| e.to_string())?;
        if a.to_rgba8() != b.to_rgba8() {
            return Err(format!("scene {scene}: 8-bit renders differ"));
        }
        if a.pixels().iter().flatten().map(|v| v.to_bits()).eq(b.pixels().iter().flatten().map(|v| v.to_bits())) {
            float_identical += 1;
        }
    }
    Ok(format!(
        "10^4 instances, max covariance diff {worst:.1e}; 20 renders bit-identical in RGBA8 ({float_identical}/20 also identical in f64)"
    ))
}

// ---------------------------------------------------------------------------
// gradients

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn flat3(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat3(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn random_unit(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| normal(r)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Worst relative error of central differences against `grad`, over three
/// random directions and the coordinates carrying at least 1% of the largest
/// gradient component. Differences at steps `h` and `2h` are combined by
/// Richardson extrapolation so that directions nearly orthogonal to the
/// gradient are not swamped by truncation error.
fn gradient_check(x: &[f64], grad: &[f64], h: f64, coords: usize, r: &mut impl Rng, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let shifted = |dir: &[f64], s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, b)| a + s * b).collect() };
    let central = |dir: &[f64]| -> f64 {
        let d1 = (f(&shifted(dir, h)) - f(&shifted(dir, -h))) / (2.0 * h);
        let d2 = (f(&shifted(dir, 2.0 * h)) - f(&shifted(dir, -2.0 * h))) / (4.0 * h);
        (4.0 * d1 - d2) / 3.0
    };
    for _ in 0..3 {
        let dir = random_unit(r, x.len());
        let fd = central(&dir);
        let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        worst = worst.max(rel(fd, an));
    }
    let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let strong: Vec<usize> = (0..x.len()).filter(|&i| grad[i].abs() >= 0.01 * gmax).collect();
    for _ in 0..coords.min(strong.len()) {
        let i = strong[r.random_range(0..strong.len())];
        let mut e = vec![0.0; x.len()];
        e[i] = 1.0;
        worst = worst.max(rel(central(&e), grad[i]));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut r = rng(44);

    let (w, h) = (16, 16);
    let lp = LossParams::default();
    let mut worst_rec: f64 = 0.0;
    for _ in 0..100 {
        let target: Vec<[f64; 3]> = (0..w * h).map(|_| [0.1, 0.1, 0.1].map(|b: f64| b + 0.8 * r.random::<f64>())).collect();
        let omega = Mask::from_fn(w, h, |_, _| r.random::<f64>() < 0.7);
        // keep every residual at least 2e-3 away from the Huber kink, well beyond the FD steps
        let rendered: Vec<[f64; 3]> = target
            .iter()
            .map(|t| {
                t.map(|tc| loop {
                    let v = tc + r.random_range(-0.09..0.09);
                    if ((v - tc).abs() - lp.delta).abs() > 2e-3 {
                        break v;
                    }
                })
            })
            .collect();
        let tgt = GuidanceImage::new(w, h, target).unwrap();
        let x = flat3(&rendered);
        let eval = |v: &[f64]| -> f64 {
            let img = GuidanceImage::new(w, h, unflat3(v)).unwrap();
            reconstruction_loss(&tgt, &img, &omega, &lp).unwrap().value
        };
        let res = reconstruction_loss(&tgt, &GuidanceImage::new(w, h, rendered).unwrap(), &omega, &lp).map_err(|e| e.to_string())?;
        worst_rec = worst_rec.max(gradient_check(&x, &flat3(&res.grad), 1e-4, 6, &mut r, eval));
    }

    let ep = EntropyParams::default();
    let mut worst_ent: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let n = r.random_range(10..60);
        let centers = [0.0; 3].map(|_: f64| r.random_range(0.15..0.85) * ep.s_max);
        let spread = r.random_range(0.01..0.05) * ep.s_max;
        let scales: Vec<[f64; 3]> = (0..n)
            .map(|_| [0, 1, 2].map(|a| (centers[a] + spread * normal(&mut r)).clamp(1e-3 * ep.s_max, ep.s_max)))
            .collect();
        let res = soft_histogram_entropy(&scales, &ep).map_err(|e| e.to_string())?;
        // stay clear of the clip boundary
        if res.axis_entropy.iter().any(|&hh| (hh - ep.h_star).abs() < 0.05) {
            continue;
        }
        let eval = |v: &[f64]| soft_histogram_entropy(&unflat3(v), &ep).unwrap().value;
        worst_ent = worst_ent.max(gradient_check(&flat3(&scales), &flat3(&res.grad), 1e-5, 8, &mut r, eval));
        done += 1;
    }

    let ap = ScaleActivationParams::default();
    let mut worst_act: f64 = 0.0;
    for _ in 0..100 {
        // two splats normalize to exactly ±1 whatever z is, leaving no gradient to check
        let n = r.random_range(3..40);
        let z: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| 1.5 * normal(&mut r))).collect();
        let up: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| normal(&mut r))).collect();
        let vjp = scale_activation_vjp(&z, &ap, &up).map_err(|e| e.to_string())?;
        let upf = flat3(&up);
        let eval = |v: &[f64]| -> f64 {
            let s = scale_activation(&unflat3(v), &ap).unwrap();
            flat3(&s).iter().zip(&upf).map(|(a, b)| a * b).sum()
        };
        worst_act = worst_act.max(gradient_check(&flat3(&z), &flat3(&vjp), 1e-4, 8, &mut r, eval));
    }

    ensure(
        worst_rec < 1e-4 && worst_ent < 1e-4 && worst_act < 1e-4,
        format!(
            "max rel err over 100 instances each: reconstruction {worst_rec:.1e}, entropy {worst_ent:.1e}, scale activation {worst_act:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// anchors

fn loss_anchors() -> Outcome {
    let h1 = huber(0.1, 0.05);
    let h2 = huber(0.05, 0.05);
    let mut r = rng(55);
    let img = GuidanceImage::new(32, 32, (0..1024).map(|_| [r.random(), r.random(), r.random()]).collect()).unwrap();
    let s = ssim(&img, &img, 11).map_err(|e| e.to_string())?;

    let base = EntropyParams::default();
    let sharp = EntropyParams {
        sigma_h: base.s_max / 640.0,
        ..base
    };
    let mut worst_degenerate: f64 = 0.0;
    for m in [0, 17, 40, 63] {
        let b = sharp.bin_center(m);
        let l = soft_histogram_entropy(&vec![[b; 3]; 100], &sharp).map_err(|e| e.to_string())?.value;
        let expected = sharp.lambda_ent * 3.0 * sharp.h_star;
        worst_degenerate = worst_degenerate.max((l - expected).abs() / expected);
    }
    let coverage: Vec<[f64; 3]> = (0..base.bins)
        .map(|i| [i, (i + 21) % base.bins, (i + 42) % base.bins].map(|m| base.bin_center(m)))
        .collect();
    let uniform = soft_histogram_entropy(&coverage, &base).map_err(|e| e.to_string())?.value;

    ensure(
        (h1 - 0.075).abs() < 1e-15
            && (h2 - 0.025).abs() < 1e-15
            && (s - 1.0).abs() < 1e-12
            && worst_degenerate < 1e-3
            && uniform < 1e-3,
        format!(
            "huber(0.1)={h1}, huber(0.05)={h2}, ssim(x,x)={s}, degenerate rel err {worst_degenerate:.1e} \
             (sigma_h = s_max/640), uniform coverage L={uniform:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// codecs

fn random_frame(r: &mut impl Rng, n: usize) -> SplatFrame {
    let splats = (0..n)
        .map(|_| {
            GaussianSplat::new(
                Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)),
                random_rotation(r),
                Vector3::new(r.random_range(0.0..0.1), r.random_range(0.0..0.1), r.random_range(0.0..0.1)),
                [r.random(), r.random(), r.random()],
                r.random(),
            )
            .unwrap()
        })
        .collect();
    SplatFrame {
        splats,
        source_camera: "cam0".into(),
        frame_index: 0,
    }
}

fn codec_golden() -> Result<(), String> {
    let s = GaussianSplat::new(
        Vector3::new(-1.0, 0.5, 2.0),
        UnitQuaternion::identity(),
        Vector3::new(0.5, 0.25, 1.0),
        [0.0, 1.0, 0.2],
        0.6,
    )
    .unwrap();
    let frames = vec![
        SplatFrame {
            splats: vec![s],
            ..Default::default()
        },
        SplatFrame::default(),
    ];
    let stream = encode_video_splat(&frames).map_err(|e| e.to_string())?;
    let mut golden: Vec<u8> = b"VSPL".to_vec();
    golden.extend([0x01, 0x00, 0x02, 0x00, 0x00, 0x00]); // version 1, two frames
    golden.extend([0x20, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]); // sizes 32, 0
    golden.extend([0x00, 0x00, 0x80, 0xbf, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x40]);
    golden.extend([0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x80, 0x3f]);
    golden.extend([0x00, 0xff, 0x33, 0x99]); // rgba, 0.6 * 255 = 153
    golden.extend([0xff, 0x80, 0x80, 0x80]);
    if stream != golden {
        return Err(format!("video stream bytes differ from fixture: {stream:02x?}"));
    }

    let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)], vec![[1.0, 0.0, 0.5]], "c7").unwrap();
    let mut ply = b"ply\nformat binary_little_endian 1.0\ncomment source_camera c7\nelement vertex 1\n".to_vec();
    for n in ["x", "y", "z"] {
        ply.extend(format!("property float {n}\n").bytes());
    }
    for n in ["red", "green", "blue"] {
        ply.extend(format!("property uchar {n}\n").bytes());
    }
    ply.extend(b"end_header\n");
    ply.extend([0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0xff, 0x00, 0x80]);
    if write_ply_pointcloud(&cloud) != ply {
        return Err("point cloud PLY bytes differ from fixture".into());
    }
    Ok(())
}

fn codec_exactness() -> Outcome {
    let mut r = rng(66);
    for _ in 0..200 {
        let n = r.random_range(0..40);
        let q = quantize_frame(&random_frame(&mut r, n));
        let bytes = encode_splat_frame(&q);
        if bytes.len() != 32 * n {
            return Err("SPLAT frame size is not 32 bytes per splat".into());
        }
        let back = decode_splat_frame(&bytes).map_err(|e| e.to_string())?;
        if back.splats != q.splats || encode_splat_frame(&back) != bytes {
            return Err("SPLAT round trip is not exact on quantized frames".into());
        }
    }
    for _ in 0..100 {
        let f = r.random_range(0..8);
        let frames: Vec<SplatFrame> = (0..f).map(|_| {
            let n = r.random_range(0..12);
            quantize_frame(&random_frame(&mut r, n))
        }).collect();
        let counts: Vec<usize> = frames.iter().map(|fr| fr.splats.len()).collect();
        let bytes = encode_video_splat(&frames).map_err(|e| e.to_string())?;
        let formula = 10 + 4 * f + counts.iter().map(|n| 32 * n).sum::<usize>();
        if bytes.len() != formula || video_splat_size(&counts) != formula as u64 {
            return Err(format!("stream of {f} frames is {} bytes, formula gives {formula}", bytes.len()));
        }
        let back = decode_video_splat(&bytes).map_err(|e| e.to_string())?;
        if back.len() != f || back.iter().zip(&frames).any(|(a, b)| a.splats != b.splats) {
            return Err("video SPLAT round trip is not exact".into());
        }
    }
    for k in 0..50 {
        let n = r.random_range(0..300);
        let positions = (0..n)
            .map(|_| Vector3::new(r.random_range(-3.0f32..3.0), r.random_range(-3.0f32..3.0), r.random_range(0.1f32..5.0)).cast::<f64>())
            .collect();
        let colors = (0..n).map(|_| [0; 3].map(|_| r.random::<u8>() as f64 / 255.0)).collect();
        let mut cloud = PointCloud::new(positions, colors, format!("cam{k}")).unwrap();
        if k % 2 == 0 {
            cloud.normals = Some(
                (0..n)
                    .map(|i| (i % 5 != 0).then(|| Vector3::from_iterator(random_unit(&mut r, 3)).cast::<f32>().cast::<f64>()))
                    .collect(),
            );
        }
        let bytes = write_ply_pointcloud(&cloud);
        let back = read_ply_pointcloud(&bytes).map_err(|e| e.to_string())?;
        if back != cloud {
            return Err("point cloud PLY round trip is not exact".into());
        }
    }
    for _ in 0..50 {
        let n = r.random_range(0..50);
        let once = read_ply_gaussian(&write_ply_gaussian(&random_frame(&mut r, n))).map_err(|e| e.to_string())?;
        let bytes = write_ply_gaussian(&once);
        let twice = read_ply_gaussian(&bytes).map_err(|e| e.to_string())?;
        if write_ply_gaussian(&twice) != bytes || twice != once {
            return Err("Gaussian PLY round trip is not exact after one quantization".into());
        }
    }
    codec_golden()?;

    // header fuzz: every single-byte change inside the header or size table
    // must be rejected, and nothing may panic
    let streams: Vec<Vec<u8>> = (0..16)
        .map(|i| {
            let frames: Vec<SplatFrame> = (0..i % 6).map(|_| {
                let n = r.random_range(0..5);
                random_frame(&mut r, n)
            }).collect();
            encode_video_splat(&frames).unwrap()
        })
        .collect();
    let mut accepted = 0usize;
    let mut panics = 0usize;
    let mut truncations_accepted = 0usize;
    for _ in 0..100_000 {
        let base = &streams[r.random_range(0..streams.len())];
        let frames = u32::from_le_bytes([base[6], base[7], base[8], base[9]]) as usize;
        let header = 10 + 4 * frames;
        let mut b = base.clone();
        let at = r.random_range(0..header);
        let old = b[at];
        while b[at] == old {
            b[at] = r.random();
        }
        match catch_unwind(|| (decode_video_splat(&b).is_ok(), video_splat_index(&b).is_ok())) {
            Ok((x, y)) => accepted += (x || y) as usize,
            Err(_) => panics += 1,
        }
        let cut = r.random_range(0..base.len());
        match catch_unwind(|| decode_video_splat(&base[..cut]).is_ok()) {
            Ok(ok) => truncations_accepted += ok as usize,
            Err(_) => panics += 1,
        }
    }
    ensure(
        accepted == 0 && panics == 0 && truncations_accepted == 0,
        format!(
            "round trips exact (SPLAT, stream, point and Gaussian PLY), size formula exact, golden fixtures match, \
             header fuzz 10^5: {accepted} accepted, {panics} panics, {truncations_accepted} truncations accepted"
        ),
    )
}

// ---------------------------------------------------------------------------
// radius filter

fn radius_filter() -> Outcome {
    let mut r = rng(77);
    let params = RadiusFilterParams {
        radius: 0.2,
        min_neighbors: 30,
    };
    let mut lib_time = Duration::ZERO;
    let mut kept = 0usize;
    for _ in 0..20 {
        let blobs: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(1.0..3.0)))
            .collect();
        let positions: Vec<Vector3<f64>> = (0..5000)
            .map(|i| {
                if i % 5 < 3 {
                    let c = blobs[r.random_range(0..5)];
                    c + Vector3::new(normal(&mut r), normal(&mut r), normal(&mut r)) * 0.15
                } else {
                    Vector3::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(0.5..3.5))
                }
            })
            .collect();
        let cloud = PointCloud::new(positions.clone(), vec![[0.5; 3]; 5000], "c").unwrap();
        let t = Instant::now();
        let out = radius_outlier_filter(&cloud, &params).map_err(|e| e.to_string())?;
        lib_time += t.elapsed();
        let expected: Vec<Vector3<f64>> = positions
            .iter()
            .filter(|p| positions.iter().filter(|q| (*p - *q).norm_squared() < 0.04).count() >= 30)
            .copied()
            .collect();
        if out.positions != expected {
            return Err(format!("keep set differs: {} kept vs {} by brute force", out.len(), expected.len()));
        }
        kept += expected.len();
    }
    let secs = lib_time.as_secs_f64();
    ensure(
        secs < 10.0,
        format!("20 clouds of 5000 points identical to brute force ({kept} kept in total), filter time {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// normals

fn normals_on_plane() -> Outcome {
    let mut r = rng(88);
    let n_true = Vector3::new(0.3, -0.2, 1.0).normalize();
    let u = n_true.cross(&Vector3::x()).normalize();
    let v = n_true.cross(&u);
    let origin = Vector3::new(0.0, 0.0, 2.5);
    let mut pts = Vec::new();
    for i in 0..120 {
        for j in 0..120 {
            let (a, b) = (-0.6 + 0.01 * i as f64, -0.6 + 0.01 * j as f64);
            let jitter = Vector3::new(normal(&mut r), normal(&mut r), normal(&mut r)) * 0.001;
            pts.push(origin + u * (a + 0.003 * normal(&mut r)) + v * (b + 0.003 * normal(&mut r)) + jitter);
        }
    }
    let n = pts.len();
    let viewpoint = Vector3::zeros();
    let cloud = PointCloud::new(pts, vec![[1.0; 3]; n], "c").unwrap();
    let out = estimate_normals(&cloud, &NormalParams::default(), &viewpoint).map_err(|e| e.to_string())?;
    let normals = out.normals.ok_or("no normals")?;
    let mut sum_angle = 0.0;
    let mut count = 0usize;
    let mut misoriented = 0usize;
    for (p, nrm) in out.positions.iter().zip(&normals) {
        let Some(nrm) = nrm else { continue };
        sum_angle += nrm.dot(&n_true).abs().min(1.0).acos();
        count += 1;
        if nrm.dot(&(viewpoint - p)) < 0.0 {
            misoriented += 1;
        }
    }
    let mean_deg = (sum_angle / count as f64).to_degrees();
    ensure(
        count == n && mean_deg < 2.0 && misoriented == 0,
        format!("{count}/{n} normals, mean angular error {mean_deg:.3} deg, {misoriented} facing away from the viewpoint"),
    )
}

// ---------------------------------------------------------------------------
// rasterizer

struct OracleSplat {
    center: Vector2<f64>,
    inv: Matrix2<f64>,
    depth: f64,
    color: [f64; 3],
    opacity: f64,
}

fn oracle_project(s: &GaussianSplat, pose: &Pose, k: &Intrinsics) -> OracleSplat {
    let rv = pose.rotation().transpose();
    let p = rv * (s.mu - pose.translation());
    let jac = Matrix2x3::new(
        k.fx / p.z,
        0.0,
        -k.fx * p.x / (p.z * p.z),
        0.0,
        k.fy / p.z,
        -k.fy * p.y / (p.z * p.z),
    );
    let r = s.rot.to_rotation_matrix().into_inner();
    let sigma = r * Matrix3::from_diagonal(&s.scales.component_mul(&s.scales)) * r.transpose();
    let lambda = jac * rv * sigma * rv.transpose() * jac.transpose() + Matrix2::identity() * 0.3;
    OracleSplat {
        center: Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
        inv: lambda.try_inverse().unwrap(),
        depth: p.z,
        color: s.color,
        opacity: s.opacity,
    }
}

fn oracle_composite(splats: &[OracleSplat], x: usize, y: usize) -> [f64; 4] {
    let mut order: Vec<&OracleSplat> = splats.iter().collect();
    order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for s in order {
        let d = Vector2::new(x as f64, y as f64) - s.center;
        let m = (d.transpose() * s.inv * d)[(0, 0)];
        let a = if m <= 9.0 { s.opacity * (-0.5 * m).exp() } else { 0.0 };
        for k in 0..3 {
            c[k] += t * a * s.color[k];
        }
        t *= 1.0 - a;
    }
    [c[0], c[1], c[2], 1.0 - t]
}

fn random_visible_splat(r: &mut impl Rng, depth: f64) -> GaussianSplat {
    GaussianSplat::new(
        Vector3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), depth),
        random_rotation(r),
        Vector3::new(r.random_range(0.01..0.08), r.random_range(0.01..0.08), r.random_range(0.01..0.08)),
        [r.random(), r.random(), r.random()],
        r.random_range(0.3..0.95),
    )
    .unwrap()
}

fn rasterizer() -> Outcome {
    let mut r = rng(99);
    let k = Intrinsics::new(90.0, 85.0, 31.5, 29.5, 64, 60).unwrap();
    let settings = RenderSettings::for_intrinsics(&k);
    let mut worst: f64 = 0.0;
    for n in [1usize, 2] {
        for _ in 0..20 {
            let pose = Pose::from_rotation(
                Rotation3::from_euler_angles(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.5..0.5)),
                Vector3::new(r.random_range(-0.02..0.02), r.random_range(-0.02..0.02), 0.0),
            );
            let cam = Camera::new("v", k, pose);
            let splats: Vec<GaussianSplat> = (0..n)
                .map(|i| {
                    let z = 1.5 + 0.4 * i as f64 + r.random_range(0.0..0.2);
                    random_visible_splat(&mut r, z)
                })
                .collect();
            let frame = SplatFrame {
                splats: splats.clone(),
                ..Default::default()
            };
            let img = rasterize_splats(&frame, &cam, &settings).map_err(|e| e.to_string())?;
            let oracle: Vec<OracleSplat> = splats.iter().map(|s| oracle_project(s, &pose, &k)).collect();
            for y in 0..k.height {
                for x in 0..k.width {
                    let want = oracle_composite(&oracle, x, y);
                    let got = img.get(x, y);
                    for c in 0..4 {
                        worst = worst.max((want[c] - got[c]).abs());
                    }
                }
            }
        }
    }
    if worst > 1.0 / 255.0 {
        return Err(format!("analytic composite differs by {worst:.2e}"));
    }

    let cam = Camera::new("v", k, Pose::identity());
    let mut frame = SplatFrame {
        splats: (0..300)
            .map(|_| {
                let z = r.random_range(1.0..4.0);
                random_visible_splat(&mut r, z)
            })
            .collect(),
        ..Default::default()
    };
    let reference = rasterize_splats(&frame, &cam, &settings).map_err(|e| e.to_string())?;
    for _ in 0..5 {
        frame.splats.shuffle(&mut r);
        let img = rasterize_splats(&frame, &cam, &settings).map_err(|e| e.to_string())?;
        if img != reference {
            return Err("output depends on splat order".into());
        }
    }

    let holes = plane_holes()?;
    ensure(
        holes < 0.01,
        format!(
            "1- and 2-splat composites within {worst:.1e} of the analytic value, permutation invariant, \
             plane point render holes {:.3}%",
            100.0 * holes
        ),
    )
}

/// Fraction of empty pixels where a virtual view of a tilted plane should be
/// covered by the points of a 640×576 depth camera.
fn plane_holes() -> Result<f64, String> {
    let src_k = Intrinsics::new(504.0, 504.0, 319.5, 287.5, 640, 576).unwrap();
    let src = Camera::new("src", src_k, Pose::identity());
    // plane z (1 - 0.18 y/z) = 2.45, i.e. z = 2.45 + 0.18 y
    let depth_at = |xn: f64, yn: f64| -> f64 {
        let _ = xn;
        2.45 / (1.0 - 0.18 * yn)
    };
    let (w, h) = (src_k.width, src_k.height);
    let mut depth = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let z = depth_at((x as f64 - src_k.cx) / src_k.fx, (y as f64 - src_k.cy) / src_k.fy);
            if (2.2..=2.7).contains(&z) {
                depth.set(x, y, z);
            }
        }
    }
    let color = GuidanceImage::filled(w, h, [0.7, 0.5, 0.3]);
    let cloud = reconstruct_pointcloud(&depth, &color, &Mask::filled(w, h, true), &src).map_err(|e| e.to_string())?;

    let vk = Intrinsics::new(800.0, 800.0, 511.5, 511.5, 1024, 1024).unwrap();
    let eye = Vector3::new(0.15, -0.1, 0.0);
    let view = Camera::new("view", vk, Pose::look_at(eye, Vector3::new(0.0, 0.0, 2.45), Vector3::new(0.0, -1.0, 0.0)).unwrap());
    let img = render_pointcloud(&cloud, &view, 2, &RenderSettings::for_intrinsics(&vk)).map_err(|e| e.to_string())?;

    // expected coverage: view rays that hit the plane inside the source
    // camera's valid region, at least 3 source pixels from its border
    let n_plane = Vector3::new(0.0, -0.18, 1.0);
    let inside = |x: usize, y: usize| -> bool {
        let ray_cam = Vector3::new((x as f64 - vk.cx) / vk.fx, (y as f64 - vk.cy) / vk.fy, 1.0);
        let ray = view.pose.rotation() * ray_cam;
        let t = (2.45 - n_plane.dot(&eye)) / n_plane.dot(&ray);
        if t <= 0.0 {
            return false;
        }
        let p = eye + ray * t;
        let (u, v) = (src_k.fx * p.x / p.z + src_k.cx, src_k.fy * p.y / p.z + src_k.cy);
        let m = 3.0;
        if !(u >= m && v >= m && u <= w as f64 - 1.0 - m && v <= h as f64 - 1.0 - m) {
            return false;
        }
        [(-m, 0.0), (m, 0.0), (0.0, -m), (0.0, m)].iter().all(|(du, dv)| {
            let z = depth_at((u + du - src_k.cx) / src_k.fx, (v + dv - src_k.cy) / src_k.fy);
            (2.2..=2.7).contains(&z)
        })
    };
    let mut expected = 0usize;
    let mut holes = 0usize;
    for y in 0..vk.height {
        for x in 0..vk.width {
            if inside(x, y) {
                expected += 1;
                if img.get(x, y)[3] == 0.0 {
                    holes += 1;
                }
            }
        }
    }
    if expected < 100_000 {
        return Err(format!("plane covers only {expected} view pixels"));
    }
    Ok(holes as f64 / expected as f64)
}

// ---------------------------------------------------------------------------
// pipeline

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn opts(workers: usize) -> ExecOptions {
    ExecOptions {
        backoff: Duration::from_millis(1),
        ..ExecOptions::with_workers(workers)
    }
}

/// Fails the first attempt of every `every`-th scheduled task.
struct Flaky {
    every: usize,
    seen: AtomicUsize,
    injected: AtomicUsize,
}

impl FaultInjector for Flaky {
    fn before_attempt(&self, _node: &TaskNode, attempt: u32) -> volcap_core::Result<()> {
        if attempt == 0 && self.seen.fetch_add(1, Ordering::Relaxed).is_multiple_of(self.every) {
            self.injected.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Task("transient".into()));
        }
        Ok(())
    }
}

fn gate(dir: &Path, name: &str, cfg: SynthConfig) -> Result<bool, String> {
    let s = Session::load(&write_session(&dir.join(name), &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let p = PipelineParams::default();
    Ok(matches!(gate_session(&s.manifest, &p.sync, &p.gate), GateDecision::Accept))
}

/// Online-path frame rate at 640×576 for one camera: outlier removal,
/// edge erosion, spatial filtering, back-projection, radius filtering and
/// normals.
fn online_fps() -> Result<f64, String> {
    let rig = sensor_rig(1, 640, 576).map_err(|e| e.to_string())?;
    let cam = &rig.cameras()[0];
    let scene = Scene { radius: 0.9 };
    let p = PipelineParams::default();
    let views: Vec<_> = (0..5).map(|f| render_view(&scene, cam, f)).collect();
    let start = Instant::now();
    for v in &views {
        let (d, _) = quantile_outlier_removal(&v.depth, &v.mask, p.quantile).map_err(|e| e.to_string())?;
        let d = erode_mask_edges(&d, &v.mask, &p.erosion).map_err(|e| e.to_string())?;
        let d = bilateral_spatial(&d, &v.color, &p.bilateral).map_err(|e| e.to_string())?;
        let c = reconstruct_pointcloud(&d, &v.color, &v.mask, cam).map_err(|e| e.to_string())?;
        let c = radius_outlier_filter(&c, &p.radius_filter).map_err(|e| e.to_string())?;
        estimate_normals(&c, &p.normals, &cam.center()).map_err(|e| e.to_string())?;
    }
    Ok(views.len() as f64 / start.elapsed().as_secs_f64())
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        cameras: 6,
        frames: 100,
        jitter_us: 2000,
        ..Default::default()
    };
    let session = Session::load(&write_session(&dir.path().join("session"), &cfg).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let params = PipelineParams::default();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let t = Instant::now();
    let ra = run_pipeline(&session, &params, &a, &opts(2)).map_err(|e| e.to_string())?;
    let run_secs = t.elapsed().as_secs_f64();
    run_pipeline(&session, &params, &b, &opts(16)).map_err(|e| e.to_string())?;
    let flaky = Arc::new(Flaky {
        every: 7,
        seen: AtomicUsize::new(0),
        injected: AtomicUsize::new(0),
    });
    let mut fo = opts(4);
    fo.injector = Some(flaky.clone());
    let rc = run_pipeline(&session, &params, &c, &fo).map_err(|e| e.to_string())?;
    if !ra.succeeded() || !rc.succeeded() {
        return Err("a run did not complete".into());
    }
    let ta = tree(&a.join(ARTIFACT_DIR));
    if ta != tree(&b.join(ARTIFACT_DIR)) || ta != tree(&c.join(ARTIFACT_DIR)) {
        return Err("artifact trees differ between runs".into());
    }
    let again = run_pipeline(&session, &params, &a, &opts(2)).map_err(|e| e.to_string())?;
    let cached = again.count(TaskStatus::Cached);
    if cached != again.tasks.len() || tree(&a.join(ARTIFACT_DIR)) != ta {
        return Err(format!("re-run recomputed {} of {} tasks", again.tasks.len() - cached, again.tasks.len()));
    }

    let small = |offsets: Vec<i64>, spike: Option<(usize, f64)>| SynthConfig {
        cameras: 3,
        frames: 4,
        offsets_us: offsets,
        imu_spike: spike,
        ..Default::default()
    };
    let drift_rejected = !gate(dir.path(), "drift", small(vec![0, 10_000, -10_000], None))?;
    let limit_accepted = gate(dir.path(), "limit", small(vec![0, 8_500, -8_500], None))?;
    let spike_rejected = !gate(dir.path(), "spike", small(vec![], Some((2, 0.2))))?;
    let clean_accepted = gate(dir.path(), "clean", small(vec![], None))?;
    if !(drift_rejected && limit_accepted && spike_rejected && clean_accepted) {
        return Err(format!(
            "gate: 20 ms drift rejected {drift_rejected}, 17 ms accepted {limit_accepted}, \
             0.2 rad/s^2 spike rejected {spike_rejected}, clean accepted {clean_accepted}"
        ));
    }

    let fps = online_fps()?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let soft = if threads >= 8 {
        format!("{fps:.1} FPS on {threads} threads ({})", if fps >= 5.0 { "meets 5 FPS" } else { "below 5 FPS" })
    } else {
        format!(
            "{fps:.1} FPS on {threads} hardware thread(s); the 8-thread 5 FPS check is not assessable here"
        )
    };
    Ok(format!(
        "6x100 session, {} tasks identical with 2/16 workers and {} injected failures, re-run all cached, \
         gate rejects 20 ms drift and 0.2 rad/s^2 spike, first run {run_secs:.1} s; soft: {soft}",
        ra.tasks.len(),
        flaky.injected.load(Ordering::Relaxed)
    ))
}

fn stereo_cloud_count() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        cameras: 6,
        frames: 3,
        width: 96,
        height: 72,
        source: DepthSource::Stereo,
        ..Default::default()
    };
    let session = Session::load(&write_session(&dir.path().join("session"), &cfg).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let report = run_pipeline(&session, &PipelineParams::default(), &out, &opts(2)).map_err(|e| e.to_string())?;
    if !report.succeeded() {
        return Err("stereo run did not complete".into());
    }
    let mut counts = Vec::new();
    for k in 0..report.clusters {
        let d = out.join(ARTIFACT_DIR).join("clouds").join(format!("{k:05}"));
        let n = std::fs::read_dir(&d)
            .map_err(|e| format!("{}: {e}", d.display()))?
            .filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "ply")))
            .count();
        counts.push(n);
    }
    ensure(
        !counts.is_empty() && counts.iter().all(|&n| n == 10),
        format!("clouds per frame {counts:?} for 6 cameras"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("bilateral filter matches direct evaluation", bilateral_oracle),
        ("stereo flipping identity and depth round trip", flipping_identity),
        ("frame-correction covariance algebra and render invariance", frame_correction),
        ("analytic gradients match finite differences", gradient_checks),
        ("loss anchors", loss_anchors),
        ("codec exactness and header fuzz", codec_exactness),
        ("radius outlier filter matches brute force", radius_filter),
        ("normals on a noisy plane", normals_on_plane),
        ("rasterizer composites, permutation invariance, point render holes", rasterizer),
        ("pipeline determinism, sync gate and cached re-run", pipeline_determinism),
        ("stereo pipeline cloud count", stereo_cloud_count),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
