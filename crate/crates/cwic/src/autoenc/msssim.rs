//! Multi-scale structural similarity distortion with an analytic gradient.
//!
//! The score compares local luminance, contrast and structure statistics
//! under an 11x11 Gaussian window, then repeats the comparison on dyadically
//! downsampled copies of both images.  Contrast-structure terms enter at
//! every scale, the luminance term only at the coarsest one, and the scale
//! exponents are the standard five-scale values renormalized over however
//! many scales fit the image.  The reported loss is `100 * (1 - score)`.

use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// Scale count used when none is configured explicitly.
pub const DEFAULT_MS_SSIM_SCALES: usize = 3;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Stabilizers for a unit dynamic range.
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;
/// Standard five-scale exponents; shorter runs use a renormalized prefix.
const STANDARD_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// `100 * (1 - score)` for the given scale count.
pub fn ms_ssim_loss(xhat: &FeatureCuboid, x: &FeatureCuboid, scales: usize) -> Result<f64> {
    Ok(evaluate(xhat, x, scales, false)?.0)
}

/// Loss together with its gradient with respect to the reconstruction.
pub fn ms_ssim_loss_backward(
    xhat: &FeatureCuboid,
    x: &FeatureCuboid,
    scales: usize,
) -> Result<(f64, FeatureCuboid)> {
    let (loss, grad) = evaluate(xhat, x, scales, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn scale_weights(scales: usize) -> Result<Vec<f64>> {
    if scales == 0 || scales > STANDARD_WEIGHTS.len() {
        return Err(Error::config(format!(
            "similarity scale count must be between 1 and {}, got {scales}",
            STANDARD_WEIGHTS.len()
        )));
    }
    let prefix = &STANDARD_WEIGHTS[..scales];
    let sum: f64 = prefix.iter().sum();
    Ok(prefix.iter().map(|w| w / sum).collect())
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    for a in 0..WINDOW {
        for b in 0..WINDOW {
            let da = a as f64 - c;
            let db = b as f64 - c;
            w.push((-(da * da + db * db) / (2.0 * SIGMA * SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// 2x2 mean pooling; a trailing odd row or column is dropped.
fn half(img: &FeatureCuboid) -> FeatureCuboid {
    let (c, h, w) = img.shape();
    let (nh, nw) = (h / 2, w / 2);
    let mut out = FeatureCuboid::zeros(c, nh, nw);
    for k in 0..c {
        for i in 0..nh {
            for j in 0..nw {
                let s = img.get(k, 2 * i, 2 * j)
                    + img.get(k, 2 * i + 1, 2 * j)
                    + img.get(k, 2 * i, 2 * j + 1)
                    + img.get(k, 2 * i + 1, 2 * j + 1);
                out.set(k, i, j, 0.25 * s);
            }
        }
    }
    out
}

/// Adjoint of [`half`] back onto a `height` x `width` plane.
fn half_backward(grad: &FeatureCuboid, height: usize, width: usize) -> FeatureCuboid {
    let (c, nh, nw) = grad.shape();
    let mut out = FeatureCuboid::zeros(c, height, width);
    for k in 0..c {
        for i in 0..nh {
            for j in 0..nw {
                let g = 0.25 * grad.get(k, i, j);
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let idx = out.idx(k, 2 * i + di, 2 * j + dj);
                    out.as_mut_slice()[idx] += g;
                }
            }
        }
    }
    out
}

/// Per-position statistics of one pyramid level, kept for the backward pass.
struct ScaleStats {
    valid_h: usize,
    valid_w: usize,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    /// Contrast-structure map value.
    cs: Vec<f64>,
    /// Its denominator, var_x + var_y + C2.
    cs_denom: Vec<f64>,
    /// Luminance map value.
    lum: Vec<f64>,
    /// Its denominator, mu_x^2 + mu_y^2 + C1.
    lum_denom: Vec<f64>,
    cs_mean: f64,
    lum_mean: f64,
}

fn scale_stats(x: &FeatureCuboid, y: &FeatureCuboid, window: &[f64]) -> ScaleStats {
    let (channels, h, w) = x.shape();
    let valid_h = h - WINDOW + 1;
    let valid_w = w - WINDOW + 1;
    let count = channels * valid_h * valid_w;
    let mut stats = ScaleStats {
        valid_h,
        valid_w,
        mu_x: Vec::with_capacity(count),
        mu_y: Vec::with_capacity(count),
        cs: Vec::with_capacity(count),
        cs_denom: Vec::with_capacity(count),
        lum: Vec::with_capacity(count),
        lum_denom: Vec::with_capacity(count),
        cs_mean: 0.0,
        lum_mean: 0.0,
    };
    for k in 0..channels {
        for i in 0..valid_h {
            for j in 0..valid_w {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut sxx = 0.0;
                let mut syy = 0.0;
                let mut sxy = 0.0;
                for a in 0..WINDOW {
                    for b in 0..WINDOW {
                        let g = window[a * WINDOW + b];
                        let xv = x.get(k, i + a, j + b);
                        let yv = y.get(k, i + a, j + b);
                        mx += g * xv;
                        my += g * yv;
                        sxx += g * xv * xv;
                        syy += g * yv * yv;
                        sxy += g * xv * yv;
                    }
                }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                let lum_denom = mx * mx + my * my + C1;
                let lum = (2.0 * mx * my + C1) / lum_denom;
                let cs_denom = sxx + syy + C2;
                let cs = (2.0 * sxy + C2) / cs_denom;
                stats.mu_x.push(mx);
                stats.mu_y.push(my);
                stats.cs.push(cs);
                stats.cs_denom.push(cs_denom);
                stats.lum.push(lum);
                stats.lum_denom.push(lum_denom);
                stats.cs_mean += cs;
                stats.lum_mean += lum;
            }
        }
    }
    stats.cs_mean /= count as f64;
    stats.lum_mean /= count as f64;
    stats
}

/// Gradient of `u_cs * cs_mean + u_lum * lum_mean` with respect to this
/// level of the reconstruction pyramid.
fn scale_backward(
    x: &FeatureCuboid,
    y: &FeatureCuboid,
    stats: &ScaleStats,
    window: &[f64],
    u_cs: f64,
    u_lum: f64,
) -> FeatureCuboid {
    let (channels, h, w) = x.shape();
    let mut grad = FeatureCuboid::zeros(channels, h, w);
    let per = 1.0 / (channels * stats.valid_h * stats.valid_w) as f64;
    let mut pos = 0;
    for k in 0..channels {
        for i in 0..stats.valid_h {
            for j in 0..stats.valid_w {
                let mx = stats.mu_x[pos];
                let my = stats.mu_y[pos];
                let cs = stats.cs[pos];
                let cs_denom = stats.cs_denom[pos];
                let lum_term =
                    u_lum * per * 2.0 * (my - stats.lum[pos] * mx) / stats.lum_denom[pos];
                let cs_scale = u_cs * per * 2.0 / cs_denom;
                pos += 1;
                for a in 0..WINDOW {
                    for b in 0..WINDOW {
                        let g = window[a * WINDOW + b];
                        let xv = x.get(k, i + a, j + b);
                        let yv = y.get(k, i + a, j + b);
                        let d = g * (cs_scale * ((yv - my) - cs * (xv - mx)) + lum_term);
                        let idx = grad.idx(k, i + a, j + b);
                        grad.as_mut_slice()[idx] += d;
                    }
                }
            }
        }
    }
    grad
}

fn evaluate(
    xhat: &FeatureCuboid,
    x: &FeatureCuboid,
    scales: usize,
    want_grad: bool,
) -> Result<(f64, Option<FeatureCuboid>)> {
    if xhat.shape() != x.shape() {
        return Err(Error::config(format!(
            "image shapes differ: {:?} vs {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let weights = scale_weights(scales)?;
    let window = gaussian_window();
    let (_, full_h, full_w) = x.shape();

    let mut xs = vec![xhat.clone()];
    let mut ys = vec![x.clone()];
    let mut stats = Vec::with_capacity(scales);
    for s in 0..scales {
        let (_, h, w) = xs[s].shape();
        if h < WINDOW || w < WINDOW {
            return Err(Error::config(format!(
                "image {full_h}x{full_w} is too small for {scales} similarity scales \
                 (scale {} is {h}x{w}, needs at least {WINDOW}x{WINDOW}); \
                 reduce the scale count",
                s + 1
            )));
        }
        stats.push(scale_stats(&xs[s], &ys[s], &window));
        if s + 1 < scales {
            xs.push(half(&xs[s]));
            ys.push(half(&ys[s]));
        }
    }

    // Product of clamped factors: cs at every scale, luminance at the last.
    let mut factors: Vec<(f64, f64)> = stats
        .iter()
        .zip(&weights)
        .map(|(st, &e)| (st.cs_mean.max(0.0), e))
        .collect();
    factors.push((stats[scales - 1].lum_mean.max(0.0), weights[scales - 1]));
    let score: f64 = factors.iter().map(|&(v, e)| v.powf(e)).product();
    let loss = 100.0 * (1.0 - score);
    if !want_grad {
        return Ok((loss, None));
    }

    // d loss / d factor_j = -100 * e_j * score / factor_j while every factor
    // stays positive; a clamped factor zeroes the product and gets the flat
    // branch of the clamp, so the whole gradient vanishes.
    let all_positive = factors.iter().all(|&(v, _)| v > 0.0);
    let upstream = |value: f64, exp: f64| {
        if all_positive {
            -100.0 * exp * score / value
        } else {
            0.0
        }
    };

    let mut acc: Option<FeatureCuboid> = None;
    for s in (0..scales).rev() {
        let u_cs = upstream(factors[s].0, factors[s].1);
        let u_lum = if s + 1 == scales {
            upstream(factors[scales].0, factors[scales].1)
        } else {
            0.0
        };
        let mut g = scale_backward(&xs[s], &ys[s], &stats[s], &window, u_cs, u_lum);
        if let Some(upper) = acc {
            let (_, h, w) = xs[s].shape();
            let spread = half_backward(&upper, h, w);
            for (gv, sv) in g.as_mut_slice().iter_mut().zip(spread.as_slice()) {
                *gv += sv;
            }
        }
        acc = Some(g);
    }
    Ok((loss, acc))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FeatureCuboid {
        let values = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        FeatureCuboid::from_vec(3, h, w, values).unwrap()
    }

    #[test]
    fn identical_images_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let x = random_image(&mut rng, 48, 48);
        let loss = ms_ssim_loss(&x, &x, DEFAULT_MS_SSIM_SCALES).unwrap();
        assert!(loss.abs() < 1e-9, "self-similarity loss {loss}");
    }

    #[test]
    fn constant_equal_means_single_scale_is_zero() {
        let a = FeatureCuboid::zeros(3, 16, 16).map(|_| 0.4);
        let b = FeatureCuboid::zeros(3, 16, 16).map(|_| 0.4);
        let loss = ms_ssim_loss(&a, &b, 1).unwrap();
        assert!(loss.abs() < 1e-12, "degenerate constant case gave {loss}");
    }

    #[test]
    fn loss_stays_in_declared_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..5 {
            let x = random_image(&mut rng, 48, 48);
            let y = random_image(&mut rng, 48, 48);
            let loss = ms_ssim_loss(&x, &y, DEFAULT_MS_SSIM_SCALES).unwrap();
            assert!((0.0..=200.0).contains(&loss), "loss {loss} out of range");
        }
    }

    #[test]
    fn heavier_noise_scores_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let x = random_image(&mut rng, 48, 48);
        let noise: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let perturb = |amp: f64| {
            let values = x
                .as_slice()
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| (v + amp * n).clamp(0.0, 1.0))
                .collect();
            FeatureCuboid::from_vec(3, 48, 48, values).unwrap()
        };
        let small = ms_ssim_loss(&perturb(0.02), &x, DEFAULT_MS_SSIM_SCALES).unwrap();
        let large = ms_ssim_loss(&perturb(0.3), &x, DEFAULT_MS_SSIM_SCALES).unwrap();
        assert!(small > 0.0);
        assert!(large > small, "noise 0.3 gave {large}, noise 0.02 gave {small}");
    }

    #[test]
    fn too_small_image_is_rejected_with_scale_hint() {
        let x = FeatureCuboid::zeros(3, 16, 16);
        let err = ms_ssim_loss(&x, &x, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reduce the scale count"), "message: {msg}");
        assert!(ms_ssim_loss(&x, &x, 1).is_ok());
    }

    #[test]
    fn invalid_scale_counts_are_rejected() {
        let x = FeatureCuboid::zeros(3, 200, 200);
        assert!(ms_ssim_loss(&x, &x, 0).is_err());
        assert!(ms_ssim_loss(&x, &x, 6).is_err());
        assert!(ms_ssim_loss(&x, &x, 5).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for scales in [1usize, 2] {
            let size = 24;
            let x = random_image(&mut rng, size, size);
            let mut xhat = random_image(&mut rng, size, size);
            let (_, grad) = ms_ssim_loss_backward(&xhat, &x, scales).unwrap();
            let eps = 1e-5;
            for _ in 0..12 {
                let c = rng.random_range(0..3);
                let i = rng.random_range(0..size);
                let j = rng.random_range(0..size);
                let orig = xhat.get(c, i, j);
                xhat.set(c, i, j, orig + eps);
                let plus = ms_ssim_loss(&xhat, &x, scales).unwrap();
                xhat.set(c, i, j, orig - eps);
                let minus = ms_ssim_loss(&xhat, &x, scales).unwrap();
                xhat.set(c, i, j, orig);
                let fd = (plus - minus) / (2.0 * eps);
                let a = grad.get(c, i, j);
                let denom = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (fd - a).abs() / denom < 1e-5,
                    "scales {scales} at ({c},{i},{j}): fd {fd} vs analytic {a}"
                );
            }
        }
    }
}
