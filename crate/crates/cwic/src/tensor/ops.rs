use super::FeatureCuboid;
use crate::{Error, Result};

// Largest f64 below 1.  Sigmoid outputs are clamped into (0, 1) so that
// downstream logs and level thresholds never see an exact 0 or 1 even when
// exp() saturates.
const SIGMOID_HI: f64 = 0.999_999_999_999_999_9;
const SIGMOID_LO: f64 = 1e-300;

pub fn sigmoid_forward(input: &FeatureCuboid) -> FeatureCuboid {
    input.map(|v| (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_LO, SIGMOID_HI))
}

/// `upstream` is dL/dy; returns dL/dx using y = sigmoid(x), dy/dx = y(1-y).
pub fn sigmoid_backward(output: &FeatureCuboid, upstream: &FeatureCuboid) -> Result<FeatureCuboid> {
    if !output.same_shape(upstream) {
        return Err(Error::config("sigmoid backward shape mismatch"));
    }
    let mut g = output.clone();
    for (gv, (&y, &u)) in g
        .as_mut_slice()
        .iter_mut()
        .zip(output.as_slice().iter().zip(upstream.as_slice()))
    {
        *gv = u * y * (1.0 - y);
    }
    Ok(g)
}

pub fn add(a: &FeatureCuboid, b: &FeatureCuboid) -> Result<FeatureCuboid> {
    if !a.same_shape(b) {
        return Err(Error::config(format!(
            "elementwise add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &bv) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += bv;
    }
    Ok(out)
}

pub fn add_assign(a: &mut FeatureCuboid, b: &FeatureCuboid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::config("elementwise add shape mismatch"));
    }
    for (o, &bv) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += bv;
    }
    Ok(())
}

pub fn mul(a: &FeatureCuboid, b: &FeatureCuboid) -> Result<FeatureCuboid> {
    if !a.same_shape(b) {
        return Err(Error::config(format!(
            "elementwise mul shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &bv) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= bv;
    }
    Ok(out)
}

pub fn scale(a: &FeatureCuboid, s: f64) -> FeatureCuboid {
    a.map(|v| v * s)
}

/// Rearranges channel blocks into spatial blocks.
///
/// With factor f, input channel `c*f*f + dy*f + dx` at (y, x) lands on output
/// channel `c` at (y*f + dy, x*f + dx): a 4x1x1 cuboid [a, b, c, d] with
/// factor 2 becomes 1x2x2 [[a, b], [c, d]].
pub fn depth_to_space(input: &FeatureCuboid, factor: usize) -> Result<FeatureCuboid> {
    if factor == 0 {
        return Err(Error::config("depth-to-space factor must be positive"));
    }
    let f2 = factor * factor;
    if input.channels() % f2 != 0 {
        return Err(Error::config(format!(
            "depth-to-space needs channels divisible by {}, got {}",
            f2,
            input.channels()
        )));
    }
    let oc = input.channels() / f2;
    let mut out = FeatureCuboid::zeros(oc, input.height() * factor, input.width() * factor);
    for c in 0..oc {
        for y in 0..out.height() {
            for x in 0..out.width() {
                let ic = c * f2 + (y % factor) * factor + (x % factor);
                out.set(c, y, x, input.get(ic, y / factor, x / factor));
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`depth_to_space`]; also serves as its backward pass
/// (the op is a permutation, so the gradient permutes the same way back).
pub fn space_to_depth(input: &FeatureCuboid, factor: usize) -> Result<FeatureCuboid> {
    if factor == 0 {
        return Err(Error::config("space-to-depth factor must be positive"));
    }
    if input.height() % factor != 0 || input.width() % factor != 0 {
        return Err(Error::config(format!(
            "space-to-depth needs dims divisible by {}, got {}x{}",
            factor,
            input.height(),
            input.width()
        )));
    }
    let f2 = factor * factor;
    let mut out =
        FeatureCuboid::zeros(input.channels() * f2, input.height() / factor, input.width() / factor);
    for c in 0..input.channels() {
        for y in 0..input.height() {
            for x in 0..input.width() {
                let oc = c * f2 + (y % factor) * factor + (x % factor);
                out.set(oc, y / factor, x / factor, input.get(c, y, x));
            }
        }
    }
    Ok(out)
}
