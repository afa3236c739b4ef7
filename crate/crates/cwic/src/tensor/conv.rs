use rand::Rng;

use super::FeatureCuboid;
use crate::{Error, Result};

/// Weights of one 2-D convolution layer.
///
/// Kernel layout: `kernel[((o * in_channels + c) * kh + ky) * kw + kx]`.
/// Padding is zero padding applied symmetrically; output dims follow the
/// usual floor rule `(in + 2*pad - k) / stride + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(in_channels: usize, out_channels: usize, kh: usize, kw: usize, stride: usize, padding: usize) -> Self {
        ConvLayerParams {
            in_channels,
            out_channels,
            kh,
            kw,
            stride,
            padding,
            kernel: vec![0.0; out_channels * in_channels * kh * kw],
            bias: vec![0.0; out_channels],
        }
    }

    /// Xavier-uniform initialization, bias zero.
    pub fn init_random(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let mut p = Self::zeros(in_channels, out_channels, kh, kw, stride, padding);
        let fan_in = (in_channels * kh * kw) as f64;
        let fan_out = (out_channels * kh * kw) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        for w in &mut p.kernel {
            *w = rng.random_range(-bound..bound);
        }
        p
    }

    #[inline]
    pub fn kidx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + c) * self.kh + ky) * self.kw + kx
    }

    pub fn out_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.kh % 2 == 0 || self.kw % 2 == 0 {
            return Err(Error::config(format!(
                "kernel dims must be odd, got {}x{}",
                self.kh, self.kw
            )));
        }
        let span_h = in_h + 2 * self.padding;
        let span_w = in_w + 2 * self.padding;
        if span_h < self.kh {
            return Err(Error::config(format!(
                "padded input height {span_h} smaller than kernel height {}",
                self.kh
            )));
        }
        if span_w < self.kw {
            return Err(Error::config(format!(
                "padded input width {span_w} smaller than kernel width {}",
                self.kw
            )));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(((span_h - self.kh) / self.stride + 1, (span_w - self.kw) / self.stride + 1))
    }

    pub fn grads_zeros(&self) -> ConvGrads {
        ConvGrads { kernel: vec![0.0; self.kernel.len()], bias: vec![0.0; self.bias.len()] }
    }
}

fn conv_channel_plane(input: &FeatureCuboid, p: &ConvLayerParams, o: usize, oh: usize, ow: usize) -> Vec<f64> {
    let pad = p.padding as isize;
    let mut plane = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = p.bias[o];
            let base_y = (oy * p.stride) as isize - pad;
            let base_x = (ox * p.stride) as isize - pad;
            for c in 0..p.in_channels {
                for ky in 0..p.kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= input.height() as isize {
                        continue;
                    }
                    for kx in 0..p.kw {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= input.width() as isize {
                            continue;
                        }
                        acc += input.get(c, iy as usize, ix as usize)
                            * p.kernel[p.kidx(o, c, ky, kx)];
                    }
                }
            }
            plane.push(acc);
        }
    }
    plane
}

pub fn conv2d_forward(input: &FeatureCuboid, p: &ConvLayerParams) -> Result<FeatureCuboid> {
    conv2d_forward_par(input, p, false)
}

/// Same contract as [`conv2d_forward`]; output channels are independent, so
/// computing them concurrently is bitwise identical to the sequential path.
pub fn conv2d_forward_par(
    input: &FeatureCuboid,
    p: &ConvLayerParams,
    parallel: bool,
) -> Result<FeatureCuboid> {
    if input.channels() != p.in_channels {
        return Err(Error::config(format!(
            "conv input has {} channels, layer expects {}",
            input.channels(),
            p.in_channels
        )));
    }
    let (oh, ow) = p.out_dims(input.height(), input.width())?;
    let planes = crate::parallel::map_indexed(parallel, p.out_channels, |o| {
        conv_channel_plane(input, p, o, oh, ow)
    });
    let mut values = Vec::with_capacity(p.out_channels * oh * ow);
    for plane in planes {
        values.extend_from_slice(&plane);
    }
    FeatureCuboid::from_vec(p.out_channels, oh, ow, values)
}

/// Gradients of a scalar loss with respect to input, kernel and bias, given
/// the gradient `upstream` with respect to the layer output.
pub fn conv2d_backward(
    input: &FeatureCuboid,
    p: &ConvLayerParams,
    upstream: &FeatureCuboid,
) -> Result<(FeatureCuboid, ConvGrads)> {
    let (oh, ow) = p.out_dims(input.height(), input.width())?;
    if upstream.shape() != (p.out_channels, oh, ow) {
        return Err(Error::config(format!(
            "upstream gradient shape {:?} does not match conv output {:?}",
            upstream.shape(),
            (p.out_channels, oh, ow)
        )));
    }
    let mut input_grad = FeatureCuboid::zeros(input.channels(), input.height(), input.width());
    let mut grads = p.grads_zeros();
    let pad = p.padding as isize;
    for o in 0..p.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = upstream.get(o, oy, ox);
                grads.bias[o] += g;
                let base_y = (oy * p.stride) as isize - pad;
                let base_x = (ox * p.stride) as isize - pad;
                for c in 0..p.in_channels {
                    for ky in 0..p.kh {
                        let iy = base_y + ky as isize;
                        if iy < 0 || iy >= input.height() as isize {
                            continue;
                        }
                        for kx in 0..p.kw {
                            let ix = base_x + kx as isize;
                            if ix < 0 || ix >= input.width() as isize {
                                continue;
                            }
                            let ki = p.kidx(o, c, ky, kx);
                            grads.kernel[ki] += g * input.get(c, iy as usize, ix as usize);
                            let ii = input_grad.idx(c, iy as usize, ix as usize);
                            input_grad.as_mut_slice()[ii] += g * p.kernel[ki];
                        }
                    }
                }
            }
        }
    }
    Ok((input_grad, grads))
}
