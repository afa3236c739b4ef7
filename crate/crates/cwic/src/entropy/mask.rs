//! Kernel trim masks enforcing the coding-order causality of the context
//! model.
//!
//! A mask entry is indexed by (output channel t, input channel k, row
//! offset i, column offset j) with spatial offsets measured from the kernel
//! center.  Input-kind masks exclude the symbol being predicted; hidden-kind
//! masks may include the tap at the position itself, since by then the value
//! is an activation derived only from earlier symbols.
//!
//! Raster masks compare (k, i, j) lexicographically against the output
//! position.  Inclined masks depend only on the plane offset d+i+j where
//! d = k − t, so that every allowed tap lies in an earlier inclined plane
//! (input kind) or an earlier-or-equal one (hidden kind).

use crate::tensor::ConvLayerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// First layer, consuming raw symbols: strictly-earlier taps only.
    Input,
    /// Deeper layers, consuming activations: earlier-or-equal taps.
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OrderKind {
    Raster,
    Inclined,
}

/// Binary kernel mask for one group pair: channels × channels × kh × kw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimMask {
    channels: usize,
    kh: usize,
    kw: usize,
    bits: Vec<bool>,
}

impl TrimMask {
    /// All taps allowed; turns trimmed convolution into plain convolution.
    pub fn solid(channels: usize, kh: usize, kw: usize) -> Self {
        TrimMask { channels, kh, kw, bits: vec![true; channels * channels * kh * kw] }
    }

    pub fn build(order: OrderKind, layer: LayerKind, channels: usize, kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel dims must be odd");
        let (ch, cw) = (kh as isize / 2, kw as isize / 2);
        let mut bits = Vec::with_capacity(channels * channels * kh * kw);
        for t in 0..channels as isize {
            for k in 0..channels as isize {
                for i in -ch..=ch {
                    for j in -cw..=cw {
                        bits.push(match order {
                            OrderKind::Raster => match layer {
                                LayerKind::Input => {
                                    k < t || (k == t && (i < 0 || (i == 0 && j < 0)))
                                }
                                LayerKind::Hidden => {
                                    k < t || (k == t && (i < 0 || (i == 0 && j <= 0)))
                                }
                            },
                            OrderKind::Inclined => {
                                let plane_offset = (k - t) + i + j;
                                match layer {
                                    LayerKind::Input => plane_offset < 0,
                                    LayerKind::Hidden => plane_offset <= 0,
                                }
                            }
                        });
                    }
                }
            }
        }
        TrimMask { channels, kh, kw, bits }
    }

    #[inline]
    fn idx(&self, t: usize, k: usize, ky: usize, kx: usize) -> usize {
        ((t * self.channels + k) * self.kh + ky) * self.kw + kx
    }

    /// Mask bit for output channel t, input channel k, kernel tap (ky, kx)
    /// in array coordinates (the center tap is (kh/2, kw/2)).
    #[inline]
    pub fn allowed(&self, t: usize, k: usize, ky: usize, kx: usize) -> bool {
        self.bits[self.idx(t, k, ky, kx)]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn count_allowed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Writes `kernel ∘ mask` for a grouped layer whose channel count is a
    /// multiple of the mask's: the mask tiles over group pairs, so tap
    /// legality depends only on channel indices within each group.
    pub fn apply_tiled(&self, params: &ConvLayerParams, masked: &mut [f64]) {
        assert_eq!(params.kernel.len(), masked.len());
        assert_eq!(params.in_channels % self.channels, 0);
        assert_eq!(params.out_channels % self.channels, 0);
        assert_eq!((params.kh, params.kw), (self.kh, self.kw));
        let mut pos = 0;
        for o in 0..params.out_channels {
            let t = o % self.channels;
            for c in 0..params.in_channels {
                let k = c % self.channels;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        masked[pos] =
                            if self.allowed(t, k, ky, kx) { params.kernel[pos] } else { 0.0 };
                        pos += 1;
                    }
                }
            }
        }
    }

    /// Zeroes gradient entries at disallowed taps, in place.
    pub fn mask_gradient(&self, out_channels: usize, in_channels: usize, grad: &mut [f64]) {
        let mut pos = 0;
        for o in 0..out_channels {
            let t = o % self.channels;
            for c in 0..in_channels {
                let k = c % self.channels;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if !self.allowed(t, k, ky, kx) {
                            grad[pos] = 0.0;
                        }
                        pos += 1;
                    }
                }
            }
        }
        assert_eq!(pos, grad.len());
    }
}
