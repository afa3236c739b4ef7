//! Synthetic training images: smooth color gradients with localized
//! high-frequency texture patches.
//!
//! Patches are aligned to the 8-pixel code grid so every code position is
//! unambiguously either textured or smooth, which lets tests compare
//! importance statistics between the two region kinds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoenc::SPATIAL_RATIO;
use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// One generated image plus its region labels at code resolution.
#[derive(Debug, Clone)]
pub struct ToyImage {
    pub image: FeatureCuboid,
    /// Row-major over the (h/8) x (w/8) code grid; true marks texture.
    pub texture_blocks: Vec<bool>,
}

impl ToyImage {
    pub fn block_dims(&self) -> (usize, usize) {
        (self.image.height() / SPATIAL_RATIO, self.image.width() / SPATIAL_RATIO)
    }

    pub fn is_texture_block(&self, by: usize, bx: usize) -> bool {
        let (_, bw) = self.block_dims();
        self.texture_blocks[by * bw + bx]
    }
}

/// Deterministic corpus of gradient-plus-texture images.
pub fn toy_corpus(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<ToyImage>> {
    if height % SPATIAL_RATIO != 0 || width % SPATIAL_RATIO != 0 {
        return Err(Error::config(format!(
            "corpus dims {height}x{width} must be divisible by {SPATIAL_RATIO}"
        )));
    }
    let bh = height / SPATIAL_RATIO;
    let bw = width / SPATIAL_RATIO;
    if bh * bw < 2 {
        return Err(Error::config("corpus images need at least two code blocks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(one_image(&mut rng, height, width, bh, bw));
    }
    Ok(out)
}

fn one_image(rng: &mut ChaCha8Rng, height: usize, width: usize, bh: usize, bw: usize) -> ToyImage {
    let mut image = FeatureCuboid::zeros(3, height, width);
    // Smooth background: an affine ramp per channel, kept inside [0.1, 0.9]
    // by splitting the value budget between base and the two slopes.
    for c in 0..3 {
        let base = rng.random_range(0.2..0.6);
        let gy = rng.random_range(-0.25..0.25);
        let gx = rng.random_range(-0.25..0.25);
        for y in 0..height {
            for x in 0..width {
                let v = base
                    + gy * (y as f64 / height as f64)
                    + gx * (x as f64 / width as f64)
                    + 0.15;
                image.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }

    // One or two texture patches, each a block-aligned rectangle filled with
    // a noisy checkerboard; at least one block always stays smooth.
    let mut texture_blocks = vec![false; bh * bw];
    let patches = rng.random_range(1..=2usize);
    for _ in 0..patches {
        let mut pw = rng.random_range(1..=bw.min(2));
        let mut ph = rng.random_range(1..=bh.min(2));
        let by = rng.random_range(0..=(bh - ph));
        let bx = rng.random_range(0..=(bw - pw));
        let free_after = |ph: usize, pw: usize| {
            texture_blocks
                .iter()
                .enumerate()
                .filter(|(i, &t)| {
                    let (y, x) = (i / bw, i % bw);
                    !t && !(y >= by && y < by + ph && x >= bx && x < bx + pw)
                })
                .count()
        };
        if free_after(ph, pw) == 0 {
            // Shrink rather than skip so small grids still get texture.
            (ph, pw) = (1, 1);
            if free_after(1, 1) == 0 {
                continue;
            }
        }
        for y in by..by + ph {
            for x in bx..bx + pw {
                texture_blocks[y * bw + x] = true;
            }
        }
        let cell = rng.random_range(1..=2usize);
        for y in by * SPATIAL_RATIO..(by + ph) * SPATIAL_RATIO {
            for x in bx * SPATIAL_RATIO..(bx + pw) * SPATIAL_RATIO {
                let checker = ((y / cell + x / cell) % 2) as f64;
                for c in 0..3 {
                    let noise = rng.random_range(-0.2..0.2);
                    image.set(c, y, x, (0.2 + 0.6 * checker + noise).clamp(0.0, 1.0));
                }
            }
        }
    }
    ToyImage { image, texture_blocks }
}
