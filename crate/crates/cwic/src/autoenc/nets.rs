//! The three networks: encoder (shared stem + code head), importance
//! subnet, and the mirrored decoder.
//!
//! The stem halves the spatial dims three times, so the code cuboid is 1/8
//! of the image on each axis.  The decoder mirrors each strided convolution
//! with a convolution into 4x the channels followed by depth-to-space.  The
//! importance subnet branches off the stem output and stays at code
//! resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DenseChain, DenseChainCache};
use crate::tensor::{
    conv2d_backward, conv2d_forward, depth_to_space, sigmoid_backward, sigmoid_forward,
    space_to_depth, ConvGrads, ConvLayerParams, FeatureCuboid,
};
use crate::{Error, Result};

/// Spatial ratio between image and code cuboid (three stride-2 stages).
pub const SPATIAL_RATIO: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channel counts of the three stem stages.
    pub stage_channels: [usize; 3],
    /// Channels of the code cuboid (the quantized representation).
    pub code_channels: usize,
    /// Sub-blocks per dense chain.
    pub sub_blocks: usize,
    /// Sub-blocks in the importance branch.
    pub importance_blocks: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stage_channels: [16, 24, 32],
            code_channels: 32,
            sub_blocks: 1,
            importance_blocks: 2,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("stage channel counts must be positive"));
        }
        if self.code_channels == 0 {
            return Err(Error::config("code cuboid needs at least one channel"));
        }
        if self.sub_blocks == 0 || self.importance_blocks == 0 {
            return Err(Error::config("dense chains need at least one sub-block"));
        }
        Ok(())
    }
}

/// Rejects images the strided stem cannot map cleanly to a code grid.
pub fn check_image(x: &FeatureCuboid) -> Result<()> {
    if x.channels() != 3 {
        return Err(Error::input(format!("expected a 3-channel image, got {}", x.channels())));
    }
    if x.height() % SPATIAL_RATIO != 0 || x.width() % SPATIAL_RATIO != 0 {
        return Err(Error::input(format!(
            "image dims {}x{} not divisible by {SPATIAL_RATIO}; pad the image first",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub stem_conv1: ConvLayerParams,
    pub stem_dense1: DenseChain,
    pub stem_conv2: ConvLayerParams,
    pub stem_dense2: DenseChain,
    pub stem_conv3: ConvLayerParams,
    pub ep_dense: DenseChain,
    pub ep_conv: ConvLayerParams,
}

pub struct EncoderCache {
    x: FeatureCuboid,
    dense1: DenseChainCache,
    d1_out: FeatureCuboid,
    dense2: DenseChainCache,
    d2_out: FeatureCuboid,
    ep_dense: DenseChainCache,
    ep_out: FeatureCuboid,
    e: FeatureCuboid,
}

impl EncoderNet {
    pub fn init(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let [c1, c2, c3] = cfg.stage_channels;
        EncoderNet {
            stem_conv1: ConvLayerParams::init_random(rng, 3, c1, 3, 3, 2, 1),
            stem_dense1: DenseChain::init(c1, cfg.sub_blocks, rng),
            stem_conv2: ConvLayerParams::init_random(rng, c1, c2, 3, 3, 2, 1),
            stem_dense2: DenseChain::init(c2, cfg.sub_blocks, rng),
            stem_conv3: ConvLayerParams::init_random(rng, c2, c3, 3, 3, 2, 1),
            ep_dense: DenseChain::init(c3, cfg.sub_blocks, rng),
            ep_conv: ConvLayerParams::init_random(rng, c3, cfg.code_channels, 3, 3, 1, 1),
        }
    }

    /// Returns the stem output (shared with the importance branch) and the
    /// sigmoid-bounded code features.
    pub fn forward(&self, x: &FeatureCuboid) -> Result<(FeatureCuboid, FeatureCuboid, EncoderCache)> {
        check_image(x)?;
        let s1 = conv2d_forward(x, &self.stem_conv1)?;
        let (d1_out, dense1) = self.stem_dense1.forward(&s1)?;
        let s2 = conv2d_forward(&d1_out, &self.stem_conv2)?;
        let (d2_out, dense2) = self.stem_dense2.forward(&s2)?;
        let es = conv2d_forward(&d2_out, &self.stem_conv3)?;
        let (ep_out, ep_dense) = self.ep_dense.forward(&es)?;
        let e = sigmoid_forward(&conv2d_forward(&ep_out, &self.ep_conv)?);
        let cache = EncoderCache {
            x: x.clone(),
            dense1,
            d1_out,
            dense2,
            d2_out,
            ep_dense,
            ep_out,
            e: e.clone(),
        };
        Ok((es, e, cache))
    }

    /// Parameter gradients from the gradient with respect to the code
    /// features e.  Order matches [`EncoderNet::layers`].
    pub fn backward(&self, cache: &EncoderCache, de: &FeatureCuboid) -> Result<Vec<ConvGrads>> {
        let d_pre = sigmoid_backward(&cache.e, de)?;
        let (d_ep_out, g_ep_conv) = conv2d_backward(&cache.ep_out, &self.ep_conv, &d_pre)?;
        let (d_es, g_ep_dense) = self.ep_dense.backward(&cache.ep_dense, &d_ep_out)?;
        let (d_d2, g_s3) = conv2d_backward(&cache.d2_out, &self.stem_conv3, &d_es)?;
        let (d_s2, g_dense2) = self.stem_dense2.backward(&cache.dense2, &d_d2)?;
        let (d_d1, g_s2) = conv2d_backward(&cache.d1_out, &self.stem_conv2, &d_s2)?;
        let (d_s1, g_dense1) = self.stem_dense1.backward(&cache.dense1, &d_d1)?;
        let (_, g_s1) = conv2d_backward(&cache.x, &self.stem_conv1, &d_s1)?;
        let mut out = vec![g_s1];
        out.extend(g_dense1);
        out.push(g_s2);
        out.extend(g_dense2);
        out.push(g_s3);
        out.extend(g_ep_dense);
        out.push(g_ep_conv);
        Ok(out)
    }

    pub fn layers(&self) -> Vec<&ConvLayerParams> {
        let mut out = vec![&self.stem_conv1];
        out.extend(self.stem_dense1.layers());
        out.push(&self.stem_conv2);
        out.extend(self.stem_dense2.layers());
        out.push(&self.stem_conv3);
        out.extend(self.ep_dense.layers());
        out.push(&self.ep_conv);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayerParams> {
        let mut out = vec![&mut self.stem_conv1];
        out.extend(self.stem_dense1.layers_mut());
        out.push(&mut self.stem_conv2);
        out.extend(self.stem_dense2.layers_mut());
        out.push(&mut self.stem_conv3);
        out.extend(self.ep_dense.layers_mut());
        out.push(&mut self.ep_conv);
        out
    }
}

#[derive(Debug, Clone)]
pub struct ImportanceNet {
    pub chain: DenseChain,
    pub out_conv: ConvLayerParams,
}

pub struct ImportanceCache {
    chain: DenseChainCache,
    chain_out: FeatureCuboid,
    p: FeatureCuboid,
}

impl ImportanceNet {
    pub fn init(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let c3 = cfg.stage_channels[2];
        ImportanceNet {
            chain: DenseChain::init(c3, cfg.importance_blocks, rng),
            out_conv: ConvLayerParams::init_random(rng, c3, 1, 3, 3, 1, 1),
        }
    }

    /// One-channel importance map in (0,1) at code resolution.
    pub fn forward(&self, es: &FeatureCuboid) -> Result<(FeatureCuboid, ImportanceCache)> {
        let (chain_out, chain) = self.chain.forward(es)?;
        let p = sigmoid_forward(&conv2d_forward(&chain_out, &self.out_conv)?);
        Ok((p.clone(), ImportanceCache { chain, chain_out, p }))
    }

    /// Parameter gradients only; this branch never propagates into the stem.
    pub fn backward(&self, cache: &ImportanceCache, dp: &FeatureCuboid) -> Result<Vec<ConvGrads>> {
        let d_pre = sigmoid_backward(&cache.p, dp)?;
        let (d_chain_out, g_out) = conv2d_backward(&cache.chain_out, &self.out_conv, &d_pre)?;
        let (_, g_chain) = self.chain.backward(&cache.chain, &d_chain_out)?;
        let mut out = g_chain;
        out.push(g_out);
        Ok(out)
    }

    pub fn layers(&self) -> Vec<&ConvLayerParams> {
        let mut out = self.chain.layers();
        out.push(&self.out_conv);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayerParams> {
        let mut out = self.chain.layers_mut();
        out.push(&mut self.out_conv);
        out
    }
}

#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub head_conv: ConvLayerParams,
    pub head_dense: DenseChain,
    pub up1_conv: ConvLayerParams,
    pub up1_dense: DenseChain,
    pub up2_conv: ConvLayerParams,
    pub up2_dense: DenseChain,
    pub out_conv: ConvLayerParams,
}

pub struct DecoderCache {
    z: FeatureCuboid,
    head_dense: DenseChainCache,
    head_out: FeatureCuboid,
    up1_dense: DenseChainCache,
    up1_out: FeatureCuboid,
    up2_dense: DenseChainCache,
    up2_out: FeatureCuboid,
}

impl DecoderNet {
    pub fn init(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let [c1, c2, c3] = cfg.stage_channels;
        DecoderNet {
            head_conv: ConvLayerParams::init_random(rng, cfg.code_channels, c3, 3, 3, 1, 1),
            head_dense: DenseChain::init(c3, cfg.sub_blocks, rng),
            up1_conv: ConvLayerParams::init_random(rng, c3, 4 * c2, 3, 3, 1, 1),
            up1_dense: DenseChain::init(c2, cfg.sub_blocks, rng),
            up2_conv: ConvLayerParams::init_random(rng, c2, 4 * c1, 3, 3, 1, 1),
            up2_dense: DenseChain::init(c1, cfg.sub_blocks, rng),
            out_conv: ConvLayerParams::init_random(rng, c1, 12, 3, 3, 1, 1),
        }
    }

    /// Reconstruction with linear output; clamping happens only at export.
    pub fn forward(&self, z: &FeatureCuboid) -> Result<(FeatureCuboid, DecoderCache)> {
        let head = conv2d_forward(z, &self.head_conv)?;
        let (head_out, head_dense) = self.head_dense.forward(&head)?;
        let up1_raw = depth_to_space(&conv2d_forward(&head_out, &self.up1_conv)?, 2)?;
        let (up1_out, up1_dense) = self.up1_dense.forward(&up1_raw)?;
        let up2_raw = depth_to_space(&conv2d_forward(&up1_out, &self.up2_conv)?, 2)?;
        let (up2_out, up2_dense) = self.up2_dense.forward(&up2_raw)?;
        let xhat = depth_to_space(&conv2d_forward(&up2_out, &self.out_conv)?, 2)?;
        let cache = DecoderCache {
            z: z.clone(),
            head_dense,
            head_out,
            up1_dense,
            up1_out,
            up2_dense,
            up2_out,
        };
        Ok((xhat, cache))
    }

    pub fn backward(
        &self,
        cache: &DecoderCache,
        dxhat: &FeatureCuboid,
    ) -> Result<(FeatureCuboid, Vec<ConvGrads>)> {
        let d_out_raw = space_to_depth(dxhat, 2)?;
        let (d_up2_out, g_out) = conv2d_backward(&cache.up2_out, &self.out_conv, &d_out_raw)?;
        let (d_up2_raw, g_up2_dense) = self.up2_dense.backward(&cache.up2_dense, &d_up2_out)?;
        let d_up2_pre = space_to_depth(&d_up2_raw, 2)?;
        let (d_up1_out, g_up2) = conv2d_backward(&cache.up1_out, &self.up2_conv, &d_up2_pre)?;
        let (d_up1_raw, g_up1_dense) = self.up1_dense.backward(&cache.up1_dense, &d_up1_out)?;
        let d_up1_pre = space_to_depth(&d_up1_raw, 2)?;
        let (d_head_out, g_up1) = conv2d_backward(&cache.head_out, &self.up1_conv, &d_up1_pre)?;
        let (d_head, g_head_dense) = self.head_dense.backward(&cache.head_dense, &d_head_out)?;
        let (dz, g_head) = conv2d_backward(&cache.z, &self.head_conv, &d_head)?;
        let mut grads = vec![g_head];
        grads.extend(g_head_dense);
        grads.push(g_up1);
        grads.extend(g_up1_dense);
        grads.push(g_up2);
        grads.extend(g_up2_dense);
        grads.push(g_out);
        Ok((dz, grads))
    }

    pub fn layers(&self) -> Vec<&ConvLayerParams> {
        let mut out = vec![&self.head_conv];
        out.extend(self.head_dense.layers());
        out.push(&self.up1_conv);
        out.extend(self.up1_dense.layers());
        out.push(&self.up2_conv);
        out.extend(self.up2_dense.layers());
        out.push(&self.out_conv);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayerParams> {
        let mut out = vec![&mut self.head_conv];
        out.extend(self.head_dense.layers_mut());
        out.push(&mut self.up1_conv);
        out.extend(self.up1_dense.layers_mut());
        out.push(&mut self.up2_conv);
        out.extend(self.up2_dense.layers_mut());
        out.push(&mut self.out_conv);
        out
    }
}
