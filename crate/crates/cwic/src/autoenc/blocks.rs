//! Building blocks shared by the encoder, importance and decoder nets.
//!
//! A sub-block is conv, sigmoid, conv; a dense chain applies sub-blocks with
//! additive skips, x <- x + SB(x), keeping channel count and spatial dims.
//! The chain is the only place nonlinearity enters the networks.

use rand::Rng;

use crate::tensor::{
    conv2d_backward, conv2d_forward, sigmoid_backward, sigmoid_forward, ConvGrads,
    ConvLayerParams, FeatureCuboid,
};
use crate::Result;

#[derive(Debug, Clone)]
pub struct SubBlock {
    pub conv1: ConvLayerParams,
    pub conv2: ConvLayerParams,
}

pub struct SubBlockCache {
    input: FeatureCuboid,
    hidden: FeatureCuboid,
}

impl SubBlock {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        SubBlock {
            conv1: ConvLayerParams::init_random(rng, channels, channels, 3, 3, 1, 1),
            conv2: ConvLayerParams::init_random(rng, channels, channels, 3, 3, 1, 1),
        }
    }

    pub fn forward(&self, x: &FeatureCuboid) -> Result<(FeatureCuboid, SubBlockCache)> {
        let hidden = sigmoid_forward(&conv2d_forward(x, &self.conv1)?);
        let y = conv2d_forward(&hidden, &self.conv2)?;
        Ok((y, SubBlockCache { input: x.clone(), hidden }))
    }

    pub fn backward(
        &self,
        cache: &SubBlockCache,
        upstream: &FeatureCuboid,
    ) -> Result<(FeatureCuboid, ConvGrads, ConvGrads)> {
        let (dh_raw, g2) = conv2d_backward(&cache.hidden, &self.conv2, upstream)?;
        let dh = sigmoid_backward(&cache.hidden, &dh_raw)?;
        let (dx, g1) = conv2d_backward(&cache.input, &self.conv1, &dh)?;
        Ok((dx, g1, g2))
    }
}

#[derive(Debug, Clone)]
pub struct DenseChain {
    pub blocks: Vec<SubBlock>,
}

pub struct DenseChainCache {
    per_block: Vec<SubBlockCache>,
}

impl DenseChain {
    pub fn init(channels: usize, blocks: usize, rng: &mut impl Rng) -> Self {
        DenseChain { blocks: (0..blocks).map(|_| SubBlock::init(channels, rng)).collect() }
    }

    pub fn forward(&self, x: &FeatureCuboid) -> Result<(FeatureCuboid, DenseChainCache)> {
        let mut cur = x.clone();
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for sb in &self.blocks {
            let (y, cache) = sb.forward(&cur)?;
            crate::tensor::add_assign(&mut cur, &y)?;
            per_block.push(cache);
        }
        Ok((cur, DenseChainCache { per_block }))
    }

    /// Gradients come back in sub-block order (conv1 then conv2 for each).
    pub fn backward(
        &self,
        cache: &DenseChainCache,
        upstream: &FeatureCuboid,
    ) -> Result<(FeatureCuboid, Vec<ConvGrads>)> {
        let mut g = upstream.clone();
        let mut grads: Vec<Option<(ConvGrads, ConvGrads)>> =
            (0..self.blocks.len()).map(|_| None).collect();
        for (i, sb) in self.blocks.iter().enumerate().rev() {
            let (dx, g1, g2) = sb.backward(&cache.per_block[i], &g)?;
            grads[i] = Some((g1, g2));
            crate::tensor::add_assign(&mut g, &dx)?;
        }
        let mut flat = Vec::with_capacity(self.blocks.len() * 2);
        for pair in grads.into_iter() {
            let (g1, g2) = pair.expect("all blocks visited");
            flat.push(g1);
            flat.push(g2);
        }
        Ok((g, flat))
    }

    pub fn layers(&self) -> Vec<&ConvLayerParams> {
        self.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2]).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayerParams> {
        self.blocks.iter_mut().flat_map(|b| [&mut b.conv1, &mut b.conv2]).collect()
    }
}
