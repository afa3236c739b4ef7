//! Learnt channel-wise multi-level quantizer.
//!
//! Each channel k owns T centers defined as cumulative sums of non-negative
//! interval weights: q_{k,t} = s_{k,0} + ... + s_{k,t}.  Quantization maps a
//! feature to its nearest center (ties to the lower level), dequantization
//! maps a level back to its center.  Training updates the weights through
//! the squared quantization error and revives unused top levels by splitting
//! the last populated interval.

use std::collections::VecDeque;

use crate::entropy::CodeCuboid;
use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// Number of successive mini-batches a level range must stay unused before
/// its weights are re-initialized.
pub const REINIT_WINDOW: usize = 50;

/// Interval weights of the quantizer; centers are their running sums.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerParams {
    num_channels: usize,
    num_levels: usize,
    /// Row-major n x T, all entries >= 0.
    weights: Vec<f64>,
}

impl QuantizerParams {
    /// Uniform initialization: s_{k,0} = 1/(2T), s_{k,t} = 1/T for t > 0,
    /// which spreads centers evenly over (0, 1) with the last at 1 - 1/(2T).
    pub fn init(num_channels: usize, num_levels: usize) -> Result<Self> {
        if num_channels < 1 {
            return Err(Error::config("quantizer needs at least one channel"));
        }
        if num_levels < 2 {
            return Err(Error::config("quantizer needs at least two levels"));
        }
        let t = num_levels as f64;
        let mut weights = Vec::with_capacity(num_channels * num_levels);
        for _ in 0..num_channels {
            weights.push(1.0 / (2.0 * t));
            for _ in 1..num_levels {
                weights.push(1.0 / t);
            }
        }
        Ok(QuantizerParams { num_channels, num_levels, weights })
    }

    pub fn from_weights(num_channels: usize, num_levels: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != num_channels * num_levels {
            return Err(Error::config(format!(
                "quantizer weight count {} does not match {}x{}",
                weights.len(),
                num_channels,
                num_levels
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::config("quantizer weights must be non-negative"));
        }
        Ok(QuantizerParams { num_channels, num_levels, weights })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn weight_row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.num_levels..(k + 1) * self.num_levels]
    }

    /// Clamps negative weights to zero.  Called after each optimizer step.
    pub fn project_nonnegative(&mut self) {
        for w in &mut self.weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
    }

    /// All centers, row-major n x T, non-decreasing within each row.
    pub fn centers(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weights.len());
        for k in 0..self.num_channels {
            let mut acc = 0.0;
            for t in 0..self.num_levels {
                acc += self.weights[k * self.num_levels + t];
                out.push(acc);
            }
        }
        out
    }

    pub fn center(&self, k: usize, t: usize) -> f64 {
        self.weight_row(k)[..=t].iter().sum()
    }
}

/// Nearest-center level per row using the sorted-centers structure: binary
/// search for the insertion point, compare the two neighbours, then take the
/// first level holding the winning value so exact ties resolve to the lowest
/// level.
fn assign_level(centers_row: &[f64], e: f64) -> usize {
    let i = centers_row.partition_point(|&q| q < e);
    let chosen = if i == 0 {
        centers_row[0]
    } else if i == centers_row.len() {
        centers_row[i - 1]
    } else {
        let left = centers_row[i - 1];
        let right = centers_row[i];
        if e - left <= right - e {
            left
        } else {
            right
        }
    };
    centers_row.partition_point(|&q| q < chosen)
}

/// Quantizes every element of `e` to its nearest center.
/// Returns the level indices and the corresponding center values.
pub fn quantize(e: &FeatureCuboid, params: &QuantizerParams) -> Result<(CodeCuboid, FeatureCuboid)> {
    if e.channels() != params.num_channels {
        return Err(Error::config(format!(
            "quantizer has {} channels, input has {}",
            params.num_channels,
            e.channels()
        )));
    }
    let centers = params.centers();
    let t = params.num_levels;
    let mut levels = CodeCuboid::zeros(e.channels(), e.height(), e.width(), t)?;
    let mut values = FeatureCuboid::zeros(e.channels(), e.height(), e.width());
    for k in 0..e.channels() {
        let row = &centers[k * t..(k + 1) * t];
        for y in 0..e.height() {
            for x in 0..e.width() {
                let lvl = assign_level(row, e.get(k, y, x));
                levels.set(k, y, x, lvl as u16);
                values.set(k, y, x, row[lvl]);
            }
        }
    }
    Ok((levels, values))
}

/// Reconstructs center values from levels; masked-out positions become 0.
pub fn dequantize(
    levels: &CodeCuboid,
    mask: &CodeCuboid,
    params: &QuantizerParams,
) -> Result<FeatureCuboid> {
    if levels.shape() != mask.shape() {
        return Err(Error::config("levels and mask shapes differ"));
    }
    if levels.channels() != params.num_channels {
        return Err(Error::config(format!(
            "quantizer has {} channels, levels have {}",
            params.num_channels,
            levels.channels()
        )));
    }
    let centers = params.centers();
    let t = params.num_levels;
    let mut out = FeatureCuboid::zeros(levels.channels(), levels.height(), levels.width());
    for k in 0..levels.channels() {
        let row = &centers[k * t..(k + 1) * t];
        for y in 0..levels.height() {
            for x in 0..levels.width() {
                let m = mask.get(k, y, x);
                if m > 1 {
                    return Err(Error::corrupt(format!("mask value {m} is not binary")));
                }
                if m == 0 {
                    continue;
                }
                let lvl = levels.get(k, y, x) as usize;
                if lvl >= t {
                    return Err(Error::corrupt(format!(
                        "quantizer level {lvl} out of range [0, {t})"
                    )));
                }
                out.set(k, y, x, row[lvl]);
            }
        }
    }
    Ok(out)
}

/// Mean squared distance between features and their nearest centers.
pub fn quantization_loss(e: &FeatureCuboid, params: &QuantizerParams) -> Result<f64> {
    let (_, values) = quantize(e, params)?;
    let n = e.len() as f64;
    let sum: f64 = values
        .as_slice()
        .iter()
        .zip(e.as_slice())
        .map(|(&q, &v)| (q - v) * (q - v))
        .sum();
    Ok(sum / n)
}

/// Loss plus its gradient with respect to the interval weights, holding the
/// level assignment fixed.  d/ds_{k,u} sums 2(q - e)/(nhw) over the elements
/// of channel k assigned to a level >= u, because q_{k,t*} depends on every
/// weight up to t*.
pub fn quantization_loss_grad(
    e: &FeatureCuboid,
    params: &QuantizerParams,
) -> Result<(f64, Vec<f64>)> {
    let (levels, values) = quantize(e, params)?;
    let n = e.len() as f64;
    let t = params.num_levels;
    let mut grad = vec![0.0; params.weights.len()];
    let mut loss = 0.0;
    for k in 0..e.channels() {
        for y in 0..e.height() {
            for x in 0..e.width() {
                let d = values.get(k, y, x) - e.get(k, y, x);
                loss += d * d;
                let lvl = levels.get(k, y, x) as usize;
                let g = 2.0 * d / n;
                for u in 0..=lvl {
                    grad[k * t + u] += g;
                }
            }
        }
    }
    Ok((loss / n, grad))
}

/// Straight-through relaxation: the forward pass uses the true quantizer,
/// the backward pass treats it as the identity.
pub fn straight_through_grad(upstream: &FeatureCuboid) -> FeatureCuboid {
    upstream.clone()
}

/// Sliding histogram of level assignments, one entry per recorded mini-batch
/// and channel, used to detect dead top levels.
#[derive(Debug, Clone)]
pub struct LevelHistogramWindow {
    num_levels: usize,
    per_channel: Vec<VecDeque<Vec<u64>>>,
}

impl LevelHistogramWindow {
    pub fn new(num_channels: usize, num_levels: usize) -> Self {
        LevelHistogramWindow {
            num_levels,
            per_channel: vec![VecDeque::with_capacity(REINIT_WINDOW); num_channels],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.per_channel.len()
    }

    /// Records one mini-batch worth of level assignments.
    pub fn push_batch<'a>(&mut self, batch: impl IntoIterator<Item = &'a CodeCuboid>) -> Result<()> {
        let mut counts = vec![vec![0u64; self.num_levels]; self.per_channel.len()];
        for cuboid in batch {
            if cuboid.channels() != self.per_channel.len() {
                return Err(Error::config(format!(
                    "histogram window has {} channels, batch cuboid has {}",
                    self.per_channel.len(),
                    cuboid.channels()
                )));
            }
            for k in 0..cuboid.channels() {
                for y in 0..cuboid.height() {
                    for x in 0..cuboid.width() {
                        let lvl = cuboid.get(k, y, x) as usize;
                        if lvl >= self.num_levels {
                            return Err(Error::config(format!(
                                "level {lvl} outside histogram range {}",
                                self.num_levels
                            )));
                        }
                        counts[k][lvl] += 1;
                    }
                }
            }
        }
        for (k, c) in counts.into_iter().enumerate() {
            if self.per_channel[k].len() == REINIT_WINDOW {
                self.per_channel[k].pop_front();
            }
            self.per_channel[k].push_back(c);
        }
        Ok(())
    }

    pub fn reset_channel(&mut self, k: usize) {
        self.per_channel[k].clear();
    }

    /// Smallest t0 >= 1 such that every level >= t0 went unused over a full
    /// window, or None when the channel has live top levels or an incomplete
    /// window.
    fn dead_threshold(&self, k: usize) -> Option<usize> {
        let deque = &self.per_channel[k];
        if deque.len() < REINIT_WINDOW {
            return None;
        }
        let mut used = vec![false; self.num_levels];
        for entry in deque {
            for (t, &c) in entry.iter().enumerate() {
                if c > 0 {
                    used[t] = true;
                }
            }
        }
        let highest_used = (0..self.num_levels).rev().find(|&t| used[t])?;
        if highest_used + 1 <= self.num_levels - 1 {
            Some(highest_used + 1)
        } else {
            None
        }
    }
}

/// Splits the last populated interval of every dead channel evenly across
/// the unused top levels: s_{k,t} = s_{k,t0-1}/(T-t0+1) for t in
/// [t0-1, T).  The running-sum identity keeps every previously usable
/// center available, so quantization error cannot increase.  Returns the
/// (channel, t0) pairs that were re-initialized; their window entries are
/// cleared so the trigger cannot fire again immediately.
pub fn monitor_and_reinit(
    params: &mut QuantizerParams,
    window: &mut LevelHistogramWindow,
) -> Result<Vec<(usize, usize)>> {
    if params.num_channels != window.num_channels() || params.num_levels != window.num_levels {
        return Err(Error::config("histogram window does not match quantizer shape"));
    }
    let t_total = params.num_levels;
    let mut touched = Vec::new();
    for k in 0..params.num_channels {
        let Some(t0) = window.dead_threshold(k) else { continue };
        let row = &mut params.weights[k * t_total..(k + 1) * t_total];
        let share = row[t0 - 1] / (t_total - t0 + 1) as f64;
        for slot in row[t0 - 1..].iter_mut() {
            *slot = share;
        }
        window.reset_channel(k);
        touched.push((k, t0));
    }
    Ok(touched)
}
