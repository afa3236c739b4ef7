//! The context model: a stack of group trimmed convolutions predicting a
//! PMF for every cuboid position in one forward pass.
//!
//! Layer stack: one input-kind trimmed conv, one hidden-kind trimmed conv,
//! `residual_blocks` blocks of two hidden-kind trimmed convs with an
//! additive skip, and a final linear trimmed conv whose output groups are
//! the alphabet.  Sigmoid follows the first two layers and the first conv
//! of each block.  Every intermediate layer carries `groups` feature groups
//! of `channels` channels each; masks tile over group pairs, so causality
//! holds for the whole stack by composition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask::{LayerKind, OrderKind, TrimMask};
use super::CodeCuboid;
use crate::importance::ImportanceMask;
use crate::tensor::{
    add, adam_step, conv2d_backward, conv2d_forward_par, sigmoid_backward, sigmoid_forward,
    AdamState, ConvGrads, ConvLayerParams, FeatureCuboid, PlateauSchedule,
};
use crate::{Error, Result};

/// Probabilities below this are floored (and the vector renormalized) so no
/// symbol ever costs more than 16 bits, matching the coder's frequency
/// resolution.
pub const PMF_FLOOR: f64 = 1.0 / 65536.0;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcaeConfig {
    /// Channels of the symbol cuboid being modeled.
    pub channels: usize,
    /// Alphabet size m; also the number of output groups of the last layer.
    pub alphabet: usize,
    /// Feature groups per intermediate layer.
    pub groups: usize,
    pub residual_blocks: usize,
    /// Square kernel side, odd.
    pub kernel: usize,
    pub order: OrderKind,
}

impl TcaeConfig {
    pub fn new(channels: usize, alphabet: usize, order: OrderKind) -> Self {
        TcaeConfig { channels, alphabet, groups: 8, residual_blocks: 3, kernel: 5, order }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("context model needs at least one channel"));
        }
        if self.alphabet < 2 || self.alphabet > 1 << 16 {
            return Err(Error::config(format!(
                "alphabet {} outside supported range [2, 65536]",
                self.alphabet
            )));
        }
        if self.groups == 0 {
            return Err(Error::config("at least one feature group required"));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::config(format!("kernel side {} must be odd", self.kernel)));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        3 + 2 * self.residual_blocks
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let inner = self.groups * self.channels;
        let last = self.num_layers() - 1;
        if layer == last {
            (inner, self.alphabet * self.channels)
        } else {
            (inner, inner)
        }
    }
}

/// Per-position symbol distributions, one length-m vector per (k, i, j).
#[derive(Debug, Clone, PartialEq)]
pub struct PmfCuboid {
    channels: usize,
    height: usize,
    width: usize,
    alphabet: usize,
    probs: Vec<f64>,
}

impl PmfCuboid {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    #[inline]
    pub fn pmf(&self, k: usize, i: usize, j: usize) -> &[f64] {
        let base = ((k * self.height + i) * self.width + j) * self.alphabet;
        &self.probs[base..base + self.alphabet]
    }
}

/// Trimmed convolution: zeroes the disallowed kernel taps, then convolves.
/// With a solid mask this is exactly a plain convolution.
pub fn trimmed_conv_forward(
    input: &FeatureCuboid,
    params: &ConvLayerParams,
    mask: &TrimMask,
    parallel: bool,
) -> Result<FeatureCuboid> {
    let mut masked = params.clone();
    mask.apply_tiled(params, &mut masked.kernel);
    conv2d_forward_par(input, &masked, parallel)
}

#[derive(Debug, Clone)]
pub struct TcaeModel {
    config: TcaeConfig,
    pub(crate) layers: Vec<ConvLayerParams>,
    input_mask: TrimMask,
    hidden_mask: TrimMask,
}

pub(crate) struct TcaeCache {
    conv_inputs: Vec<FeatureCuboid>,
    sigmoid_outputs: Vec<Option<FeatureCuboid>>,
}

impl TcaeModel {
    pub fn init(config: TcaeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let pad = config.kernel / 2;
        let mut layers = Vec::with_capacity(config.num_layers());
        for l in 0..config.num_layers() {
            let (cin, cout) = config.layer_dims(l);
            layers.push(ConvLayerParams::init_random(rng, cin, cout, config.kernel, config.kernel, 1, pad));
        }
        let mut model = TcaeModel {
            input_mask: TrimMask::build(config.order, LayerKind::Input, config.channels, config.kernel, config.kernel),
            hidden_mask: TrimMask::build(config.order, LayerKind::Hidden, config.channels, config.kernel, config.kernel),
            config,
            layers,
        };
        // Masked taps never receive gradient, so zero them at init too;
        // stored parameters then always equal the effective ones.
        for l in 0..model.layers.len() {
            let layer = &model.layers[l];
            let mut masked = vec![0.0; layer.kernel.len()];
            model.layer_mask(l).apply_tiled(layer, &mut masked);
            model.layers[l].kernel = masked;
        }
        Ok(model)
    }

    pub fn from_layers(config: TcaeConfig, layers: Vec<ConvLayerParams>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.num_layers() {
            return Err(Error::config(format!(
                "expected {} layers, got {}",
                config.num_layers(),
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (cin, cout) = config.layer_dims(l);
            if (layer.in_channels, layer.out_channels) != (cin, cout)
                || (layer.kh, layer.kw) != (config.kernel, config.kernel)
            {
                return Err(Error::config(format!("layer {l} shape mismatch")));
            }
        }
        Ok(TcaeModel {
            input_mask: TrimMask::build(config.order, LayerKind::Input, config.channels, config.kernel, config.kernel),
            hidden_mask: TrimMask::build(config.order, LayerKind::Hidden, config.channels, config.kernel, config.kernel),
            config,
            layers,
        })
    }

    pub fn config(&self) -> &TcaeConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayerParams] {
        &self.layers
    }

    fn layer_mask(&self, layer: usize) -> &TrimMask {
        if layer == 0 {
            &self.input_mask
        } else {
            &self.hidden_mask
        }
    }

    /// Masked copies of every layer, ready for plain convolution calls.
    pub(crate) fn masked_layers(&self) -> Vec<ConvLayerParams> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let mut m = p.clone();
                self.layer_mask(l).apply_tiled(p, &mut m.kernel);
                m
            })
            .collect()
    }

    /// Symbols scaled into [0,1] and replicated across the input groups.
    fn embed(&self, codes: &CodeCuboid) -> Result<FeatureCuboid> {
        let n = self.config.channels;
        if codes.channels() != n {
            return Err(Error::config(format!(
                "cuboid has {} channels, model expects {n}",
                codes.channels()
            )));
        }
        if codes.alphabet() != self.config.alphabet {
            return Err(Error::config(format!(
                "cuboid alphabet {} does not match model alphabet {}",
                codes.alphabet(),
                self.config.alphabet
            )));
        }
        let (h, w) = (codes.height(), codes.width());
        let denom = (self.config.alphabet - 1) as f64;
        let mut values = Vec::with_capacity(self.config.groups * n * h * w);
        for _ in 0..self.config.groups {
            values.extend(codes.as_slice().iter().map(|&s| s as f64 / denom));
        }
        FeatureCuboid::from_vec(self.config.groups * n, h, w, values)
    }

    fn forward(
        &self,
        masked: &[ConvLayerParams],
        codes: &CodeCuboid,
        parallel: bool,
        want_cache: bool,
    ) -> Result<(FeatureCuboid, Option<TcaeCache>)> {
        let mut conv_inputs = Vec::new();
        let mut sigmoid_outputs = Vec::new();
        let mut record = |input: &FeatureCuboid, act: Option<&FeatureCuboid>| {
            if want_cache {
                conv_inputs.push(input.clone());
                sigmoid_outputs.push(act.cloned());
            }
        };

        let x0 = self.embed(codes)?;
        let a0 = sigmoid_forward(&conv2d_forward_par(&x0, &masked[0], parallel)?);
        record(&x0, Some(&a0));
        let a1 = sigmoid_forward(&conv2d_forward_par(&a0, &masked[1], parallel)?);
        record(&a0, Some(&a1));
        let mut h = a1;
        for b in 0..self.config.residual_blocks {
            let l = 2 + 2 * b;
            let t = sigmoid_forward(&conv2d_forward_par(&h, &masked[l], parallel)?);
            record(&h, Some(&t));
            let y = conv2d_forward_par(&t, &masked[l + 1], parallel)?;
            record(&t, None);
            h = add(&y, &h)?;
        }
        let last = masked.len() - 1;
        let logits = conv2d_forward_par(&h, &masked[last], parallel)?;
        record(&h, None);
        let cache = want_cache.then_some(TcaeCache { conv_inputs, sigmoid_outputs });
        Ok((logits, cache))
    }

    /// One pass over the whole cuboid: the PMF at every position,
    /// conditioned on the symbols preceding it in the model's order.
    pub fn predict_pmfs(&self, codes: &CodeCuboid, parallel: bool) -> Result<PmfCuboid> {
        let masked = self.masked_layers();
        let (logits, _) = self.forward(&masked, codes, parallel, false)?;
        logits.check_finite("context model logits")?;
        Ok(self.logits_to_pmfs(&logits))
    }

    fn logits_to_pmfs(&self, logits: &FeatureCuboid) -> PmfCuboid {
        let n = self.config.channels;
        let m = self.config.alphabet;
        let (h, w) = (logits.height(), logits.width());
        let mut probs = Vec::with_capacity(n * h * w * m);
        let mut row = vec![0.0; m];
        for k in 0..n {
            for i in 0..h {
                for j in 0..w {
                    for (b, slot) in row.iter_mut().enumerate() {
                        *slot = logits.get(b * n + k, i, j);
                    }
                    softmax_floored(&mut row);
                    probs.extend_from_slice(&row);
                }
            }
        }
        PmfCuboid { channels: n, height: h, width: w, alphabet: m, probs }
    }

    /// Objective (floored, in bits) and parameter gradients for one cuboid.
    /// The gradient is the plain softmax cross-entropy one; the floor only
    /// guards the reported value and coding cost.
    pub(crate) fn objective_and_grads(
        &self,
        masked: &[ConvLayerParams],
        codes: &CodeCuboid,
        mask: &ImportanceMask,
        parallel: bool,
    ) -> Result<(f64, Vec<ConvGrads>)> {
        let (logits, cache) = self.forward(masked, codes, parallel, true)?;
        let cache = cache.expect("cache requested");
        let (bits, dlogits) = self.objective_and_logit_grad(&logits, codes, mask)?;
        let grads = self.backward(masked, &cache, &dlogits)?;
        Ok((bits, grads))
    }

    fn objective_and_logit_grad(
        &self,
        logits: &FeatureCuboid,
        codes: &CodeCuboid,
        mask: &ImportanceMask,
    ) -> Result<(f64, FeatureCuboid)> {
        let n = self.config.channels;
        let m = self.config.alphabet;
        let (h, w) = (logits.height(), logits.width());
        if mask.shape() != (n, h, w) {
            return Err(Error::config("mask shape does not match cuboid"));
        }
        let mut bits = 0.0;
        let mut dlogits = FeatureCuboid::zeros(logits.channels(), h, w);
        let mut row = vec![0.0; m];
        for k in 0..n {
            for i in 0..h {
                for j in 0..w {
                    if !mask.get(k, i, j) {
                        continue;
                    }
                    for (b, slot) in row.iter_mut().enumerate() {
                        *slot = logits.get(b * n + k, i, j);
                    }
                    let raw = softmax(&row);
                    let sym = codes.get(k, i, j) as usize;
                    let mut floored = raw.clone();
                    softmax_floored_from_probs(&mut floored);
                    bits += -(floored[sym].log2());
                    for (b, &p) in raw.iter().enumerate() {
                        let target = if b == sym { 1.0 } else { 0.0 };
                        dlogits.set(b * n + k, i, j, (p - target) / LN_2);
                    }
                }
            }
        }
        Ok((bits, dlogits))
    }

    fn backward(
        &self,
        masked: &[ConvLayerParams],
        cache: &TcaeCache,
        dlogits: &FeatureCuboid,
    ) -> Result<Vec<ConvGrads>> {
        let num = self.layers.len();
        let mut grads: Vec<Option<ConvGrads>> = (0..num).map(|_| None).collect();
        let last = num - 1;
        let (mut g, g_last) = conv2d_backward(&cache.conv_inputs[last], &masked[last], dlogits)?;
        grads[last] = Some(g_last);
        for b in (0..self.config.residual_blocks).rev() {
            let l = 2 + 2 * b;
            let (gt_raw, g_l1) = conv2d_backward(&cache.conv_inputs[l + 1], &masked[l + 1], &g)?;
            let t_out = cache.sigmoid_outputs[l].as_ref().expect("first block conv has sigmoid");
            let gt = sigmoid_backward(t_out, &gt_raw)?;
            let (gh, g_l0) = conv2d_backward(&cache.conv_inputs[l], &masked[l], &gt)?;
            grads[l + 1] = Some(g_l1);
            grads[l] = Some(g_l0);
            g = add(&g, &gh)?;
        }
        let g1 = sigmoid_backward(cache.sigmoid_outputs[1].as_ref().expect("layer 1 sigmoid"), &g)?;
        let (g0_raw, grad1) = conv2d_backward(&cache.conv_inputs[1], &masked[1], &g1)?;
        grads[1] = Some(grad1);
        let g0 = sigmoid_backward(cache.sigmoid_outputs[0].as_ref().expect("layer 0 sigmoid"), &g0_raw)?;
        let (_, grad0) = conv2d_backward(&cache.conv_inputs[0], &masked[0], &g0)?;
        grads[0] = Some(grad0);
        let mut out = Vec::with_capacity(num);
        for (l, grad) in grads.into_iter().enumerate() {
            let mut grad = grad.expect("all layers visited");
            let (cin, cout) = self.config.layer_dims(l);
            self.layer_mask(l).mask_gradient(cout, cin, &mut grad.kernel);
            out.push(grad);
        }
        Ok(out)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

fn softmax_floored_from_probs(probs: &mut [f64]) {
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = p.max(PMF_FLOOR);
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

fn softmax_floored(row: &mut [f64]) {
    let probs = softmax(row);
    row.copy_from_slice(&probs);
    softmax_floored_from_probs(row);
}

/// Shifts symbols up by one and zeroes masked positions, reserving symbol 0
/// for "masked out".  The alphabet grows by one.
pub fn remap_codes(o: &CodeCuboid, mask: &ImportanceMask) -> Result<CodeCuboid> {
    if mask.shape() != o.shape() {
        return Err(Error::config("mask shape does not match code cuboid"));
    }
    let (n, h, w) = o.shape();
    let mut out = CodeCuboid::zeros(n, h, w, o.alphabet() + 1)?;
    for k in 0..n {
        for i in 0..h {
            for j in 0..w {
                if mask.get(k, i, j) {
                    out.set(k, i, j, o.get(k, i, j) + 1);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`remap_codes`] on surviving positions.  A reserved symbol 0
/// at a surviving position cannot come from a faithful stream.
pub fn restore_codes(o_prime: &CodeCuboid, mask: &ImportanceMask) -> Result<CodeCuboid> {
    if mask.shape() != o_prime.shape() {
        return Err(Error::config("mask shape does not match code cuboid"));
    }
    let (n, h, w) = o_prime.shape();
    let mut out = CodeCuboid::zeros(n, h, w, o_prime.alphabet() - 1)?;
    for k in 0..n {
        for i in 0..h {
            for j in 0..w {
                if mask.get(k, i, j) {
                    let s = o_prime.get(k, i, j);
                    if s == 0 {
                        return Err(Error::corrupt(format!(
                            "reserved symbol at surviving position ({k},{i},{j})"
                        )));
                    }
                    out.set(k, i, j, s - 1);
                }
            }
        }
    }
    Ok(out)
}

/// Ideal code length in bits: sum over surviving positions of
/// −log2 P(symbol).  Masked-out positions cost nothing.
pub fn entropy_objective(
    pmfs: &PmfCuboid,
    codes: &CodeCuboid,
    mask: &ImportanceMask,
) -> Result<f64> {
    if pmfs.shape() != codes.shape() || mask.shape() != codes.shape() {
        return Err(Error::config("pmf, code and mask shapes must agree"));
    }
    if pmfs.alphabet() != codes.alphabet() {
        return Err(Error::config("pmf and code alphabets must agree"));
    }
    let (n, h, w) = codes.shape();
    let mut bits = 0.0;
    for k in 0..n {
        for i in 0..h {
            for j in 0..w {
                if mask.get(k, i, j) {
                    let p = pmfs.pmf(k, i, j)[codes.get(k, i, j) as usize];
                    bits += -p.max(PMF_FLOOR).log2();
                }
            }
        }
    }
    Ok(bits)
}

#[derive(Debug, Clone)]
pub struct EntropyTrainReport {
    /// Mean bits per surviving symbol, one entry per epoch.
    pub epoch_bits: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub epoch_lr: Vec<f64>,
}

pub const DEFAULT_ENTROPY_LR_LADDER: [f64; 4] = [3e-4, 1e-4, 3.33e-5, 1.11e-5];
pub const DEFAULT_ENTROPY_PATIENCE: usize = 5;

/// Adam training of the context model on a corpus of cuboids with their
/// masks, on the standard rate ladder.  Batches accumulate gradients in
/// index order, so a run is a pure function of (model, corpus, seed)
/// regardless of thread count.
pub fn train_entropy_model(
    model: &mut TcaeModel,
    corpus: &[(CodeCuboid, ImportanceMask)],
    epochs: usize,
    batch_size: usize,
    seed: u64,
    parallel: bool,
) -> Result<EntropyTrainReport> {
    train_entropy_model_with_schedule(
        model,
        corpus,
        epochs,
        batch_size,
        seed,
        parallel,
        DEFAULT_ENTROPY_LR_LADDER.to_vec(),
        DEFAULT_ENTROPY_PATIENCE,
    )
}

/// [`train_entropy_model`] with an explicit rate ladder and plateau
/// patience.
#[allow(clippy::too_many_arguments)]
pub fn train_entropy_model_with_schedule(
    model: &mut TcaeModel,
    corpus: &[(CodeCuboid, ImportanceMask)],
    epochs: usize,
    batch_size: usize,
    seed: u64,
    parallel: bool,
    ladder: Vec<f64>,
    patience: usize,
) -> Result<EntropyTrainReport> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if corpus.is_empty() {
        return Err(Error::config("empty training corpus"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut schedule = PlateauSchedule::new(ladder, patience);
    let mut states: Vec<(AdamState, AdamState)> = model
        .layers()
        .iter()
        .map(|l| {
            (AdamState::new(l.kernel.len(), schedule.lr()), AdamState::new(l.bias.len(), schedule.lr()))
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = EntropyTrainReport { epoch_bits: Vec::new(), epoch_lr: Vec::new() };

    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_bits = 0.0;
        let mut epoch_symbols = 0u64;
        for chunk in order.chunks(batch_size) {
            let masked = model.masked_layers();
            let items = crate::parallel::map_slice(parallel, chunk, |&idx| {
                let (codes, mask) = &corpus[idx];
                model.objective_and_grads(&masked, codes, mask, false)
            });
            let mut total: Option<Vec<ConvGrads>> = None;
            let mut batch_symbols = 0u64;
            for (item, &idx) in items.into_iter().zip(chunk) {
                let (bits, grads) = item?;
                epoch_bits += bits;
                batch_symbols += corpus[idx].1.count();
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.kernel.iter_mut().zip(&g.kernel) {
                                *x += y;
                            }
                            for (x, y) in a.bias.iter_mut().zip(&g.bias) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            epoch_symbols += batch_symbols;
            let total = total.expect("non-empty batch");
            // Normalize to mean bits per symbol so the learning rate is
            // insensitive to batch size and mask density.
            let scale = 1.0 / (batch_symbols.max(1) as f64);
            for (layer, (grads, (ks, bs))) in
                model.layers.iter_mut().zip(total.iter().zip(states.iter_mut()))
            {
                ks.lr = schedule.lr();
                bs.lr = schedule.lr();
                let kg: Vec<f64> = grads.kernel.iter().map(|g| g * scale).collect();
                let bg: Vec<f64> = grads.bias.iter().map(|g| g * scale).collect();
                adam_step(&mut layer.kernel, &kg, ks)?;
                adam_step(&mut layer.bias, &bg, bs)?;
            }
        }
        let mean = epoch_bits / epoch_symbols.max(1) as f64;
        report.epoch_bits.push(mean);
        report.epoch_lr.push(schedule.lr());
        schedule.observe(mean);
        if schedule.finished() {
            break;
        }
    }
    Ok(report)
}
