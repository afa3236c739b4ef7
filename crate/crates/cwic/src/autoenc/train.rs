//! Joint training of encoder, decoder, importance subnet and quantizer.
//!
//! One step runs the full pipeline per image: encode, quantize, mask,
//! decode, then routes three gradient streams.  Distortion flows through
//! the decoder, the mask product and the straight-through quantizer into
//! the encoder.  The rate objective is realized as a two-stage relaxation:
//! a per-position solve picks target importance levels, and a constant-
//! magnitude push moves the importance map toward them, updating only the
//! importance subnet.  The quantization loss updates the interval weights
//! alone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::msssim::ms_ssim_loss_backward;
use super::nets::{DecoderNet, EncoderNet, ImportanceNet, NetworkConfig};
use super::{mse_loss, mse_loss_backward};
use crate::importance::{
    build_mask, importance_grad, quantize_importance, rate_loss, solve_optimal_levels,
    ImportanceConfig, ImportanceMask, QuantizedImportanceMap,
};
use crate::entropy::CodeCuboid;
use crate::quant::{
    monitor_and_reinit, quantization_loss_grad, quantize, LevelHistogramWindow, QuantizerParams,
};
use crate::tensor::{adam_step, mul, AdamState, ConvGrads, FeatureCuboid, PlateauSchedule};
use crate::{Error, Result};

/// Learning-rate ladder for joint training; each drop needs the epoch
/// objective to be non-decreasing for `DEFAULT_PATIENCE` successive epochs.
pub const DEFAULT_LR_LADDER: [f64; 3] = [1e-4, 1e-5, 1e-6];
pub const DEFAULT_PATIENCE: usize = 5;

/// Distortion measure used for the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionKind {
    MeanSquaredError,
    /// Multi-scale similarity with the given scale count.
    MultiScaleSimilarity { scales: usize },
}

/// All learned state of the compression pipeline except the entropy models.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub network: NetworkConfig,
    pub importance: ImportanceConfig,
    pub quant_levels: usize,
    pub encoder: EncoderNet,
    pub importance_net: ImportanceNet,
    pub decoder: DecoderNet,
    pub quantizer: QuantizerParams,
}

impl ModelBundle {
    pub fn init(
        network: NetworkConfig,
        importance: ImportanceConfig,
        quant_levels: usize,
        seed: u64,
    ) -> Result<Self> {
        network.validate()?;
        importance.validate()?;
        if network.code_channels != importance.channels {
            return Err(Error::config(format!(
                "network emits {} code channels but the importance config says {}",
                network.code_channels, importance.channels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderNet::init(&network, &mut rng);
        let importance_net = ImportanceNet::init(&network, &mut rng);
        let decoder = DecoderNet::init(&network, &mut rng);
        let quantizer = QuantizerParams::init(network.code_channels, quant_levels)?;
        Ok(ModelBundle { network, importance, quant_levels, encoder, importance_net, decoder, quantizer })
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.importance.validate()?;
        if self.network.code_channels != self.importance.channels {
            return Err(Error::config("network and importance channel counts differ"));
        }
        if self.quantizer.num_channels() != self.network.code_channels
            || self.quantizer.num_levels() != self.quant_levels
        {
            return Err(Error::config("quantizer shape does not match the bundle config"));
        }
        Ok(())
    }

    /// Encoder-side forward pass: quantizer levels, quantized importance and
    /// the channel mask for one image.
    pub fn analyze(
        &self,
        x: &FeatureCuboid,
    ) -> Result<(CodeCuboid, QuantizedImportanceMap, ImportanceMask)> {
        let (es, e, _) = self.encoder.forward(x)?;
        let (levels, _) = quantize(&e, &self.quantizer)?;
        let (p, _) = self.importance_net.forward(&es)?;
        let qi = quantize_importance(&p, self.importance.levels)?;
        let mask = build_mask(&qi, self.network.code_channels)?;
        Ok((levels, qi, mask))
    }

    /// Decoder-side reconstruction from levels and mask.
    pub fn synthesize(&self, levels: &CodeCuboid, mask: &ImportanceMask) -> Result<FeatureCuboid> {
        let z = crate::quant::dequantize(levels, &mask.to_code_cuboid(), &self.quantizer)?;
        let (xhat, _) = self.decoder.forward(&z)?;
        Ok(xhat)
    }
}

#[derive(Debug, Clone)]
pub struct TrainerOptions {
    pub distortion: DistortionKind,
    /// Forces an all-ones mask and skips every importance-subnet update,
    /// used to warm up encoder, decoder and quantizer alone.
    pub pretrain: bool,
    /// Keeps the quantizer weights fixed.
    pub freeze_quantizer: bool,
    /// Evaluates the images of a batch concurrently.
    pub parallel: bool,
    pub lr_ladder: Vec<f64>,
    pub patience: usize,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            distortion: DistortionKind::MeanSquaredError,
            pretrain: false,
            freeze_quantizer: false,
            parallel: false,
            lr_ladder: DEFAULT_LR_LADDER.to_vec(),
            patience: DEFAULT_PATIENCE,
        }
    }
}

/// Scalars reported for one training step, averaged over the batch.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub distortion: f64,
    /// Hinge excess of kept symbols over the rate budget.
    pub rate_penalty: f64,
    pub quantization: f64,
    /// distortion + gamma * rate_penalty + quantization.
    pub objective: f64,
    /// Mean number of kept code symbols per image.
    pub mean_mask_total: f64,
    pub learning_rate: f64,
    /// Quantizer channels whose top levels were re-spread this step.
    pub reinitialized: Vec<(usize, usize)>,
}

struct PerImage {
    encoder_grads: Vec<ConvGrads>,
    importance_grads: Option<Vec<ConvGrads>>,
    decoder_grads: Vec<ConvGrads>,
    quantizer_grad: Vec<f64>,
    levels: CodeCuboid,
    distortion: f64,
    rate_penalty: f64,
    quantization: f64,
    mask_total: u64,
}

pub struct Trainer {
    bundle: ModelBundle,
    options: TrainerOptions,
    encoder_states: Vec<(AdamState, AdamState)>,
    importance_states: Vec<(AdamState, AdamState)>,
    decoder_states: Vec<(AdamState, AdamState)>,
    quantizer_state: AdamState,
    histogram: LevelHistogramWindow,
    schedule: PlateauSchedule,
}

fn layer_states(layers: &[&crate::tensor::ConvLayerParams], lr: f64) -> Vec<(AdamState, AdamState)> {
    layers
        .iter()
        .map(|l| (AdamState::new(l.kernel.len(), lr), AdamState::new(l.bias.len(), lr)))
        .collect()
}

fn accumulate(sum: &mut [ConvGrads], part: &[ConvGrads]) {
    for (s, p) in sum.iter_mut().zip(part) {
        for (a, b) in s.kernel.iter_mut().zip(&p.kernel) {
            *a += b;
        }
        for (a, b) in s.bias.iter_mut().zip(&p.bias) {
            *a += b;
        }
    }
}

fn scale_grads(grads: &mut [ConvGrads], factor: f64) {
    for g in grads {
        for v in &mut g.kernel {
            *v *= factor;
        }
        for v in &mut g.bias {
            *v *= factor;
        }
    }
}

fn apply_updates(
    layers: Vec<&mut crate::tensor::ConvLayerParams>,
    grads: &[ConvGrads],
    states: &mut [(AdamState, AdamState)],
    lr: f64,
) -> Result<()> {
    for ((layer, g), (ks, bs)) in layers.into_iter().zip(grads).zip(states.iter_mut()) {
        ks.lr = lr;
        bs.lr = lr;
        adam_step(&mut layer.kernel, &g.kernel, ks)?;
        adam_step(&mut layer.bias, &g.bias, bs)?;
    }
    Ok(())
}

fn distortion_and_grad(
    kind: DistortionKind,
    xhat: &FeatureCuboid,
    x: &FeatureCuboid,
) -> Result<(f64, FeatureCuboid)> {
    match kind {
        DistortionKind::MeanSquaredError => Ok((mse_loss(xhat, x)?, mse_loss_backward(xhat, x)?)),
        DistortionKind::MultiScaleSimilarity { scales } => ms_ssim_loss_backward(xhat, x, scales),
    }
}

fn per_image(bundle: &ModelBundle, options: &TrainerOptions, x: &FeatureCuboid) -> Result<PerImage> {
    let (es, e, enc_cache) = bundle.encoder.forward(x)?;
    e.check_finite("encoder output")?;
    let (levels, values) = quantize(&e, &bundle.quantizer)?;

    let importance_forward = if options.pretrain {
        None
    } else {
        let (p, cache) = bundle.importance_net.forward(&es)?;
        p.check_finite("importance map")?;
        Some((p, cache))
    };
    let mask = match &importance_forward {
        None => ImportanceMask::all_ones(e.channels(), e.height(), e.width()),
        Some((p, _)) => {
            let qi = quantize_importance(p, bundle.importance.levels)?;
            build_mask(&qi, bundle.network.code_channels)?
        }
    };
    let mask_f = mask.to_feature_cuboid();
    let z = mul(&values, &mask_f)?;

    let (xhat, dec_cache) = bundle.decoder.forward(&z)?;
    xhat.check_finite("reconstruction")?;
    let (distortion, dxhat) = distortion_and_grad(options.distortion, &xhat, x)?;
    if !distortion.is_finite() {
        return Err(Error::NonFinite("distortion loss".into()));
    }

    let (dz, decoder_grads) = bundle.decoder.backward(&dec_cache, &dxhat)?;
    // The mask is a constant factor and the quantizer backward is the
    // identity, so the encoder sees the masked decoder-input gradient.
    let de = crate::quant::straight_through_grad(&mul(&dz, &mask_f)?);
    let encoder_grads = bundle.encoder.backward(&enc_cache, &de)?;

    let importance_grads = match &importance_forward {
        None => None,
        Some((p, cache)) => {
            let l_star = solve_optimal_levels(&dz, mask.count(), &bundle.importance)?;
            let dp = importance_grad(p, &l_star, bundle.importance.alpha)?;
            Some(bundle.importance_net.backward(cache, &dp)?)
        }
    };

    let (quantization, quantizer_grad) = quantization_loss_grad(&e, &bundle.quantizer)?;
    Ok(PerImage {
        encoder_grads,
        importance_grads,
        decoder_grads,
        quantizer_grad,
        mask_total: mask.count(),
        rate_penalty: rate_loss(&mask, bundle.importance.rate),
        levels,
        distortion,
        quantization,
    })
}

impl Trainer {
    pub fn new(bundle: ModelBundle, options: TrainerOptions) -> Result<Self> {
        bundle.validate()?;
        if options.lr_ladder.is_empty() {
            return Err(Error::config("learning-rate ladder must not be empty"));
        }
        let schedule = PlateauSchedule::new(options.lr_ladder.clone(), options.patience);
        let lr = schedule.lr();
        let encoder_states = layer_states(&bundle.encoder.layers(), lr);
        let importance_states = layer_states(&bundle.importance_net.layers(), lr);
        let decoder_states = layer_states(&bundle.decoder.layers(), lr);
        let quantizer_state = AdamState::new(bundle.quantizer.weights().len(), lr);
        let histogram =
            LevelHistogramWindow::new(bundle.network.code_channels, bundle.quant_levels);
        Ok(Trainer {
            bundle,
            options,
            encoder_states,
            importance_states,
            decoder_states,
            quantizer_state,
            histogram,
            schedule,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.lr()
    }

    /// One optimizer update from a batch of same-sized images.
    pub fn train_step(&mut self, batch: &[FeatureCuboid]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::input("training batch is empty"));
        }
        let results = {
            let bundle = &self.bundle;
            let options = &self.options;
            crate::parallel::map_slice(options.parallel, batch, move |x| {
                per_image(bundle, options, x)
            })
        };
        let mut images = Vec::with_capacity(results.len());
        for r in results {
            images.push(r?);
        }

        let inv = 1.0 / images.len() as f64;
        let mut enc_sum: Vec<ConvGrads> =
            self.bundle.encoder.layers().iter().map(|l| l.grads_zeros()).collect();
        let mut imp_sum: Vec<ConvGrads> =
            self.bundle.importance_net.layers().iter().map(|l| l.grads_zeros()).collect();
        let mut dec_sum: Vec<ConvGrads> =
            self.bundle.decoder.layers().iter().map(|l| l.grads_zeros()).collect();
        let mut quant_sum = vec![0.0; self.bundle.quantizer.weights().len()];
        let mut metrics = StepMetrics {
            distortion: 0.0,
            rate_penalty: 0.0,
            quantization: 0.0,
            objective: 0.0,
            mean_mask_total: 0.0,
            learning_rate: self.schedule.lr(),
            reinitialized: Vec::new(),
        };
        let mut level_batch = Vec::with_capacity(images.len());
        for img in &images {
            accumulate(&mut enc_sum, &img.encoder_grads);
            if let Some(ig) = &img.importance_grads {
                accumulate(&mut imp_sum, ig);
            }
            accumulate(&mut dec_sum, &img.decoder_grads);
            for (a, b) in quant_sum.iter_mut().zip(&img.quantizer_grad) {
                *a += b;
            }
            metrics.distortion += img.distortion * inv;
            metrics.rate_penalty += img.rate_penalty * inv;
            metrics.quantization += img.quantization * inv;
            metrics.mean_mask_total += img.mask_total as f64 * inv;
            level_batch.push(&img.levels);
        }
        scale_grads(&mut enc_sum, inv);
        scale_grads(&mut imp_sum, inv);
        scale_grads(&mut dec_sum, inv);
        for v in &mut quant_sum {
            *v *= inv;
        }
        metrics.objective = metrics.distortion
            + self.bundle.importance.gamma * metrics.rate_penalty
            + metrics.quantization;

        let lr = self.schedule.lr();
        apply_updates(self.bundle.encoder.layers_mut(), &enc_sum, &mut self.encoder_states, lr)?;
        if !self.options.pretrain {
            apply_updates(
                self.bundle.importance_net.layers_mut(),
                &imp_sum,
                &mut self.importance_states,
                lr,
            )?;
        }
        apply_updates(self.bundle.decoder.layers_mut(), &dec_sum, &mut self.decoder_states, lr)?;
        if !self.options.freeze_quantizer {
            self.quantizer_state.lr = lr;
            adam_step(self.bundle.quantizer.weights_mut(), &quant_sum, &mut self.quantizer_state)?;
            self.bundle.quantizer.project_nonnegative();
        }

        self.histogram.push_batch(level_batch)?;
        metrics.reinitialized = monitor_and_reinit(&mut self.bundle.quantizer, &mut self.histogram)?;
        Ok(metrics)
    }

    /// Feeds the epoch objective into the learning-rate schedule.
    /// Returns true when the rate just dropped a rung.
    pub fn end_epoch(&mut self, epoch_objective: f64) -> bool {
        self.schedule.observe(epoch_objective)
    }

    /// True once the last ladder rung has plateaued.
    pub fn finished(&self) -> bool {
        self.schedule.finished()
    }
}

/// Epoch loop over a corpus with seeded shuffling.  Stops early when the
/// learning-rate schedule is exhausted.
pub fn train_autoencoder(
    trainer: &mut Trainer,
    images: &[FeatureCuboid],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<StepMetrics>> {
    if images.is_empty() {
        return Err(Error::input("training corpus is empty"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut all = Vec::new();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_objective = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<FeatureCuboid> = chunk.iter().map(|&i| images[i].clone()).collect();
            let m = trainer.train_step(&batch)?;
            epoch_objective += m.objective;
            batches += 1;
            all.push(m);
        }
        trainer.end_epoch(epoch_objective / batches as f64);
        if trainer.finished() {
            break;
        }
    }
    Ok(all)
}
