//! TOML run configuration.  Unknown keys are rejected so typos surface
//! instead of silently falling back to defaults.

use cwic::autoenc::{NetworkConfig, DEFAULT_LR_LADDER, DEFAULT_MS_SSIM_SCALES, DEFAULT_PATIENCE};
use cwic::entropy::{OrderKind, TcaeConfig, DEFAULT_ENTROPY_LR_LADDER, DEFAULT_ENTROPY_PATIENCE};
use cwic::importance::ImportanceConfig;
use cwic::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub importance: ImportanceSection,
    pub quantizer: QuantizerSection,
    pub training: TrainingSection,
    pub entropy: EntropySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub stage_channels: [usize; 3],
    pub code_channels: usize,
    #[serde(default = "one")]
    pub sub_blocks: usize,
    #[serde(default = "two")]
    pub importance_blocks: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceSection {
    pub levels: usize,
    /// Target fraction of code symbols kept, in (0, 1].
    pub rate: f64,
    /// Weight of the rate penalty in the training objective.
    pub gamma: f64,
    pub xi: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    pub levels: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Joint epochs with the importance branch active.
    pub epochs: usize,
    /// Warm-up epochs with an all-ones mask before the joint phase.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub learning_rates: Option<Vec<f64>>,
    pub patience: Option<usize>,
    pub msssim_scales: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    pub epochs: usize,
    #[serde(default = "eight")]
    pub groups: usize,
    #[serde(default = "three")]
    pub residual_blocks: usize,
    #[serde(default = "five")]
    pub kernel: usize,
    pub learning_rates: Option<Vec<f64>>,
    pub patience: Option<usize>,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn five() -> usize {
    5
}
fn eight() -> usize {
    8
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad run configuration: {e}")))
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            stage_channels: self.network.stage_channels,
            code_channels: self.network.code_channels,
            sub_blocks: self.network.sub_blocks,
            importance_blocks: self.network.importance_blocks,
        }
    }

    pub fn importance(&self) -> Result<ImportanceConfig> {
        let mut cfg = ImportanceConfig::new(
            self.importance.levels,
            self.network.code_channels,
            self.importance.rate,
            self.importance.gamma,
        )?;
        if let Some(xi) = self.importance.xi {
            cfg.xi = xi;
        }
        if let Some(alpha) = self.importance.alpha {
            cfg.alpha = alpha;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn autoenc_ladder(&self) -> Vec<f64> {
        self.training.learning_rates.clone().unwrap_or_else(|| DEFAULT_LR_LADDER.to_vec())
    }

    pub fn autoenc_patience(&self) -> usize {
        self.training.patience.unwrap_or(DEFAULT_PATIENCE)
    }

    pub fn msssim_scales(&self) -> usize {
        self.training.msssim_scales.unwrap_or(DEFAULT_MS_SSIM_SCALES)
    }

    pub fn entropy_ladder(&self) -> Vec<f64> {
        self.entropy.learning_rates.clone().unwrap_or_else(|| DEFAULT_ENTROPY_LR_LADDER.to_vec())
    }

    pub fn entropy_patience(&self) -> usize {
        self.entropy.patience.unwrap_or(DEFAULT_ENTROPY_PATIENCE)
    }

    pub fn code_entropy_config(&self) -> TcaeConfig {
        TcaeConfig {
            channels: self.network.code_channels,
            alphabet: self.quantizer.levels + 1,
            groups: self.entropy.groups,
            residual_blocks: self.entropy.residual_blocks,
            kernel: self.entropy.kernel,
            order: OrderKind::Inclined,
        }
    }

    pub fn importance_entropy_config(&self) -> TcaeConfig {
        TcaeConfig {
            channels: 1,
            alphabet: self.importance.levels,
            groups: self.entropy.groups,
            residual_blocks: self.entropy.residual_blocks,
            kernel: self.entropy.kernel,
            order: OrderKind::Inclined,
        }
    }
}
