//! Experiment configuration: one TOML document with a complete default
//! set drives data generation, all three training stages, and scoring.

use serde::{Deserialize, Serialize};

use crate::domain::{LossWeights, ScaleSchedule};
use crate::scoring::DabThresholds;
use crate::translator::TranslatorConfig;
use crate::var::VarConfig;
use crate::vqvae::VqVaeConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub image_size: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_nuclei: usize,
    pub positivity_rate: f64,
    pub texture_scale: f64,
    /// Misalignment injected into training pairs (pixels); 0 keeps the
    /// pairs registered.
    pub misalign_magnitude: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            n_train: 64,
            n_eval: 16,
            n_nuclei: 24,
            positivity_rate: 0.5,
            texture_scale: 1.0,
            misalign_magnitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub latent_channels: usize,
    pub num_down: usize,
    pub groups: usize,
    pub vocab: usize,
    pub disc_base: usize,
    pub dropout: f64,
    pub ema_decay: f64,
    pub translator_base: usize,
    pub var_dim: usize,
    pub var_layers: usize,
    pub var_heads: usize,
    pub var_mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            latent_channels: 32,
            num_down: 4,
            groups: 8,
            vocab: 4096,
            disc_base: 32,
            dropout: 0.5,
            ema_decay: 0.99,
            translator_base: 64,
            var_dim: 256,
            var_layers: 4,
            var_heads: 4,
            var_mlp_ratio: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// `dense` (every square size min..=max), `powers` (1,2,4..max),
    /// or `single` (max only).
    pub kind: String,
    pub min: usize,
    pub max: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: "dense".into(),
            min: 8,
            max: 16,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<ScaleSchedule, String> {
        match self.kind.as_str() {
            "dense" => {
                if self.min == 0 || self.min > self.max {
                    return Err(format!(
                        "schedule.min {} must be in 1..=schedule.max {}",
                        self.min, self.max
                    ));
                }
                Ok(ScaleSchedule::dense_square(self.min, self.max))
            }
            "powers" => Ok(ScaleSchedule::powers_of_two(self.max)),
            "single" => Ok(ScaleSchedule::single((self.max, self.max))),
            other => Err(format!(
                "schedule.kind {other:?} not one of dense | powers | single"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs_vqvae: usize,
    pub epochs_translator: usize,
    pub epochs_var: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            seed: 7,
            epochs_vqvae: 20,
            epochs_translator: 10,
            epochs_var: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub scoring: DabThresholds,
}

impl ExperimentConfig {
    /// Desk-scale preset: small images, shallow stacks, a dense half-
    /// to-full schedule, and a learning rate sized for a few hundred
    /// optimizer steps.
    pub fn desk_bench() -> Self {
        let mut cfg = Self::default();
        cfg.data.image_size = 64;
        cfg.data.n_train = 64;
        cfg.data.n_eval = 16;
        cfg.model.base_channels = 32;
        cfg.model.latent_channels = 32;
        cfg.model.num_down = 3;
        cfg.model.vocab = 512;
        cfg.model.disc_base = 16;
        cfg.model.dropout = 0.0;
        cfg.model.translator_base = 32;
        cfg.model.var_dim = 96;
        cfg.model.var_layers = 2;
        cfg.model.var_heads = 4;
        cfg.model.var_mlp_ratio = 2;
        cfg.schedule = ScheduleConfig {
            kind: "dense".into(),
            min: 4,
            max: 8,
        };
        cfg.train.lr = 2e-3;
        cfg
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.data.image_size >> self.model.num_down;
        (g, g)
    }

    pub fn vq_config(&self) -> Result<VqVaeConfig, String> {
        let schedule = self.schedule.build()?;
        let cfg = VqVaeConfig {
            image_size: self.data.image_size,
            base_channels: self.model.base_channels,
            latent_channels: self.model.latent_channels,
            num_down: self.model.num_down,
            groups: self.model.groups,
            vocab: self.model.vocab,
            schedule,
            dropout: self.model.dropout,
            ema_decay: self.model.ema_decay,
            disc_base: self.model.disc_base,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn translator_config(&self) -> TranslatorConfig {
        TranslatorConfig {
            channels: self.model.latent_channels,
            base: self.model.translator_base,
            groups: self.model.groups,
        }
    }

    pub fn var_config(&self) -> Result<VarConfig, String> {
        Ok(VarConfig {
            dim: self.model.var_dim,
            layers: self.model.var_layers,
            heads: self.model.var_heads,
            mlp_ratio: self.model.var_mlp_ratio,
            vocab: self.model.vocab,
            latent_channels: self.model.latent_channels,
            schedule: self.schedule.build()?,
            grid: self.grid(),
        })
    }

    /// Validates every section, naming the offending key on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.data.image_size % 16 != 0 {
            return Err(format!(
                "data.image_size {} must be a multiple of 16",
                self.data.image_size
            ));
        }
        if self.data.n_train == 0 {
            return Err("data.n_train must be at least 1".into());
        }
        self.weights
            .validate()
            .map_err(|e| format!("weights.{e}"))?;
        self.scoring
            .validate()
            .map_err(|e| format!("scoring: {e}"))?;
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(format!("train.lr {} must be positive", self.train.lr));
        }
        if self.train.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if self.model.var_dim % self.model.var_heads != 0 {
            return Err(format!(
                "model.var_heads {} must divide model.var_dim {}",
                self.model.var_heads, self.model.var_dim
            ));
        }
        self.vq_config()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
