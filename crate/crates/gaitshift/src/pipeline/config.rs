//! Experiment configuration. A config file is TOML merged over a preset, so
//! any subset of keys may be given; CLI flags are applied last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DomainSpec;
use crate::discovery::Strategy;
use crate::encoder::HyperShape;
use crate::error::{GaitError, Result};
use crate::eval::Convention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size schedule: 200-epoch stages, lr 1e-5, 8x16 batches.
    Full,
    /// Small-scale values that run in minutes on a CPU.
    Desk,
}

impl FromStr for Preset {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(GaitError::param(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub encoder: HyperShape,
    /// Triplet margin.
    pub margin: f64,
    /// Softmax temperature.
    pub tau: f64,
    /// Neighbors per anchor.
    pub k: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub pretrain_epochs: usize,
    /// Identities per pretraining batch.
    pub persons: usize,
    /// Sequences per identity in a pretraining batch.
    pub samples_per_person: usize,
    /// Pretraining batches per epoch; 0 means one pass worth of sequences.
    pub batches_per_epoch: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    /// Last epoch trained at the initial rate.
    pub decay_start: usize,
    pub strategy: Strategy,
    pub bank_momentum: f64,
    /// Anchors per adaptation batch.
    pub anchor_batch: usize,
    /// Leave each anchor's own bank entry out of its softmax.
    pub exclude_self: bool,
    /// Give unselected samples a self-neighborhood term during adaptation.
    pub unselected_self_terms: bool,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            seed: 1,
            encoder: HyperShape::default(),
            margin: 0.2,
            tau: 0.1,
            k: 1,
            rounds: 4,
            epochs_per_round: 200,
            pretrain_epochs: 200,
            persons: 8,
            samples_per_person: 16,
            batches_per_epoch: 0,
            lr: 1e-5,
            decay_factor: 0.1,
            decay_interval: 40,
            decay_start: 80,
            strategy: Strategy::High,
            bank_momentum: 0.5,
            anchor_batch: 16,
            exclude_self: false,
            unselected_self_terms: false,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs_per_round: 20,
            pretrain_epochs: 60,
            persons: 4,
            samples_per_person: 4,
            lr: 0.1,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let counts = [
            ("k", self.k),
            ("rounds", self.rounds),
            ("persons", self.persons),
            ("samples_per_person", self.samples_per_person),
            ("decay_interval", self.decay_interval),
            ("anchor_batch", self.anchor_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(GaitError::param(format!("{name} must be >= 1")));
        }
        if !(self.margin > 0.0) {
            return Err(GaitError::param("margin must be > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(GaitError::param("tau must be > 0"));
        }
        if !(0.0..1.0).contains(&self.bank_momentum) {
            return Err(GaitError::param("bank_momentum must lie in [0, 1)"));
        }
        if !(self.lr >= 0.0) || !(self.decay_factor > 0.0) {
            return Err(GaitError::param("lr must be >= 0 and decay_factor > 0"));
        }
        if self.exclude_self && self.unselected_self_terms {
            return Err(GaitError::param(
                "self-neighborhood terms are undefined when the anchor is excluded from its softmax",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub convention: Convention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Seed of the synthetic benchmark, independent of the training seed.
    pub seed: u64,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Full => TrainConfig::full(),
            Preset::Desk => TrainConfig::desk(),
        };
        let n = match preset {
            Preset::Full => 4,
            Preset::Desk => 2,
        };
        Self {
            preset,
            train,
            data: DataConfig {
                seed: 0,
                source: DomainSpec::source(),
                target: DomainSpec::target(),
            },
            eval: EvalConfig {
                convention: Convention::FirstNGallery { n },
            },
            ablation: AblationConfig {
                seeds: vec![1, 2, 3],
            },
        }
    }

    /// Parses `text` over the preset it names (or `preset_override`, or desk).
    pub fn from_toml(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        let bad = |reason: String| GaitError::Format {
            what: "config".into(),
            reason,
        };
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let preset = match preset_override {
            Some(p) => p,
            None => match file.get("preset") {
                Some(v) => v
                    .as_str()
                    .ok_or_else(|| bad("preset must be a string".into()))?
                    .parse()?,
                None => Preset::Desk,
            },
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).expect("config serializes");
        merge(&mut base, file);
        base.insert("preset".into(), toml::Value::String(preset.to_string()));
        let cfg: Self = base
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.source.validate()?;
        self.data.target.validate()?;
        if self.ablation.seeds.is_empty() {
            return Err(GaitError::param("ablation needs at least one seed"));
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; tables merge, other values replace.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Learning rate at a 1-based epoch: `lr` through `decay_start`, then
/// multiplied by `decay_factor` at `decay_start + 1` and again every
/// `decay_interval` epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.decay_start {
        return cfg.lr;
    }
    let decays = 1 + (epoch - cfg.decay_start - 1) / cfg.decay_interval;
    cfg.lr * cfg.decay_factor.powi(decays as i32)
}
