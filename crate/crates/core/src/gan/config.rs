use serde::{Deserialize, Serialize};

use crate::encode::VgmParams;
use crate::error::{Error, Result};
use crate::gbdt::GbdtParams;
use crate::nn::AdamConfig;

/// Training hyperparameters. Every field can be overridden from a config
/// file; missing fields keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub secondary_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub lambda_gp: f64,
    pub lambda_al_first: f64,
    pub lambda_al_last: f64,
    pub d_steps: usize,
    pub tau: f64,
    /// Standard deviation of the Gaussian noise added to real discriminator inputs.
    pub real_noise_std: f64,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub vgm: VgmParams,
    pub gbdt: GbdtParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 512,
            noise_dim: 128,
            generator_hidden: vec![128, 64],
            secondary_hidden: vec![32],
            discriminator_hidden: vec![256, 128],
            lambda_gp: 10.0,
            lambda_al_first: 0.75,
            lambda_al_last: 0.10,
            d_steps: 1,
            tau: 0.8,
            real_noise_std: 0.1,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            vgm: VgmParams::default(),
            gbdt: GbdtParams::default(),
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("d_steps", self.d_steps),
            ("vgm.max_components", self.vgm.max_components),
            ("gbdt.num_leaves", self.gbdt.num_leaves),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, widths) in [
            ("generator_hidden", &self.generator_hidden),
            ("secondary_hidden", &self.secondary_hidden),
            ("discriminator_hidden", &self.discriminator_hidden),
        ] {
            if widths.contains(&0) {
                return Err(Error::Config(format!("{name} has a zero width")));
            }
        }
        positive("tau", self.tau)?;
        non_negative("lambda_gp", self.lambda_gp)?;
        non_negative("lambda_al_first", self.lambda_al_first)?;
        non_negative("lambda_al_last", self.lambda_al_last)?;
        non_negative("real_noise_std", self.real_noise_std)?;
        for (name, a) in [("generator_adam", &self.generator_adam), ("discriminator_adam", &self.discriminator_adam)] {
            positive(&format!("{name}.lr"), a.lr)?;
            positive(&format!("{name}.eps"), a.eps)?;
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
                return Err(Error::Config(format!("{name} betas must lie in [0, 1)")));
            }
        }
        positive("gbdt.learning_rate", self.gbdt.learning_rate)?;
        if !(0.0..1.0).contains(&self.gbdt.validation_fraction) {
            return Err(Error::Config("gbdt.validation_fraction must lie in [0, 1)".into()));
        }
        non_negative("vgm.weight_threshold", self.vgm.weight_threshold)?;
        Ok(())
    }
}

/// Auxiliary-loss weights spaced evenly from `first` to `last`.
pub fn aux_coefficients(m: usize, first: f64, last: f64) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![first],
        _ => (0..m)
            .map(|i| {
                if i == m - 1 {
                    last
                } else {
                    first + i as f64 * (last - first) / (m - 1) as f64
                }
            })
            .collect(),
    }
}
