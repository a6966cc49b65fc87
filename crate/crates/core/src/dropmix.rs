//! Stochastic skipping of mixed-sample augmentation.
//!
//! Each step draws one `Rand ~ U[0, 1)` from the step's `DROP` stream and
//! mixes only when `rate < Rand`, so augmentation is applied with
//! probability `1 - rate`. Kernel randomness comes from the step stream's
//! other purpose keys and is therefore the same whatever the rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msda::{self, KernelSpec, Method, MixPlan, SaliencyProvider};
use crate::rng::{keys, RngStream};
use crate::tensor::LabeledBatch;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Batch,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropMixConfig {
    pub rate: f64,
    #[serde(default)]
    pub granularity: Granularity,
    pub kernel: KernelSpec,
}

impl DropMixConfig {
    pub fn new(rate: f64, kernel: KernelSpec) -> Self {
        DropMixConfig {
            rate,
            granularity: Granularity::Batch,
            kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Parameter(format!("dropmix rate {} outside [0, 1]", self.rate)));
        }
        if self.kernel.method == Method::None {
            return Err(Error::Parameter("dropmix needs a mixing method".into()));
        }
        self.kernel.validate()
    }
}

/// The branch condition: mix iff `rate < rand`, strictly.
pub fn should_mix(rate: f64, rand: f64) -> bool {
    rate < rand
}

pub fn dropmix_step(
    batch: &LabeledBatch,
    cfg: &DropMixConfig,
    stream: &RngStream,
    saliency: Option<&dyn SaliencyProvider>,
) -> Result<(LabeledBatch, MixPlan)> {
    cfg.validate()?;
    let mut drop = stream.derive(keys::DROP, 0);
    match cfg.granularity {
        Granularity::Batch => {
            if should_mix(cfg.rate, drop.uniform()) {
                cfg.kernel.apply(batch, stream, saliency)
            } else {
                Ok((batch.clone(), MixPlan::identity(batch.len())))
            }
        }
        Granularity::Sample => {
            let kept: Vec<bool> = (0..batch.len())
                .map(|_| !should_mix(cfg.rate, drop.uniform()))
                .collect();
            if kept.iter().all(|&k| k) {
                return Ok((batch.clone(), MixPlan::identity(batch.len())));
            }
            let (_, mut plan) = cfg.kernel.apply(batch, stream, saliency)?;
            plan.kept_original = Some(kept);
            Ok((msda::apply_plan(batch, &plan)?, plan))
        }
    }
}

/// Label weights actually applied over `n_draws` independent steps: the
/// point mass 1 for dropped steps, the kernel's effective lambda otherwise.
pub fn effective_lambda_distribution(
    cfg: &DropMixConfig,
    n_draws: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if n_draws == 0 {
        return Err(Error::Parameter("n_draws must be >= 1".into()));
    }
    (0..n_draws as u64)
        .map(|i| {
            let step = stream.derive(keys::MIX, i);
            if should_mix(cfg.rate, step.derive(keys::DROP, 0).uniform()) {
                cfg.kernel.sample_lambda_effective(&step)
            } else {
                Ok(1.0)
            }
        })
        .collect()
}

/// Plain Mixup at the given alpha, never skipped; the baseline DropMix is
/// compared against.
pub fn alpha_controlled_step(
    batch: &LabeledBatch,
    alpha: f64,
    stream: &RngStream,
) -> Result<(LabeledBatch, MixPlan)> {
    msda::mixup(batch, alpha, stream)
}
