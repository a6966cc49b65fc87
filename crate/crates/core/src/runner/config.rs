//! Flat `key = value` run and sweep configuration.
//!
//! Every key is optional and falls back to the defaults below; unknown keys
//! are rejected. Arrays (`hidden`, `seeds`, `decay_epochs`, `image`,
//! `sweep_grid`) are the only compound values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::FragilitySpec;
use crate::dropmix::{DropMixConfig, Granularity};
use crate::error::{Error, Result};
use crate::metrics::Condition;
use crate::msda::{ImageShape, KernelSpec, Method};
use crate::trainer::{Augmentation, TrainSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMethod {
    Vanilla,
    Mixup,
    Cutmix,
    SaliencyGrid,
}

impl RunMethod {
    pub fn kernel_method(self) -> Method {
        match self {
            RunMethod::Vanilla => Method::None,
            RunMethod::Mixup => Method::Mixup,
            RunMethod::Cutmix => Method::Cutmix,
            RunMethod::SaliencyGrid => Method::SaliencyGrid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_seed: u64,
    pub n_classes: usize,
    pub n_fragile: usize,
    pub overlap: f64,
    pub magnitude_coding: bool,
    pub n_features: usize,
    pub fragile_scale: f64,
    pub fragile_per_host: usize,
    pub label_noise: f64,
    pub n_train_per_class: usize,
    pub n_eval_per_class: usize,
    /// Pre-built `.mxds` splits; when set, the generator keys above are unused.
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,

    pub hidden: Vec<usize>,

    pub epochs: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,

    pub method: RunMethod,
    pub alpha: f64,
    /// `[channels, height, width]`; inferred from the feature count if absent.
    pub image: Option<Vec<usize>>,
    pub grid: usize,
    /// Absent means pure MSDA (or vanilla).
    pub dropmix_rate: Option<f64>,
    pub granularity: Granularity,

    pub seeds: Vec<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = FragilitySpec::default();
        let sched = TrainSchedule::default();
        RunConfig {
            data_seed: 0,
            n_classes: spec.n_classes,
            n_fragile: spec.n_fragile,
            overlap: spec.overlap,
            magnitude_coding: spec.magnitude_coding,
            n_features: spec.n_features,
            fragile_scale: spec.fragile_scale,
            fragile_per_host: spec.fragile_per_host,
            label_noise: 0.4,
            n_train_per_class: 100,
            n_eval_per_class: 500,
            train_path: None,
            eval_path: None,
            hidden: vec![64, 64],
            epochs: sched.epochs,
            learning_rate: sched.learning_rate,
            decay_factor: sched.decay_factor,
            decay_epochs: sched.decay_epochs,
            momentum: sched.momentum,
            weight_decay: sched.weight_decay,
            batch_size: sched.batch_size,
            method: RunMethod::Vanilla,
            alpha: 1.0,
            image: None,
            grid: 2,
            dropmix_rate: None,
            granularity: Granularity::Batch,
            seeds: vec![0, 1, 2, 3, 4],
            out: None,
        }
    }
}

/// Parses `text` as a flat TOML table after applying `key=value` overrides.
/// Override values are read as TOML literals, falling back to strings.
pub(crate) fn parse_table(text: &str, overrides: &[(String, String)]) -> Result<toml::Table> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        let value = format!("x = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("x"))
            .unwrap_or_else(|| toml::Value::String(v.clone()));
        table.insert(k.clone(), value);
    }
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(Error::Config(format!("key {k}: nested tables are not allowed")));
    }
    Ok(table)
}

/// Splits `key=value` strings.
pub fn parse_overrides(pairs: &[String]) -> Result<Vec<(String, String)>> {
    pairs
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override {p:?} is not key=value")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_table(parse_table(text, overrides)?)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    /// Canonical text form; `out` is omitted.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        if self.train_path.is_some() != self.eval_path.is_some() {
            return Err(Error::Config("train_path and eval_path must be given together".into()));
        }
        if self.train_path.is_none() {
            self.fragility().validate()?;
            if self.n_train_per_class == 0 || self.n_eval_per_class == 0 {
                return Err(Error::Config("per-class sample counts must be >= 1".into()));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if let Some(img) = &self.image {
            if img.len() != 3 {
                return Err(Error::Config("image must be [channels, height, width]".into()));
            }
        }
        self.schedule().validate()?;
        if self.method != RunMethod::Vanilla {
            if self.train_path.is_none() {
                self.augmentation(self.n_features)?.validate()?;
            } else {
                KernelSpec::new(Method::Mixup, self.alpha).validate()?;
                if let Some(r) = self.dropmix_rate {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::Parameter(format!("dropmix rate {r} outside [0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn fragility(&self) -> FragilitySpec {
        FragilitySpec {
            n_classes: self.n_classes,
            n_fragile: self.n_fragile,
            overlap: self.overlap,
            magnitude_coding: self.magnitude_coding,
            n_features: self.n_features,
            fragile_scale: self.fragile_scale,
            fragile_per_host: self.fragile_per_host,
            label_noise: self.label_noise,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            decay_factor: self.decay_factor,
            decay_epochs: self.decay_epochs.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    pub fn widths(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut w = vec![n_features];
        w.extend(&self.hidden);
        w.push(n_classes);
        w
    }

    pub fn kernel(&self, n_features: usize) -> KernelSpec {
        let image = match &self.image {
            Some(v) if v.len() == 3 => Some(ImageShape::new(v[0], v[1], v[2])),
            _ => ImageShape::infer(n_features),
        };
        KernelSpec {
            method: self.method.kernel_method(),
            alpha: self.alpha,
            image,
            grid: self.grid,
        }
    }

    /// Vanilla ignores every DropMix field.
    pub fn augmentation(&self, n_features: usize) -> Result<Augmentation> {
        let aug = match (self.method, self.dropmix_rate) {
            (RunMethod::Vanilla, _) => Augmentation::None,
            (_, None) => Augmentation::Msda(self.kernel(n_features)),
            (_, Some(rate)) => Augmentation::DropMix(DropMixConfig {
                rate,
                granularity: self.granularity,
                kernel: self.kernel(n_features),
            }),
        };
        aug.validate()?;
        Ok(aug)
    }

    pub fn condition(&self) -> Condition {
        match (self.method, self.dropmix_rate) {
            (RunMethod::Vanilla, _) => Condition::Vanilla,
            (_, None) => Condition::Msda,
            (_, Some(_)) => Condition::MsdaDropMix,
        }
    }

    /// Copy with training method and DropMix fields reset to vanilla.
    pub fn as_vanilla(&self) -> RunConfig {
        RunConfig {
            method: RunMethod::Vanilla,
            dropmix_rate: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DropmixRate,
    Alpha,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

impl SweepConfig {
    pub fn new(base: RunConfig, axis: SweepAxis, grid: Vec<f64>) -> Result<Self> {
        let cfg = SweepConfig { base, axis, grid };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same format as a run config plus `sweep_axis` and `sweep_grid`.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = parse_table(text, overrides)?;
        let axis: SweepAxis = match table.remove("sweep_axis") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => SweepAxis::DropmixRate,
        };
        let grid: Vec<f64> = match table.remove("sweep_grid") {
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| {
                    v.as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| Error::Config("sweep_grid must hold numbers".into()))
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(Error::Config("sweep_grid must be an array".into())),
            None => vec![0.1, 0.2, 0.3, 0.4, 0.5],
        };
        SweepConfig::new(RunConfig::from_table(table)?, axis, grid)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep grid must be sorted and distinct".into()));
        }
        if self.base.method == RunMethod::Vanilla {
            return Err(Error::Config("a sweep needs a mixing method".into()));
        }
        match self.axis {
            SweepAxis::DropmixRate if self.grid.iter().any(|v| !(0.0..=1.0).contains(v)) => {
                Err(Error::Config("dropmix rates must lie in [0, 1]".into()))
            }
            SweepAxis::Alpha if self.grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
                Err(Error::Config("alpha values must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Run config for one grid value.
    pub fn point(&self, value: f64) -> RunConfig {
        let mut cfg = self.base.clone();
        match self.axis {
            SweepAxis::DropmixRate => cfg.dropmix_rate = Some(value),
            SweepAxis::Alpha => cfg.alpha = value,
        }
        cfg
    }
}
