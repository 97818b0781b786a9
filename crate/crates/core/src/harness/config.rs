//! TOML experiment configuration.
//!
//! The file keeps decibel quantities as written; [`ExperimentConfig::channel_model`]
//! and [`ExperimentConfig::max_power_watts`] hand out SI values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{HyperParams, ModelSpec};
use crate::scheduler::SchedulePattern;
use crate::system::{db_to_linear, dbm_to_watts, ChannelModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Proposed,
    RoundRobin,
    Myopic,
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// `T`.
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    /// Evaluate accuracy every this many rounds (and always at the last).
    #[serde(default = "defaults::one")]
    pub eval_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub devices: DeviceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub kind: SchedulerKind,
    /// `V`.
    pub tradeoff_v: f64,
    pub round_robin_window: usize,
    pub pattern: SchedulePattern,
    /// Average cohort size of the patterns.
    pub pattern_mean: usize,
    /// First-round size of the descending pattern.
    pub pattern_peak: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::Proposed,
            tradeoff_v: 0.01,
            round_robin_window: 5,
            pattern: SchedulePattern::Uniform,
            pattern_mean: 10,
            pattern_peak: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "defaults::dataset_kind")]
    pub kind: DatasetKind,
    /// `K`; required.
    pub num_devices: Option<usize>,
    /// `m`.
    #[serde(default = "defaults::classes_per_device")]
    pub classes_per_device: usize,
    /// `C`.
    #[serde(default = "defaults::num_classes")]
    pub num_classes: usize,
    /// Synthetic input dimension `d`.
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    /// Synthetic training samples per class.
    #[serde(default = "defaults::train_per_class")]
    pub train_per_class: usize,
    /// Synthetic test pool per class.
    #[serde(default = "defaults::test_per_class")]
    pub test_per_class: usize,
    /// Test samples drawn for every device.
    #[serde(default = "defaults::test_per_device")]
    pub test_per_device: usize,
    #[serde(default = "defaults::cluster_spread")]
    pub cluster_spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `p`.
    pub feature_dim: usize,
    /// Extractor hidden widths; device `k` uses entry `k mod len`.
    pub extractor_hidden: Vec<Vec<usize>>,
    pub predictor_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { feature_dim: 8, extractor_hidden: vec![vec![32], vec![24], vec![32, 16]], predictor_hidden: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    /// `h0` in dB.
    pub path_loss_db: f64,
    pub ref_distance_m: f64,
    pub path_loss_exp: f64,
    /// `q`.
    pub bits_per_param: u32,
    /// Size of the model a weight-sharing scheme would upload.
    pub model_params: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            bandwidth_hz: 5e6,
            noise_psd_dbm_hz: -174.0,
            path_loss_db: -30.0,
            ref_distance_m: 1.0,
            path_loss_exp: 2.0,
            bits_per_param: 32,
            model_params: 553_406,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub cpu_freqs_ghz: Vec<f64>,
    pub flops_per_cycle: f64,
    pub flops_per_sample: f64,
    pub power_coeff: f64,
    pub max_power_dbm: f64,
    /// `E_k / T` in joules.
    pub energy_per_round: f64,
    pub deadline_s: f64,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            cpu_freqs_ghz: vec![0.85, 1.12, 1.2, 1.3],
            flops_per_cycle: 1.0,
            flops_per_sample: 553_406.0,
            power_coeff: 1e-28,
            max_power_dbm: 30.0,
            energy_per_round: 0.01,
            deadline_s: 1.0,
            cell_radius_m: 500.0,
            min_distance_m: 10.0,
        }
    }
}

mod defaults {
    use super::DatasetKind;

    pub fn seed() -> u64 {
        1
    }
    pub fn horizon() -> usize {
        50
    }
    pub fn one() -> usize {
        1
    }
    pub fn dataset_kind() -> DatasetKind {
        DatasetKind::Synthetic
    }
    pub fn classes_per_device() -> usize {
        2
    }
    pub fn num_classes() -> usize {
        10
    }
    pub fn input_dim() -> usize {
        20
    }
    pub fn train_per_class() -> usize {
        100
    }
    pub fn test_per_class() -> usize {
        200
    }
    pub fn test_per_device() -> usize {
        100
    }
    pub fn cluster_spread() -> f64 {
        0.5
    }
}

impl ExperimentConfig {
    /// Defaults everywhere, with `num_devices` devices.
    pub fn synthetic(num_devices: usize) -> Self {
        let text = format!("[dataset]\nnum_devices = {num_devices}\n");
        let cfg: Self = toml::from_str(&text).expect("defaults parse");
        cfg
    }

    pub fn num_devices(&self) -> usize {
        self.dataset.num_devices.unwrap_or(0)
    }

    pub fn channel_model(&self) -> ChannelModel {
        let c = &self.channel;
        ChannelModel {
            path_loss_const: db_to_linear(c.path_loss_db),
            ref_distance: c.ref_distance_m,
            path_loss_exp: c.path_loss_exp,
            noise_psd: dbm_to_watts(c.noise_psd_dbm_hz),
            bandwidth: c.bandwidth_hz,
        }
    }

    pub fn max_power_watts(&self) -> f64 {
        dbm_to_watts(self.devices.max_power_dbm)
    }

    /// Model architecture of device `k`.
    pub fn model_spec(&self, k: usize, input_dim: usize) -> ModelSpec {
        let variants = &self.model.extractor_hidden;
        ModelSpec {
            input_dim,
            extractor_hidden: variants[k % variants.len()].clone(),
            feature_dim: self.model.feature_dim,
            predictor_hidden: self.model.predictor_hidden.clone(),
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let k = d.num_devices.ok_or_else(|| Error::config("dataset.num_devices", "is required"))?;
        if k == 0 {
            return Err(Error::config("dataset.num_devices", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be at least 1"));
        }
        if d.num_classes < 2 {
            return Err(Error::config("dataset.num_classes", "must be at least 2"));
        }
        if d.classes_per_device == 0 || d.classes_per_device > d.num_classes {
            return Err(Error::config("dataset.classes_per_device", "must lie in [1, num_classes]"));
        }
        if !(d.classes_per_device * k).is_multiple_of(d.num_classes) {
            return Err(Error::config(
                "dataset.classes_per_device",
                format!("classes_per_device · num_devices must be a multiple of num_classes ({})", d.num_classes),
            ));
        }
        match d.kind {
            DatasetKind::Synthetic => {
                if d.input_dim == 0 {
                    return Err(Error::config("dataset.input_dim", "must be at least 1"));
                }
                if d.train_per_class == 0 || d.test_per_class == 0 {
                    return Err(Error::config("dataset.train_per_class", "per-class sizes must be at least 1"));
                }
                if !(d.cluster_spread >= 0.0 && d.cluster_spread.is_finite()) {
                    return Err(Error::config("dataset.cluster_spread", "must be finite and non-negative"));
                }
            }
            DatasetKind::Mnist => {
                if d.mnist_dir.is_none() {
                    return Err(Error::config("dataset.mnist_dir", "is required for the mnist dataset"));
                }
                if d.num_classes != 10 {
                    return Err(Error::config("dataset.num_classes", "mnist has 10 classes"));
                }
            }
        }
        if self.model.feature_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be at least 1"));
        }
        if self.model.extractor_hidden.is_empty() {
            return Err(Error::config("model.extractor_hidden", "needs at least one variant (use [[]] for none)"));
        }
        self.hyper.validate()?;

        let s = &self.scheduler;
        if !(s.tradeoff_v >= 0.0 && s.tradeoff_v.is_finite()) {
            return Err(Error::config("scheduler.tradeoff_v", "must be finite and non-negative"));
        }
        if s.round_robin_window == 0 {
            return Err(Error::config("scheduler.round_robin_window", "must be at least 1"));
        }
        if s.pattern_peak < s.pattern_mean {
            return Err(Error::config("scheduler.pattern_peak", "must be at least pattern_mean"));
        }

        let c = &self.channel;
        if c.bits_per_param == 0 {
            return Err(Error::config("channel.bits_per_param", "must be at least 1"));
        }
        if c.model_params == 0 {
            return Err(Error::config("channel.model_params", "must be at least 1"));
        }
        self.channel_model().validate()?;

        let dv = &self.devices;
        if dv.cpu_freqs_ghz.is_empty() || dv.cpu_freqs_ghz.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("devices.cpu_freqs_ghz", "needs at least one positive frequency"));
        }
        let positive = [
            ("devices.flops_per_cycle", dv.flops_per_cycle),
            ("devices.flops_per_sample", dv.flops_per_sample),
            ("devices.power_coeff", dv.power_coeff),
            ("devices.energy_per_round", dv.energy_per_round),
            ("devices.deadline_s", dv.deadline_s),
            ("devices.cell_radius_m", dv.cell_radius_m),
            ("devices.min_distance_m", dv.min_distance_m),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if dv.min_distance_m > dv.cell_radius_m {
            return Err(Error::config("devices.min_distance_m", "exceeds the cell radius"));
        }
        if !dv.max_power_dbm.is_finite() {
            return Err(Error::config("devices.max_power_dbm", "must be finite"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path).map_err(Error::io_at(path))?, path)
}
