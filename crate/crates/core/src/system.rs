//! Device profiles, the uplink channel and the per-round latency/energy model.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};

/// Static parameters of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    /// `D_{k,c}` for every class.
    pub samples_per_class: Vec<usize>,
    /// CPU clock in cycles/s.
    pub cpu_freq: f64,
    pub flops_per_cycle: f64,
    /// FLOPs needed to process one sample.
    pub flops_per_sample: f64,
    /// Effective switched capacitance, J·s²/cycle³.
    pub power_coeff: f64,
    /// Watts.
    pub max_power: f64,
    /// Joules over the whole horizon.
    pub energy_budget: f64,
    /// Metres to the server.
    pub distance: f64,
}

impl DeviceProfile {
    pub fn total_samples(&self) -> usize {
        self.samples_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("device[{}].{}", self.id, name);
        let positive = [
            ("cpu_freq", self.cpu_freq),
            ("flops_per_cycle", self.flops_per_cycle),
            ("flops_per_sample", self.flops_per_sample),
            ("power_coeff", self.power_coeff),
            ("max_power", self.max_power),
            ("energy_budget", self.energy_budget),
            ("distance", self.distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field(name), format!("must be positive, got {v}")));
            }
        }
        if self.total_samples() == 0 {
            return Err(Error::config(field("samples_per_class"), "device holds no samples"));
        }
        Ok(())
    }
}

/// Large-scale path loss with Rayleigh power fading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// `h0`, linear.
    pub path_loss_const: f64,
    /// `d0` in metres.
    pub ref_distance: f64,
    pub path_loss_exp: f64,
    /// `N0` in W/Hz.
    pub noise_psd: f64,
    /// `B` in Hz.
    pub bandwidth: f64,
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("channel.path_loss_const", self.path_loss_const),
            ("channel.ref_distance", self.ref_distance),
            ("channel.path_loss_exp", self.path_loss_exp),
            ("channel.noise_psd", self.noise_psd),
            ("channel.bandwidth", self.bandwidth),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if self.path_loss_exp < 1.0 {
            return Err(Error::config("channel.path_loss_exp", "must be at least 1"));
        }
        Ok(())
    }

    /// Gain for a given small-scale fading realization `rho`.
    pub fn gain(&self, distance: f64, rho: f64) -> f64 {
        self.path_loss_const * rho * (self.ref_distance / distance).powf(self.path_loss_exp)
    }

    /// Expected gain, `E[rho] = 1`.
    pub fn mean_gain(&self, distance: f64) -> f64 {
        self.gain(distance, 1.0)
    }
}

/// Channel gains of all devices in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub round: usize,
    pub gains: Vec<f64>,
}

/// What a device uploads each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    /// `Q`, parameters in the knowledge upload.
    pub knowledge_params: usize,
    /// `q`, bits per parameter.
    pub bits_per_param: u32,
    /// Parameters a model-exchange scheme would upload instead.
    pub model_params: usize,
}

impl PayloadSpec {
    /// A `classes × feature_dim` prototype matrix.
    pub fn for_knowledge(classes: usize, feature_dim: usize, bits_per_param: u32, model_params: usize) -> Self {
        Self { knowledge_params: classes * feature_dim, bits_per_param, model_params }
    }

    /// `Q·q`.
    pub fn bits(&self) -> f64 {
        self.knowledge_params as f64 * f64::from(self.bits_per_param)
    }

    pub fn bytes(&self) -> u64 {
        (self.knowledge_params as u64 * u64::from(self.bits_per_param)).div_ceil(8)
    }

    pub fn model_bytes(&self) -> u64 {
        (self.model_params as u64 * u64::from(self.bits_per_param)).div_ceil(8)
    }

    /// Upload volume of knowledge exchange relative to model exchange.
    pub fn overhead_ratio(&self) -> f64 {
        self.knowledge_params as f64 / self.model_params as f64
    }
}

/// Realize `h_{k,t} = h0 · rho · (d0/d_k)^v` with `rho ~ Exp(1)` for every
/// device. Each (device, round) pair owns its own random stream.
pub fn draw_channel(model: &ChannelModel, profiles: &[DeviceProfile], round: usize, seed: u64) -> ChannelDraw {
    let gains = profiles
        .iter()
        .map(|p| {
            let mut rng = keyed_rng(seed, Stream::Channel, p.id as u64, round as u64);
            let rho: f64 = Exp1.sample(&mut rng);
            model.gain(p.distance, rho)
        })
        .collect();
    ChannelDraw { round, gains }
}

/// `T^L = τ D_k C_k / (f_k n_k)`.
pub fn compute_latency(profile: &DeviceProfile, local_iters: u32) -> f64 {
    f64::from(local_iters) * profile.total_samples() as f64 * profile.flops_per_sample
        / (profile.cpu_freq * profile.flops_per_cycle)
}

/// `E^L = κ τ D_k C_k f_k² / n_k`.
pub fn compute_energy(profile: &DeviceProfile, local_iters: u32) -> f64 {
    profile.power_coeff
        * f64::from(local_iters)
        * profile.total_samples() as f64
        * profile.flops_per_sample
        * profile.cpu_freq
        * profile.cpu_freq
        / profile.flops_per_cycle
}

/// Shannon rate `θB log2(1 + p h / (θ B N0))` in bits/s.
pub fn uplink_rate(share: f64, power: f64, gain: f64, model: &ChannelModel) -> f64 {
    if share <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    let band = share * model.bandwidth;
    band * (power * gain / (band * model.noise_psd)).ln_1p() / std::f64::consts::LN_2
}

/// `Q q / r`; `None` when nothing can be sent.
pub fn upload_latency(payload: &PayloadSpec, rate: f64) -> Option<f64> {
    if rate > 0.0 {
        Some(payload.bits() / rate)
    } else {
        None
    }
}

/// Energy to push the payload in exactly `upload_time` seconds over share
/// `θ`: `θ B T N0 / h · (2^{Qq/(θ B T)} − 1)`.
pub fn upload_energy(share: f64, upload_time: f64, gain: f64, payload: &PayloadSpec, model: &ChannelModel) -> f64 {
    let band = share * model.bandwidth;
    let exponent = payload.bits() / (band * upload_time) * std::f64::consts::LN_2;
    band * upload_time * model.noise_psd / gain * exponent.exp_m1()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
