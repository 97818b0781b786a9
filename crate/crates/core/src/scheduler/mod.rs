//! Online device scheduling with per-device virtual energy queues.
//!
//! Each device carries a backlog that grows by the energy it spent in a round
//! and drains by its per-round budget share `E_k/T`. A round's decision
//! minimizes the drift-plus-penalty surrogate
//! `−Vγ_t Σ_{k∈S} D_k + Σ_{k∈S} q_k E_k` over the prefixes of a ranking.

mod baselines;
mod bounds;

pub use baselines::{
    myopic_schedule, pattern_schedule, pattern_sizes, schedule_fixed_set, unit_weight_links, RoundRobin,
    SchedulePattern,
};
pub use bounds::{long_run_energy_bound, EnergyBoundReport};

use crate::allocation::{allocate_links, AllocationResult, Candidate, Link, RoundSetup};
use crate::error::{Error, Result};
use crate::numerics::Tolerance;
use crate::system::{compute_energy, upload_energy, ChannelDraw, DeviceProfile};

/// Virtual queue backlogs `q_k(t)`, in joules.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueueState {
    pub backlogs: Vec<f64>,
    pub round: usize,
}

impl VirtualQueueState {
    pub fn new(devices: usize) -> Self {
        Self { backlogs: vec![0.0; devices], round: 0 }
    }

    pub fn max_backlog(&self) -> f64 {
        self.backlogs.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    /// `V ≥ 0`.
    pub tradeoff_v: f64,
    /// `γ_t` for every round of the horizon.
    pub round_weights: Vec<f64>,
    pub setup: RoundSetup,
    pub tol: Tolerance,
}

impl SchedulerConfig {
    /// `γ_t = 1/(t+1)`.
    pub fn inverse_round_weights(horizon: usize) -> Vec<f64> {
        (0..horizon).map(|t| 1.0 / (t as f64 + 1.0)).collect()
    }

    pub fn horizon(&self) -> usize {
        self.round_weights.len()
    }

    pub fn gamma(&self, round: usize) -> f64 {
        self.round_weights[round]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tradeoff_v >= 0.0) {
            return Err(Error::config("scheduler.tradeoff_v", "must be non-negative"));
        }
        if self.round_weights.is_empty() {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if let Some(g) = self.round_weights.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::config("scheduler.round_weights", format!("weights must be positive, got {g}")));
        }
        Ok(())
    }
}

/// Outcome of one scheduling round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDecision {
    pub round: usize,
    /// Scheduled devices, in the order they were admitted.
    pub scheduled: Vec<usize>,
    pub allocation: AllocationResult,
    /// Drift-plus-penalty value of `scheduled`.
    pub objective: f64,
}

impl RoundDecision {
    pub fn empty(round: usize) -> Self {
        Self { round, scheduled: Vec::new(), allocation: AllocationResult::default(), objective: 0.0 }
    }

    /// Realized energy of `device` this round; zero if it was not scheduled.
    pub fn energy_of(&self, device: usize) -> f64 {
        self.allocation.get(device).map_or(0.0, |d| d.energy)
    }

    pub fn data_volume(&self, profiles: &[DeviceProfile]) -> usize {
        self.scheduled.iter().map(|&k| profiles[k].total_samples()).sum()
    }
}

/// `q_k(t+1) = max{q_k(t) + α_k E_k − E_k/T, 0}`.
pub fn update_queues(
    state: &VirtualQueueState,
    decision: &RoundDecision,
    profiles: &[DeviceProfile],
    horizon: usize,
) -> VirtualQueueState {
    let backlogs = state
        .backlogs
        .iter()
        .zip(profiles)
        .map(|(&q, p)| {
            let arrival = decision.energy_of(p.id);
            (q + arrival - p.energy_budget / horizon as f64).max(0.0)
        })
        .collect();
    VirtualQueueState { backlogs, round: state.round + 1 }
}

/// Equal-share energy estimate used to rank devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub energy: f64,
    /// Whether the equal share can be served within `max_power`.
    pub within_power_limit: bool,
}

/// `Ē = E^L + E^U` at share `1/K` and upload time `T_max − T^L`.
pub fn estimate_energy(
    profile: &DeviceProfile,
    gain: f64,
    devices: usize,
    setup: &RoundSetup,
) -> Result<EnergyEstimate> {
    let window = setup.upload_window(profile)?;
    let share = 1.0 / devices as f64;
    let upload = upload_energy(share, window, gain, &setup.payload, &setup.channel);
    Ok(EnergyEstimate {
        energy: compute_energy(profile, setup.local_iters) + upload,
        within_power_limit: upload / window <= profile.max_power,
    })
}

/// Ranking entry for one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankInput {
    pub device: usize,
    pub samples: usize,
    pub queue: f64,
    pub estimate: f64,
}

/// Ascending order of `Δ_k = −Vγ_t D_k + q_k Ē_k`, ties by device id.
pub fn rank_devices(inputs: &[RankInput], tradeoff_v: f64, gamma: f64) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> =
        inputs.iter().map(|r| (-tradeoff_v * gamma * r.samples as f64 + r.queue * r.estimate, r.device)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, k)| k).collect()
}

/// `−Vγ_t Σ D_k + Σ q_k E_k` for `set` under `allocation`.
pub fn drift_plus_penalty(
    set: &[usize],
    allocation: &AllocationResult,
    queues: &[f64],
    profiles: &[DeviceProfile],
    tradeoff_v: f64,
    gamma: f64,
) -> f64 {
    let volume: f64 = set.iter().map(|&k| profiles[k].total_samples() as f64).sum();
    let drift: f64 = set.iter().map(|&k| queues[k] * allocation.get(k).map_or(0.0, |d| d.energy)).sum();
    -tradeoff_v * gamma * volume + drift
}

/// Devices that can finish local training and upload within the deadline this
/// round, resolved against their current queues.
pub fn feasible_links<'a>(
    queues: &[f64],
    profiles: &'a [DeviceProfile],
    channel: &ChannelDraw,
    config: &SchedulerConfig,
) -> Vec<Link<'a>> {
    profiles
        .iter()
        .filter_map(|p| {
            let candidate = Candidate { profile: p, gain: channel.gains[p.id], queue: queues[p.id] };
            Link::new(candidate, &config.setup, config.tol).ok()
        })
        .collect()
}

/// Energy-aware online scheduling for one round.
///
/// Devices are ranked by their equal-share estimate and admitted one at a
/// time; every prefix is allocated optimally and scored, and growth stops once
/// the newest device's own term turns positive or the prefix no longer fits in
/// the band. The best-scoring prefix wins, the empty set scoring zero.
pub fn schedule_round(
    state: &VirtualQueueState,
    profiles: &[DeviceProfile],
    channel: &ChannelDraw,
    config: &SchedulerConfig,
    round: usize,
) -> Result<RoundDecision> {
    let queues = &state.backlogs;
    let gamma = config.gamma(round);
    let v = config.tradeoff_v;
    let links = feasible_links(queues, profiles, channel, config);

    let mut inputs = Vec::with_capacity(links.len());
    for link in &links {
        let est = estimate_energy(link.profile, link.gain, profiles.len(), &config.setup)?;
        inputs.push(RankInput {
            device: link.profile.id,
            samples: link.profile.total_samples(),
            queue: link.queue,
            estimate: est.energy,
        });
    }
    let order = rank_devices(&inputs, v, gamma);

    let mut best = RoundDecision::empty(round);
    let mut prefix: Vec<Link<'_>> = Vec::with_capacity(order.len());
    let mut ids: Vec<usize> = Vec::with_capacity(order.len());
    for &k in &order {
        let link = *links.iter().find(|l| l.profile.id == k).expect("ranked device has a link");
        prefix.push(link);
        ids.push(k);
        let allocation = match allocate_links(&prefix, &config.setup) {
            Ok(a) => a,
            Err(Error::BandwidthInfeasible { .. }) => break,
            Err(e) => return Err(e),
        };
        let energy = allocation.get(k).map_or(0.0, |d| d.energy);
        let marginal = -v * gamma * link.profile.total_samples() as f64 + link.queue * energy;
        if marginal > 0.0 {
            break;
        }
        let objective = drift_plus_penalty(&ids, &allocation, queues, profiles, v, gamma);
        if objective < best.objective {
            best = RoundDecision { round, scheduled: ids.clone(), allocation, objective };
        }
    }
    Ok(best)
}
