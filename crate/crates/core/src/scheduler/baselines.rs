//! Reference schedulers: round robin, myopic budget splitting and fixed
//! cohort-size patterns.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{drift_plus_penalty, estimate_energy, feasible_links, RoundDecision, SchedulerConfig};
use crate::allocation::{allocate_links, Link};
use crate::error::{Error, Result};
use crate::system::{ChannelDraw, DeviceProfile};

/// Feasible devices with unit allocation weights.
///
/// Baselines keep no useful virtual queues, so their bandwidth split minimises
/// the plain energy sum instead of the queue-weighted one.
pub fn unit_weight_links<'a>(
    profiles: &'a [DeviceProfile],
    channel: &ChannelDraw,
    config: &SchedulerConfig,
) -> Vec<Link<'a>> {
    feasible_links(&vec![1.0; profiles.len()], profiles, channel, config)
}

/// Allocate `links` and wrap the result as a decision, dropping the device
/// with the largest minimum share until the set fits in the band.
pub fn schedule_fixed_set(
    mut links: Vec<Link<'_>>,
    queues: &[f64],
    profiles: &[DeviceProfile],
    config: &SchedulerConfig,
    round: usize,
) -> Result<RoundDecision> {
    loop {
        if links.is_empty() {
            return Ok(RoundDecision::empty(round));
        }
        match allocate_links(&links, &config.setup) {
            Ok(allocation) => {
                let scheduled: Vec<usize> = links.iter().map(|l| l.profile.id).collect();
                let objective = drift_plus_penalty(
                    &scheduled,
                    &allocation,
                    queues,
                    profiles,
                    config.tradeoff_v,
                    config.gamma(round),
                );
                return Ok(RoundDecision { round, scheduled, allocation, objective });
            }
            Err(Error::BandwidthInfeasible { .. }) => {
                let worst = links
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.min_share.total_cmp(&b.1.min_share))
                    .map(|(i, _)| i)
                    .expect("non-empty");
                links.remove(worst);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Allocate, then drop every device whose realized energy exceeds its
/// allowance and re-allocate until nobody is over.
fn schedule_within_allowance(
    mut links: Vec<Link<'_>>,
    allowance: &[f64],
    queues: &[f64],
    profiles: &[DeviceProfile],
    config: &SchedulerConfig,
    round: usize,
) -> Result<RoundDecision> {
    loop {
        let decision = schedule_fixed_set(links.clone(), queues, profiles, config, round)?;
        let keep: Vec<Link<'_>> = links
            .into_iter()
            .filter(|l| {
                let k = l.profile.id;
                decision.scheduled.contains(&k) && decision.energy_of(k) <= allowance[k]
            })
            .collect();
        if keep.len() == decision.scheduled.len() {
            return Ok(decision);
        }
        links = keep;
    }
}

/// Cyclic scheduling of a fixed-size window of devices that can still afford
/// the round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRobin {
    pub window: usize,
    cursor: usize,
}

impl RoundRobin {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), cursor: 0 }
    }

    pub fn schedule(
        &mut self,
        queues: &[f64],
        profiles: &[DeviceProfile],
        channel: &ChannelDraw,
        config: &SchedulerConfig,
        spent: &[f64],
        round: usize,
    ) -> Result<RoundDecision> {
        let links = unit_weight_links(profiles, channel, config);
        let remaining: Vec<f64> = profiles.iter().map(|p| p.energy_budget - spent[p.id]).collect();
        let k_total = profiles.len();
        let mut chosen = Vec::with_capacity(self.window);
        let mut examined = 0;
        while examined < k_total && chosen.len() < self.window {
            let k = (self.cursor + examined) % k_total;
            examined += 1;
            let Some(link) = links.iter().find(|l| l.profile.id == k) else {
                continue;
            };
            let est = estimate_energy(link.profile, link.gain, self.window, &config.setup)?;
            if est.energy <= remaining[k] {
                chosen.push(*link);
            }
        }
        self.cursor = (self.cursor + examined) % k_total.max(1);
        schedule_within_allowance(chosen, &remaining, queues, profiles, config, round)
    }
}

/// Per-round allowance `(E_k − spent_k)/(T − t + 1)`; schedules every device
/// whose realized energy fits it.
pub fn myopic_schedule(
    queues: &[f64],
    profiles: &[DeviceProfile],
    channel: &ChannelDraw,
    config: &SchedulerConfig,
    spent: &[f64],
    round: usize,
) -> Result<RoundDecision> {
    let horizon = config.horizon();
    let allowance: Vec<f64> =
        profiles.iter().map(|p| (p.energy_budget - spent[p.id]) / (horizon - round + 1) as f64).collect();
    let links = unit_weight_links(profiles, channel, config);
    let mut chosen = Vec::with_capacity(links.len());
    for link in links {
        let est = estimate_energy(link.profile, link.gain, profiles.len(), &config.setup)?;
        if est.energy <= allowance[link.profile.id] {
            chosen.push(link);
        }
    }
    schedule_within_allowance(chosen, &allowance, queues, profiles, config, round)
}

/// Temporal profile of the cohort size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePattern {
    Uniform,
    Ascend,
    Descend,
}

/// Cohort size for every round.
///
/// All three patterns schedule `mean · horizon` devices in total. The
/// descending profile starts at `peak`, ends at one and decreases linearly in
/// between; ascending is its mirror image.
pub fn pattern_sizes(pattern: SchedulePattern, horizon: usize, mean: usize, peak: usize) -> Vec<usize> {
    match pattern {
        SchedulePattern::Uniform => vec![mean; horizon],
        SchedulePattern::Descend => descending_sizes(horizon, mean, peak),
        SchedulePattern::Ascend => {
            let mut s = descending_sizes(horizon, mean, peak);
            s.reverse();
            s
        }
    }
}

fn descending_sizes(horizon: usize, mean: usize, peak: usize) -> Vec<usize> {
    let total = mean * horizon;
    if horizon >= 3 {
        let interior = horizon - 2;
        if let Some(rest) = total.checked_sub(peak + 1) {
            if rest >= interior && rest <= interior * peak {
                let weights: Vec<f64> = (1..=interior).map(|t| (horizon - 1 - t) as f64).collect();
                let mut sizes = vec![peak];
                sizes.extend(apportion(rest, &weights, 1, peak));
                sizes.push(1);
                return sizes;
            }
        }
    }
    let weights: Vec<f64> = (0..horizon).map(|t| (horizon - t) as f64).collect();
    apportion(total, &weights, 1, peak.max(mean))
}

/// Integer sizes in `[min, max]` summing to `total`, proportional to
/// `weights` after clamping; leftover units go to the largest fractional
/// parts, earliest first.
fn apportion(total: usize, weights: &[f64], min: usize, max: usize) -> Vec<usize> {
    let n = weights.len();
    let clamp_sum = |s: f64| -> f64 { weights.iter().map(|w| (s * w).clamp(min as f64, max as f64)).sum() };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while clamp_sum(hi) < total as f64 && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clamp_sum(mid) < total as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let real: Vec<f64> = weights.iter().map(|w| (hi * w).clamp(min as f64, max as f64)).collect();
    let mut sizes: Vec<usize> = real.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (real[b] - real[b].floor()).total_cmp(&(real[a] - real[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle().take(n * (max + 1)) {
        if left == 0 {
            break;
        }
        if sizes[i] < max {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}

/// Uniformly random cohort of `size` devices out of `feasible` (all of them
/// if fewer are available), returned in ascending id order.
pub fn pattern_schedule<R: Rng + ?Sized>(size: usize, feasible: &[usize], rng: &mut R) -> Vec<usize> {
    let amount = size.min(feasible.len());
    let mut picked: Vec<usize> = sample(rng, feasible.len(), amount).into_iter().map(|i| feasible[i]).collect();
    picked.sort_unstable();
    picked
}
