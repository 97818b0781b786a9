//! Independent reference computations used by the verification suites.
//!
//! Everything here trades speed for obviousness: grid search instead of the
//! multiplier search, exhaustive subsets instead of the ranked prefixes and
//! finite differences instead of backpropagation.

use crate::allocation::{allocate_links, optimal_power, Candidate, RoundSetup};
use crate::learning::{loss_and_grad, Dataset, KnowledgeMatrix, LocalModel};
use crate::scheduler::{drift_plus_penalty, feasible_links, SchedulerConfig, VirtualQueueState};
use crate::system::{compute_energy, upload_energy, ChannelDraw, DeviceProfile};

/// `Σ q_k E_k(θ_k)` for explicit shares, or `None` if some share cannot meet
/// the deadline at maximum power.
pub fn weighted_energy(candidates: &[Candidate<'_>], shares: &[f64], setup: &RoundSetup) -> Option<f64> {
    let mut total = 0.0;
    for (c, &theta) in candidates.iter().zip(shares) {
        if theta <= 0.0 {
            return None;
        }
        let power = optimal_power(theta, c.profile, c.gain, setup).ok()?;
        if power > c.profile.max_power * (1.0 + 1e-12) {
            return None;
        }
        let window = setup.upload_window(c.profile).ok()?;
        let energy = compute_energy(c.profile, setup.local_iters)
            + upload_energy(theta, window, c.gain, &setup.payload, &setup.channel);
        total += c.queue * energy;
    }
    Some(total)
}

/// Minimise [`weighted_energy`] over the simplex `Σθ = 1` for two or three
/// devices: a grid of step `resolution`, then coordinate refinement around the
/// best grid point down to `1e-9`.
pub fn grid_allocation(candidates: &[Candidate<'_>], setup: &RoundSetup, resolution: f64) -> Option<(Vec<f64>, f64)> {
    let n = candidates.len();
    assert!((2..=3).contains(&n), "grid oracle handles two or three devices");
    let steps = (1.0 / resolution).round() as usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |shares: Vec<f64>| {
        if let Some(v) = weighted_energy(candidates, &shares, setup) {
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((shares, v));
            }
        }
    };
    for i in 1..steps {
        let a = i as f64 * resolution;
        if n == 2 {
            consider(vec![a, 1.0 - a]);
        } else {
            for j in 1..steps - i {
                let b = j as f64 * resolution;
                consider(vec![a, b, 1.0 - a - b]);
            }
        }
    }
    let (mut shares, mut value) = best?;

    // pairwise transfers of mass keep the point on the simplex
    let mut step = resolution;
    while step > 1e-9 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut trial = shares.clone();
                trial[i] += step;
                trial[j] -= step;
                if trial[j] <= 0.0 {
                    continue;
                }
                if let Some(v) = weighted_energy(candidates, &trial, setup) {
                    if v < value {
                        shares = trial;
                        value = v;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some((shares, value))
}

/// Lowest drift-plus-penalty value over every subset of the feasible devices,
/// each allocated optimally; the empty set scores zero.
pub fn brute_force_schedule(
    state: &VirtualQueueState,
    profiles: &[DeviceProfile],
    channel: &ChannelDraw,
    config: &SchedulerConfig,
    round: usize,
) -> (Vec<usize>, f64) {
    let links = feasible_links(&state.backlogs, profiles, channel, config);
    assert!(links.len() <= 16, "brute force is exponential");
    let mut best = (Vec::new(), 0.0);
    for mask in 1u32..(1 << links.len()) {
        let subset: Vec<_> = (0..links.len()).filter(|i| mask & (1 << i) != 0).map(|i| links[i]).collect();
        let Ok(allocation) = allocate_links(&subset, &config.setup) else { continue };
        let ids: Vec<usize> = subset.iter().map(|l| l.profile.id).collect();
        let value =
            drift_plus_penalty(&ids, &allocation, &state.backlogs, profiles, config.tradeoff_v, config.gamma(round));
        if value < best.1 {
            best = (ids, value);
        }
    }
    best
}

/// Central-difference gradient of the knowledge-aided loss, in
/// [`LocalModel::params`] order.
pub fn finite_difference_gradient(
    model: &LocalModel,
    shard: &Dataset,
    global: Option<&KnowledgeMatrix>,
    knowledge_weight: f64,
    step: f64,
) -> Vec<f64> {
    let n = model.param_count();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let original = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + step;
        let up = loss_and_grad(&probe, shard, global, knowledge_weight).0;
        *probe.params_mut().nth(i).unwrap() = original - step;
        let down = loss_and_grad(&probe, shard, global, knowledge_weight).0;
        *probe.params_mut().nth(i).unwrap() = original;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}
