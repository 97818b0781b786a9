//! Per-round power control and bandwidth allocation for a fixed scheduled set.
//!
//! For a given set of devices the energy-weighted objective `Σ q_k E_k` is
//! minimized subject to the round deadline, the bandwidth simplex and the
//! per-device power cap. Every device transmits for the whole slack left after
//! local training, so its power follows from its share in closed form; the
//! shares come from the KKT conditions, which give each share as a Lambert-W
//! expression of a single multiplier `μ` that is found by bisection.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::numerics::{bisect_bracket, lambert_w0_shifted, Tolerance};
use crate::system::{
    compute_energy, compute_latency, uplink_rate, upload_energy, ChannelModel, DeviceProfile, PayloadSpec,
};

/// Accepted shortfall of `Σθ` below the available budget before the
/// multiplier search stops early.
pub const SHARE_SUM_BAND: f64 = 1e-9;

/// Relative width of the multiplier bracket at which the search stops.
const MU_REL_WIDTH: f64 = 1e-12;
const MU_MAX_ITER: usize = 4000;

/// Quantities shared by every device in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSetup {
    pub channel: ChannelModel,
    pub payload: PayloadSpec,
    /// `T_max` in seconds.
    pub deadline: f64,
    /// `τ`.
    pub local_iters: u32,
}

impl RoundSetup {
    /// `T_max − T^L`, the time left for the upload.
    pub fn upload_window(&self, profile: &DeviceProfile) -> Result<f64> {
        let latency = compute_latency(profile, self.local_iters);
        let window = self.deadline - latency;
        if window > 0.0 {
            Ok(window)
        } else {
            Err(Error::DeadlineViolated { device: profile.id, latency, deadline: self.deadline })
        }
    }

    /// `Qq ln2 / ((T_max − T^L) B)`.
    fn spectral_demand(&self, window: f64) -> f64 {
        self.payload.bits() * LN_2 / (window * self.channel.bandwidth)
    }
}

/// A scheduled device as seen by the allocator.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub profile: &'a DeviceProfile,
    pub gain: f64,
    /// Virtual queue backlog `q_k(t)`.
    pub queue: f64,
}

/// A candidate with its deadline-derived quantities resolved.
#[derive(Debug, Clone, Copy)]
pub struct Link<'a> {
    pub profile: &'a DeviceProfile,
    pub gain: f64,
    pub queue: f64,
    pub upload_window: f64,
    pub compute_energy: f64,
    pub min_share: f64,
}

impl<'a> Link<'a> {
    pub fn new(candidate: Candidate<'a>, setup: &RoundSetup, tol: Tolerance) -> Result<Self> {
        let Candidate { profile, gain, queue } = candidate;
        let upload_window = setup.upload_window(profile)?;
        let min_share = min_bandwidth_share(profile, gain, setup, tol)?;
        Ok(Self {
            profile,
            gain,
            queue,
            upload_window,
            compute_energy: compute_energy(profile, setup.local_iters),
            min_share,
        })
    }

    fn theta(&self, mu: f64, setup: &RoundSetup) -> f64 {
        theta_from_window(mu, self.gain, self.queue, self.upload_window, setup)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceAllocation {
    pub device: usize,
    pub share: f64,
    pub power: f64,
    pub compute_energy: f64,
    pub upload_energy: f64,
    /// `E^L + E^U`.
    pub energy: f64,
    /// Share pinned at its minimum.
    pub at_min_share: bool,
}

/// Shares, powers and energies of one scheduled set, in candidate order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllocationResult {
    pub devices: Vec<DeviceAllocation>,
    /// Final bandwidth multiplier `μ`; zero when no device carries weight.
    pub multiplier: f64,
}

impl AllocationResult {
    pub fn share_sum(&self) -> f64 {
        self.devices.iter().map(|d| d.share).sum()
    }

    pub fn get(&self, device: usize) -> Option<&DeviceAllocation> {
        self.devices.iter().find(|d| d.device == device)
    }

    pub fn total_energy(&self) -> f64 {
        self.devices.iter().map(|d| d.energy).sum()
    }
}

/// Transmit power that finishes the upload exactly at the deadline:
/// `θ B N0 / h · (2^{Qq/((T_max − T^L) θ B)} − 1)`.
pub fn optimal_power(share: f64, profile: &DeviceProfile, gain: f64, setup: &RoundSetup) -> Result<f64> {
    let window = setup.upload_window(profile)?;
    Ok(power_for_window(share, gain, window, setup))
}

fn power_for_window(share: f64, gain: f64, window: f64, setup: &RoundSetup) -> f64 {
    if setup.payload.bits() == 0.0 {
        return 0.0;
    }
    let band = share * setup.channel.bandwidth;
    band * setup.channel.noise_psd / gain * (setup.payload.bits() * LN_2 / (window * band)).exp_m1()
}

/// Smallest share that meets the deadline at maximum power.
///
/// The returned value sits on the feasible side of the crossing, so the power
/// needed at this share never exceeds `max_power`.
pub fn min_bandwidth_share(profile: &DeviceProfile, gain: f64, setup: &RoundSetup, tol: Tolerance) -> Result<f64> {
    let window = setup.upload_window(profile)?;
    let required = setup.payload.bits() / window;
    if required == 0.0 {
        return Ok(0.0);
    }
    let surplus = |share: f64| uplink_rate(share, profile.max_power, gain, &setup.channel) - required;
    if surplus(1.0) < 0.0 {
        return Err(Error::Undeliverable { device: profile.id });
    }
    let fine = Tolerance { abs_tol: (tol.abs_tol * 1e-5).max(f64::MIN_POSITIVE), max_iter: tol.max_iter.max(1100) };
    Ok(bisect_bracket(surplus, 0.0, 1.0, fine)?.hi)
}

/// Stationary share for multiplier `μ`:
/// `Qq ln2 / ((T_max − T^L) B (W(μh/(e B N0 q (T_max − T^L)) − 1/e) + 1))`.
///
/// At `μ = 0` the share is unbounded and `+∞` is returned.
pub fn theta_of_mu(mu: f64, candidate: &Candidate<'_>, setup: &RoundSetup) -> Result<f64> {
    if !(candidate.queue > 0.0) {
        return Err(Error::SingularQueue { device: candidate.profile.id });
    }
    let window = setup.upload_window(candidate.profile)?;
    Ok(theta_from_window(mu, candidate.gain, candidate.queue, window, setup))
}

fn theta_from_window(mu: f64, gain: f64, queue: f64, window: f64, setup: &RoundSetup) -> f64 {
    let scale = setup.channel.bandwidth * setup.channel.noise_psd * queue * window / gain;
    // W(c/e − 1/e) + 1 with c = μ / scale
    let w_plus_one = lambert_w0_shifted(mu / scale);
    if w_plus_one == 0.0 {
        return f64::INFINITY;
    }
    setup.spectral_demand(window) / w_plus_one
}

/// Multiplier large enough that every share is at most `1/|S|`.
pub fn mu_upper_bound(candidates: &[Candidate<'_>], setup: &RoundSetup) -> Result<f64> {
    let mut bound = 0.0f64;
    for c in candidates {
        let window = setup.upload_window(c.profile)?;
        bound = bound.max(mu_bound_single(c.gain, c.queue, window, candidates.len(), 1.0, setup));
    }
    Ok(bound)
}

fn mu_bound_single(gain: f64, queue: f64, window: f64, count: usize, budget: f64, setup: &RoundSetup) -> f64 {
    let phi = setup.spectral_demand(window) * count as f64 / budget;
    let scale = setup.channel.bandwidth * setup.channel.noise_psd * queue * window / gain;
    // (φ−1)e^φ + 1, written to stay accurate for small φ
    let inner = (phi - 1.0) * phi.exp_m1() + phi;
    scale * inner
}

/// Optimal shares and powers for `candidates`.
///
/// Devices with an empty queue do not weigh on the objective and are pinned
/// at their minimum share; the rest split what is left through the multiplier
/// search, re-solved whenever a stationary share drops below its minimum.
pub fn allocate_bandwidth(
    candidates: &[Candidate<'_>],
    setup: &RoundSetup,
    tol: Tolerance,
) -> Result<AllocationResult> {
    let links = candidates.iter().map(|&c| Link::new(c, setup, tol)).collect::<Result<Vec<_>>>()?;
    allocate_links(&links, setup)
}

/// [`allocate_bandwidth`] over pre-resolved links.
pub fn allocate_links(links: &[Link<'_>], setup: &RoundSetup) -> Result<AllocationResult> {
    let demand: f64 = links.iter().map(|l| l.min_share).sum();
    if demand > 1.0 {
        return Err(Error::BandwidthInfeasible { demand });
    }

    let mut pinned: Vec<bool> = links.iter().map(|l| !(l.queue > 0.0)).collect();
    let mu = loop {
        let budget = 1.0 - links.iter().zip(&pinned).filter(|(_, &p)| p).map(|(l, _)| l.min_share).sum::<f64>();
        let free: Vec<&Link<'_>> = links.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(l, _)| l).collect();
        if free.is_empty() {
            break 0.0;
        }
        let mu = search_multiplier(&free, budget, setup);
        let mut changed = false;
        for (link, pin) in links.iter().zip(pinned.iter_mut()) {
            if !*pin && link.theta(mu, setup) < link.min_share {
                *pin = true;
                changed = true;
            }
        }
        if !changed {
            break mu;
        }
    };

    let devices = links
        .iter()
        .zip(&pinned)
        .map(|(link, &at_min)| {
            let share = if at_min { link.min_share } else { link.theta(mu, setup).min(1.0) };
            let power = power_for_window(share, link.gain, link.upload_window, setup);
            let upload = if setup.payload.bits() == 0.0 {
                0.0
            } else {
                upload_energy(share, link.upload_window, link.gain, &setup.payload, &setup.channel)
            };
            DeviceAllocation {
                device: link.profile.id,
                share,
                power,
                compute_energy: link.compute_energy,
                upload_energy: upload,
                energy: link.compute_energy + upload,
                at_min_share: at_min,
            }
        })
        .collect();

    Ok(AllocationResult { devices, multiplier: mu })
}

/// Bisection on `μ` until `Σθ(μ)` lands in `[budget − band, budget]`.
fn search_multiplier(free: &[&Link<'_>], budget: f64, setup: &RoundSetup) -> f64 {
    let share_sum = |mu: f64| free.iter().map(|l| l.theta(mu, setup)).sum::<f64>();

    let mut hi = free
        .iter()
        .map(|l| mu_bound_single(l.gain, l.queue, l.upload_window, free.len(), budget, setup))
        .fold(0.0f64, f64::max);
    if !hi.is_finite() {
        hi = f64::MAX;
    }
    let mut lo = 0.0;
    for _ in 0..MU_MAX_ITER {
        let mu = 0.5 * (lo + hi);
        let sum = share_sum(mu);
        if sum > budget {
            lo = mu;
        } else if sum < budget - SHARE_SUM_BAND {
            hi = mu;
        } else {
            return mu;
        }
        if hi - lo < MU_REL_WIDTH * hi {
            break;
        }
    }
    // the upper end always satisfies Σθ ≤ budget
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::dbm_to_watts;

    fn profile(id: usize, samples: usize) -> DeviceProfile {
        DeviceProfile {
            id,
            samples_per_class: vec![samples],
            cpu_freq: 1e9,
            flops_per_cycle: 1.0,
            flops_per_sample: 1e5,
            power_coeff: 1e-28,
            max_power: 1.0,
            energy_budget: 1.0,
            distance: 100.0,
        }
    }

    fn setup() -> RoundSetup {
        RoundSetup {
            channel: ChannelModel {
                path_loss_const: 1e-3,
                ref_distance: 1.0,
                path_loss_exp: 2.0,
                noise_psd: dbm_to_watts(-174.0),
                bandwidth: 1e6,
            },
            payload: PayloadSpec { knowledge_params: 5000, bits_per_param: 32, model_params: 1 },
            deadline: 1.0,
            local_iters: 5,
        }
    }

    #[test]
    fn power_unit_exponent() {
        let mut s = setup();
        let p = profile(0, 100);
        let window = s.upload_window(&p).unwrap();
        // choose Q so that Qq / (window θ B) = 1 at θ = 0.25
        s.payload = PayloadSpec { knowledge_params: 1, bits_per_param: 1, model_params: 1 };
        s.channel.bandwidth = 1.0 / (window * 0.25);
        let h = 1e-9;
        let pw = optimal_power(0.25, &p, h, &s).unwrap();
        let expected = 0.25 * s.channel.bandwidth * s.channel.noise_psd / h;
        assert!((pw / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_rejects_deadline_violation() {
        let mut s = setup();
        s.deadline = 0.01;
        let err = optimal_power(0.5, &profile(3, 100), 1e-9, &s).unwrap_err();
        assert!(matches!(err, Error::DeadlineViolated { device: 3, .. }));
    }

    #[test]
    fn min_share_meets_rate_with_equality() {
        let s = setup();
        let p = profile(0, 100);
        let h = 1e-13;
        let theta = min_bandwidth_share(&p, h, &s, Tolerance::default()).unwrap();
        let window = s.upload_window(&p).unwrap();
        let required = s.payload.bits() / window;
        let rate = uplink_rate(theta, p.max_power, h, &s.channel);
        assert!(rate >= required);
        assert!((rate / required - 1.0).abs() < 1e-9);
        let pw = optimal_power(theta, &p, h, &s).unwrap();
        assert!(pw <= p.max_power + 1e-9);
        assert!((pw - p.max_power).abs() < 1e-6);
    }

    #[test]
    fn min_share_vanishes_with_payload() {
        let mut s = setup();
        let p = profile(0, 100);
        s.payload.knowledge_params = 0;
        assert_eq!(min_bandwidth_share(&p, 1e-10, &s, Tolerance::default()).unwrap(), 0.0);
        s.payload.knowledge_params = 1;
        s.payload.bits_per_param = 1;
        assert!(min_bandwidth_share(&p, 1e-10, &s, Tolerance::default()).unwrap() < 1e-5);
    }

    #[test]
    fn undeliverable_device() {
        let s = setup();
        let err = min_bandwidth_share(&profile(4, 100), 1e-22, &s, Tolerance::default()).unwrap_err();
        assert!(matches!(err, Error::Undeliverable { device: 4 }));
    }

    #[test]
    fn theta_is_unbounded_at_zero_multiplier() {
        let s = setup();
        let p = profile(0, 100);
        let c = Candidate { profile: &p, gain: 1e-9, queue: 1.0 };
        assert_eq!(theta_of_mu(0.0, &c, &s).unwrap(), f64::INFINITY);
        let zero = Candidate { queue: 0.0, ..c };
        assert!(matches!(theta_of_mu(1.0, &zero, &s), Err(Error::SingularQueue { .. })));
    }

    #[test]
    fn theta_decreases_in_mu() {
        let s = setup();
        let p = profile(0, 100);
        let c = Candidate { profile: &p, gain: 1e-12, queue: 2.0 };
        let ub = mu_upper_bound(&[c], &s).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let mu = ub * 1e-6 * (1e8f64).powf(i as f64 / 100.0);
            let theta = theta_of_mu(mu, &c, &s).unwrap();
            assert!(theta < prev, "not decreasing at mu = {mu}");
            prev = theta;
        }
    }

    #[test]
    fn bound_with_unit_phi() {
        let mut s = setup();
        let p = profile(0, 100);
        let window = s.upload_window(&p).unwrap();
        // φ = Qq·|S|·ln2 / (window·B) = 1 for a single device
        s.channel.bandwidth = s.payload.bits() * LN_2 / window;
        let h = 1e-10;
        let c = Candidate { profile: &p, gain: h, queue: 3.0 };
        let ub = mu_upper_bound(&[c], &s).unwrap();
        let expected = s.channel.bandwidth * s.channel.noise_psd * 3.0 * window / h;
        assert!((ub / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_device_takes_full_band() {
        let s = setup();
        let p = profile(0, 100);
        let c = Candidate { profile: &p, gain: 1e-12, queue: 1.5 };
        let ub = mu_upper_bound(&[c], &s).unwrap();
        assert!(theta_of_mu(ub, &c, &s).unwrap() <= 1.0 + 1e-12);
        let r = allocate_bandwidth(&[c], &s, Tolerance::default()).unwrap();
        assert!((r.devices[0].share - 1.0).abs() <= SHARE_SUM_BAND);
        assert!(r.multiplier > 0.0 && r.multiplier <= ub);
    }

    #[test]
    fn identical_devices_split_evenly() {
        let s = setup();
        let a = profile(0, 100);
        let b = profile(1, 100);
        let cands =
            [Candidate { profile: &a, gain: 1e-12, queue: 0.7 }, Candidate { profile: &b, gain: 1e-12, queue: 0.7 }];
        let r = allocate_bandwidth(&cands, &s, Tolerance::default()).unwrap();
        assert!((r.devices[0].share - 0.5).abs() < 1e-6);
        assert!((r.devices[0].share - r.devices[1].share).abs() < 1e-15);
    }

    #[test]
    fn empty_queues_get_min_share() {
        let s = setup();
        let a = profile(0, 100);
        let b = profile(1, 200);
        let cands =
            [Candidate { profile: &a, gain: 1e-12, queue: 0.0 }, Candidate { profile: &b, gain: 3e-12, queue: 0.0 }];
        let r = allocate_bandwidth(&cands, &s, Tolerance::default()).unwrap();
        for (d, c) in r.devices.iter().zip(&cands) {
            let min = min_bandwidth_share(c.profile, c.gain, &s, Tolerance::default()).unwrap();
            assert_eq!(d.share, min);
            assert!(d.at_min_share);
        }
        let objective: f64 = r.devices.iter().zip(&cands).map(|(d, c)| c.queue * d.energy).sum();
        assert_eq!(objective, 0.0);
    }

    #[test]
    fn infeasible_set_is_reported() {
        let s = setup();
        let profiles: Vec<_> = (0..40).map(|i| profile(i, 100)).collect();
        let cands: Vec<_> = profiles.iter().map(|p| Candidate { profile: p, gain: 2e-15, queue: 1.0 }).collect();
        let err = allocate_bandwidth(&cands, &s, Tolerance::default()).unwrap_err();
        assert!(matches!(err, Error::BandwidthInfeasible { .. }));
    }

    #[test]
    fn energy_is_power_times_window() {
        let s = setup();
        let p = profile(0, 100);
        let q = profile(1, 50);
        let cands =
            [Candidate { profile: &p, gain: 1e-12, queue: 1.0 }, Candidate { profile: &q, gain: 5e-13, queue: 2.0 }];
        let r = allocate_bandwidth(&cands, &s, Tolerance::default()).unwrap();
        for (d, c) in r.devices.iter().zip(&cands) {
            let window = s.upload_window(c.profile).unwrap();
            assert!((d.upload_energy / (d.power * window) - 1.0).abs() < 1e-9);
            assert!(d.power <= c.profile.max_power + 1e-9);
        }
    }
}
