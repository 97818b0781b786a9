//! Oracle suites behind `kfl verify` and the acceptance tests.
//!
//! Each suite returns a [`SuiteReport`]; none of them panic on a failed check.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::allocation::{allocate_bandwidth, allocate_links, optimal_power, Candidate, RoundSetup};
use crate::harness::metrics::metrics_csv;
use crate::harness::{run_experiment, ExperimentConfig, SchedulerKind};
use crate::learning::{compute_knowledge, loss_and_grad, Dataset, LocalModel, ModelSpec};
use crate::numerics::{lambert_w0, Tolerance, BRANCH_POINT};
use crate::oracle::{brute_force_schedule, finite_difference_gradient, grid_allocation};
use crate::scheduler::{
    drift_plus_penalty, feasible_links, long_run_energy_bound, schedule_round, SchedulePattern, SchedulerConfig,
    VirtualQueueState,
};
use crate::system::{
    compute_latency, dbm_to_watts, uplink_rate, upload_energy, ChannelModel, DeviceProfile, PayloadSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
}

impl SuiteReport {
    fn new(name: &'static str, passed: bool, summary: String) -> Self {
        Self { name, passed, summary }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.summary)
    }
}

/// The uplink used by the random instances: 5 MHz at -174 dBm/Hz, 64-dim
/// prototypes of ten classes in 32-bit floats.
pub fn reference_setup() -> RoundSetup {
    RoundSetup {
        channel: ChannelModel {
            path_loss_const: 1e-3,
            ref_distance: 1.0,
            path_loss_exp: 2.0,
            noise_psd: dbm_to_watts(-174.0),
            bandwidth: 5e6,
        },
        payload: PayloadSpec::for_knowledge(10, 64, 32, 553_406),
        deadline: 1.0,
        local_iters: 5,
    }
}

/// A device whose local training fits comfortably in a one-second deadline.
pub fn random_profile<R: Rng + ?Sized>(id: usize, rng: &mut R) -> DeviceProfile {
    let freqs = [0.85e9, 1.12e9, 1.2e9, 1.3e9];
    DeviceProfile {
        id,
        samples_per_class: vec![rng.random_range(40..=150), rng.random_range(40..=150)],
        cpu_freq: freqs[rng.random_range(0..freqs.len())],
        flops_per_cycle: 1.0,
        flops_per_sample: 1e5,
        power_coeff: 1e-28,
        max_power: dbm_to_watts(rng.random_range(0.0..30.0)),
        energy_budget: rng.random_range(0.05..2.0),
        distance: rng.random_range(10.0..500.0),
    }
}

fn fading_gain<R: Rng + ?Sized>(profile: &DeviceProfile, channel: &ChannelModel, rng: &mut R) -> f64 {
    let rho: f64 = Exp1.sample(rng);
    channel.gain(profile.distance, rho.max(1e-3))
}

/// Communication volume of prototype upload against the reference MLP.
pub fn communication_overhead() -> SuiteReport {
    let payload = PayloadSpec::for_knowledge(10, 64, 32, 553_406);
    let ratio = payload.overhead_ratio();
    let percent = format!("{:.2}%", ratio * 100.0);
    let passed =
        payload.knowledge_params == 640 && payload.bytes() == 2560 && ratio == 640.0 / 553_406.0 && percent == "0.12%";
    SuiteReport::new(
        "communication overhead",
        passed,
        format!(
            "{} of {} parameters, ratio {ratio:.7} ({percent}), {} bytes per upload",
            payload.knowledge_params,
            payload.model_params,
            payload.bytes()
        ),
    )
}

/// `|W(x) e^W(x) − x| ≤ 1e-10·max(1, |x|)` on a log grid from just above the
/// branch point to `1e9`.
pub fn lambert_identity(points: usize) -> SuiteReport {
    let lo = BRANCH_POINT + 1e-9;
    // grid in log(x − lo + 1e-9) so both ends are resolved
    let (a, b) = ((1e-9f64).ln(), (1e9 - lo + 1e-9).ln());
    let mut worst = 0.0f64;
    let mut worst_x = lo;
    let mut errors = 0;
    for i in 0..points {
        let s = a + (b - a) * i as f64 / (points - 1) as f64;
        let x = (lo + s.exp() - 1e-9).clamp(lo, 1e9);
        match lambert_w0(x) {
            Ok(w) => {
                let err = (w * w.exp() - x).abs() / x.abs().max(1.0);
                if err > worst {
                    worst = err;
                    worst_x = x;
                }
            }
            Err(_) => errors += 1,
        }
    }
    SuiteReport::new(
        "lambert identity",
        errors == 0 && worst <= 1e-10,
        format!("{points} points, worst scaled residual {worst:.2e} at x = {worst_x:.6e}, {errors} domain errors"),
    )
}

/// The multiplier solver against a grid search over the simplex.
pub fn allocation_oracle(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = reference_setup();
    let mut worst_gap = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut power_violations = 0;
    let mut skipped = 0;
    let mut checked = 0;
    while checked < instances {
        let n = rng.random_range(2..=3);
        let profiles: Vec<DeviceProfile> = (0..n).map(|id| random_profile(id, &mut rng)).collect();
        let gains: Vec<f64> = profiles.iter().map(|p| fading_gain(p, &setup.channel, &mut rng)).collect();
        let candidates: Vec<Candidate<'_>> = profiles
            .iter()
            .zip(&gains)
            .map(|(p, &gain)| Candidate { profile: p, gain, queue: 10f64.powf(rng.random_range(-3.0..1.0)) })
            .collect();
        let Ok(alloc) = allocate_bandwidth(&candidates, &setup, Tolerance::default()) else {
            skipped += 1;
            continue;
        };
        let Some((_, oracle)) = grid_allocation(&candidates, &setup, 1e-3) else {
            skipped += 1;
            continue;
        };
        let solver: f64 = candidates.iter().zip(&alloc.devices).map(|(c, d)| c.queue * d.energy).sum();
        worst_gap = worst_gap.max((solver - oracle).abs() / oracle.abs());
        worst_sum = worst_sum.max((alloc.share_sum() - 1.0).abs());
        power_violations +=
            candidates.iter().zip(&alloc.devices).filter(|(c, d)| d.power > c.profile.max_power).count();
        checked += 1;
    }
    SuiteReport::new(
        "allocation oracle",
        worst_gap <= 1e-4 && worst_sum <= 1e-6 && power_violations == 0,
        format!(
            "{checked} instances ({skipped} infeasible skipped), worst relative gap {worst_gap:.2e}, worst |sum - 1| {worst_sum:.2e}, {power_violations} power violations"
        ),
    )
}

/// `rate(θ, p*(θ))·(T_max − T^L) = Qq` for random feasible shares.
pub fn power_deadline_identity(samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = reference_setup();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..samples {
        let profile = random_profile(i, &mut rng);
        let gain = fading_gain(&profile, &setup.channel, &mut rng);
        let share = rng.random_range(1e-3..=1.0);
        match optimal_power(share, &profile, gain, &setup) {
            Ok(power) => {
                let window = setup.deadline - compute_latency(&profile, setup.local_iters);
                let delivered = uplink_rate(share, power, gain, &setup.channel) * window;
                worst = worst.max((delivered - setup.payload.bits()).abs() / setup.payload.bits());
            }
            Err(_) => failures += 1,
        }
    }
    SuiteReport::new(
        "power/deadline identity",
        failures == 0 && worst <= 1e-9,
        format!("{samples} samples, worst relative error {worst:.2e}, {failures} errors"),
    )
}

/// Analytic gradient of the knowledge-aided loss against central differences
/// on a toy model with randomised parameters.
pub fn gradient_check(points: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec =
        ModelSpec { input_dim: 2, extractor_hidden: vec![3], feature_dim: 2, predictor_hidden: vec![], num_classes: 3 };
    let mut worst = 0.0f64;
    let mut params = 0;
    for _ in 0..points {
        let mut model = LocalModel::new(spec.clone(), &mut rng);
        // zero biases would leave ReLU pre-activations exactly on the kink
        model.params_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        params = model.param_count();
        let features = (0..2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shard = Dataset::new(2, 3, features, (0..9).map(|i| i % 3).collect()).expect("valid toy shard");
        let mut global = compute_knowledge(&model, &shard);
        global.prototypes.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        let lambda = rng.random_range(0.0..1.0);
        let (_, grads) = loss_and_grad(&model, &shard, Some(&global), lambda);
        let fd = finite_difference_gradient(&model, &shard, Some(&global), lambda, 1e-5);
        for (a, b) in grads.values().iter().zip(&fd) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
        }
    }
    SuiteReport::new(
        "gradient check",
        worst <= 1e-4,
        format!("{points} points on a {params}-parameter model, worst relative error {worst:.2e}"),
    )
}

/// Best prefix of the ranked list, recomputed from scratch.
fn prefix_family_minimum(
    state: &VirtualQueueState,
    profiles: &[DeviceProfile],
    gains: &[f64],
    config: &SchedulerConfig,
    round: usize,
) -> f64 {
    let setup = &config.setup;
    let gamma = config.round_weights[round];
    let v = config.tradeoff_v;
    let draw = crate::system::ChannelDraw { round, gains: gains.to_vec() };
    let links = feasible_links(&state.backlogs, profiles, &draw, config);
    let mut keyed: Vec<(f64, usize)> = links
        .iter()
        .map(|l| {
            let p = l.profile;
            let window = setup.deadline - compute_latency(p, setup.local_iters);
            let estimate = crate::system::compute_energy(p, setup.local_iters)
                + upload_energy(1.0 / profiles.len() as f64, window, l.gain, &setup.payload, &setup.channel);
            (-v * gamma * p.total_samples() as f64 + l.queue * estimate, p.id)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best = 0.0f64;
    let mut prefix = Vec::new();
    for (_, id) in keyed {
        let link = *links.iter().find(|l| l.profile.id == id).expect("ranked link");
        prefix.push(link);
        let Ok(alloc) = allocate_links(&prefix, setup) else { break };
        let own = alloc.get(id).map_or(0.0, |d| d.energy);
        if -v * gamma * link.profile.total_samples() as f64 + link.queue * own > 0.0 {
            break;
        }
        let ids: Vec<usize> = prefix.iter().map(|l| l.profile.id).collect();
        best = best.min(drift_plus_penalty(&ids, &alloc, &state.backlogs, profiles, v, gamma));
    }
    best
}

/// Outcome of [`scheduler_oracle`], with the brute-force gaps kept for logging.
#[derive(Debug, Clone)]
pub struct SchedulerOracleReport {
    pub report: SuiteReport,
    /// `(objective − brute force) / |brute force|` for rounds where the brute
    /// force is nonzero.
    pub gaps: Vec<f64>,
}

pub fn scheduler_oracle(rounds: usize, seed: u64) -> SchedulerOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut gaps = Vec::with_capacity(rounds);
    let mut scheduled = 0;
    for r in 0..rounds {
        let k = rng.random_range(2..=10);
        let profiles: Vec<DeviceProfile> = (0..k).map(|id| random_profile(id, &mut rng)).collect();
        let horizon = 50;
        let config = SchedulerConfig {
            tradeoff_v: 10f64.powf(rng.random_range(-6.0..-3.0)),
            round_weights: SchedulerConfig::inverse_round_weights(horizon),
            setup: reference_setup(),
            tol: Tolerance::default(),
        };
        let round = r % horizon;
        let gains: Vec<f64> = profiles.iter().map(|p| fading_gain(p, &config.setup.channel, &mut rng)).collect();
        let backlogs = (0..k).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
        let state = VirtualQueueState { backlogs, round };
        let draw = crate::system::ChannelDraw { round, gains: gains.clone() };
        let decision = match schedule_round(&state, &profiles, &draw, &config, round) {
            Ok(d) => d,
            Err(_) => {
                mismatches += 1;
                continue;
            }
        };
        scheduled += decision.scheduled.len();
        if decision.objective != prefix_family_minimum(&state, &profiles, &gains, &config, round) {
            mismatches += 1;
        }
        let (_, brute) = brute_force_schedule(&state, &profiles, &draw, &config, round);
        if brute != 0.0 {
            gaps.push((decision.objective - brute) / brute.abs());
        }
    }
    let median = median(&gaps);
    SchedulerOracleReport {
        report: SuiteReport::new(
            "scheduler oracle",
            mismatches == 0,
            format!(
                "{rounds} rounds, {mismatches} prefix-family mismatches, {scheduled} devices scheduled, median brute-force gap {:.3}% over {} rounds",
                median * 100.0,
                gaps.len()
            ),
        ),
        gaps,
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Small synthetic experiment used by the trajectory suites.
pub fn trajectory_config(seed: u64, devices: usize, horizon: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic(devices);
    cfg.seed = seed;
    cfg.horizon = horizon;
    cfg.dataset.train_per_class = 40;
    cfg.dataset.test_per_device = 40;
    cfg
}

/// The long-run energy bound on simulated trajectories of the proposed
/// scheduler.
pub fn energy_bound(seeds: &[u64]) -> SuiteReport {
    let mut worst_slack = f64::INFINITY;
    let mut failures = 0;
    let mut errors = 0;
    for &seed in seeds {
        let cfg = trajectory_config(seed, 10, 50);
        let Ok(out) = run_experiment(&cfg) else {
            errors += 1;
            continue;
        };
        let r = long_run_energy_bound(&out.energy_trace, &out.round_weights, &out.profiles, cfg.scheduler.tradeoff_v);
        if !r.holds() {
            failures += 1;
        }
        worst_slack = worst_slack.min(r.bound - r.total_energy);
    }
    SuiteReport::new(
        "energy bound",
        failures == 0 && errors == 0,
        format!(
            "{} trajectories of 50 rounds, {failures} violations, {errors} errors, smallest slack {worst_slack:.4} J",
            seeds.len()
        ),
    )
}

/// Identical configs give identical CSV text.
pub fn determinism(seed: u64) -> SuiteReport {
    let cfg = trajectory_config(seed, 10, 10);
    let run = || run_experiment(&cfg).map(|o| metrics_csv(&o.records));
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let passed = a == b;
            SuiteReport::new(
                "determinism",
                passed,
                format!("two runs of seed {seed}, {} CSV bytes, identical: {passed}", a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => SuiteReport::new("determinism", false, format!("run failed: {e}")),
    }
}

/// Replay the queue recursion and check the per-round telescoping inequality.
pub fn queue_replay(seed: u64) -> SuiteReport {
    let cfg = trajectory_config(seed, 10, 30);
    let out = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => return SuiteReport::new("queue replay", false, format!("run failed: {e}")),
    };
    let horizon = cfg.horizon as f64;
    let mut recursion = 0;
    let mut telescoping = 0;
    for (t, energies) in out.energy_trace.iter().enumerate() {
        let (before, after) = (&out.queue_history[t], &out.queue_history[t + 1]);
        for (k, p) in out.profiles.iter().enumerate() {
            let share = p.energy_budget / horizon;
            if after[k] != (before[k] + energies[k] - share).max(0.0) {
                recursion += 1;
            }
            let drift = energies[k] - share;
            let slack = 1e-12 * before[k].abs().max(drift.abs()).max(1e-300);
            if drift > after[k] - before[k] + slack {
                telescoping += 1;
            }
        }
    }
    SuiteReport::new(
        "queue replay",
        recursion == 0 && telescoping == 0,
        format!(
            "{} rounds x {} devices, {recursion} recursion mismatches, {telescoping} telescoping violations",
            out.energy_trace.len(),
            out.profiles.len()
        ),
    )
}

/// First round whose accuracy reaches `fraction` of the final accuracy,
/// counted from one.
pub fn rounds_to_fraction(accuracies: &[f64], fraction: f64) -> usize {
    let last = accuracies.iter().rev().copied().find(|a| !a.is_nan()).unwrap_or(0.0);
    accuracies.iter().position(|&a| a >= fraction * last).map_or(accuracies.len(), |i| i + 1)
}

/// Median rounds to 85% of final accuracy under each participation pattern.
#[derive(Debug, Clone)]
pub struct PatternReport {
    pub report: SuiteReport,
    pub descend: f64,
    pub uniform: f64,
    pub ascend: f64,
}

pub fn pattern_ordering(seeds: &[u64]) -> crate::Result<PatternReport> {
    let mut medians = Vec::new();
    for pattern in [SchedulePattern::Descend, SchedulePattern::Uniform, SchedulePattern::Ascend] {
        let mut rounds = Vec::new();
        for &seed in seeds {
            let mut cfg = ExperimentConfig::synthetic(20);
            cfg.seed = seed;
            cfg.scheduler.kind = SchedulerKind::Pattern;
            cfg.scheduler.pattern = pattern;
            let out = run_experiment(&cfg)?;
            let acc: Vec<f64> = out.records.iter().map(|r| r.test_accuracy).collect();
            rounds.push(rounds_to_fraction(&acc, 0.85) as f64);
        }
        medians.push(median(&rounds));
    }
    let (descend, uniform, ascend) = (medians[0], medians[1], medians[2]);
    Ok(PatternReport {
        report: SuiteReport::new(
            "participation pattern",
            descend <= uniform && uniform <= ascend,
            format!("median rounds to 85% of final accuracy: descend {descend}, uniform {uniform}, ascend {ascend}"),
        ),
        descend,
        uniform,
        ascend,
    })
}

/// Mean final accuracy with and without the knowledge term.
#[derive(Debug, Clone)]
pub struct KnowledgeReport {
    pub report: SuiteReport,
    pub with_knowledge: f64,
    pub isolated: f64,
}

pub fn knowledge_benefit(seeds: &[u64]) -> crate::Result<KnowledgeReport> {
    let mean_final = |weight: f64| -> crate::Result<f64> {
        let mut sum = 0.0;
        for &seed in seeds {
            let mut cfg = ExperimentConfig::synthetic(20);
            cfg.seed = seed;
            cfg.hyper.knowledge_weight = weight;
            sum += run_experiment(&cfg)?.final_accuracy();
        }
        Ok(sum / seeds.len() as f64)
    };
    let with_knowledge = mean_final(0.1)?;
    let isolated = mean_final(0.0)?;
    Ok(KnowledgeReport {
        report: SuiteReport::new(
            "knowledge benefit",
            with_knowledge >= isolated + 0.02,
            format!(
                "mean final accuracy {with_knowledge:.4} with knowledge weight 0.1, {isolated:.4} without ({:+.2} points)",
                (with_knowledge - isolated) * 100.0
            ),
        ),
        with_knowledge,
        isolated,
    })
}

/// The quick suites run by `kfl verify`.
pub fn quick_suites(seed: u64) -> Vec<SuiteReport> {
    vec![
        communication_overhead(),
        lambert_identity(10_000),
        allocation_oracle(100, seed),
        power_deadline_identity(1000, seed),
        gradient_check(50, seed),
        scheduler_oracle(50, seed).report,
        energy_bound(&[seed, seed + 1]),
        determinism(seed),
        queue_replay(seed),
    ]
}

/// The learning-curve comparisons, minutes rather than seconds.
pub fn slow_suites(seed: u64) -> crate::Result<Vec<SuiteReport>> {
    let seeds: Vec<u64> = (seed..seed + 5).collect();
    Ok(vec![pattern_ordering(&seeds)?.report, knowledge_benefit(&seeds)?.report])
}
