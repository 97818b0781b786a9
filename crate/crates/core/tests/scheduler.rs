use kfl::harness::run_experiment;
use kfl::numerics::Tolerance;
use kfl::scheduler::{
    feasible_links, rank_devices, schedule_round, update_queues, RankInput, RoundDecision, RoundRobin, SchedulerConfig,
    VirtualQueueState,
};
use kfl::system::{ChannelDraw, DeviceProfile};
use kfl::verify::{random_profile, reference_setup, trajectory_config};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

fn config(v: f64, horizon: usize) -> SchedulerConfig {
    SchedulerConfig {
        tradeoff_v: v,
        round_weights: SchedulerConfig::inverse_round_weights(horizon),
        setup: reference_setup(),
        tol: Tolerance::default(),
    }
}

fn world(seed: u64, k: usize) -> (Vec<DeviceProfile>, ChannelDraw, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = reference_setup();
    let profiles: Vec<DeviceProfile> = (0..k).map(|id| random_profile(id, &mut rng)).collect();
    let gains = profiles
        .iter()
        .map(|p| {
            let rho: f64 = Exp1.sample(&mut rng);
            setup.channel.gain(p.distance, rho.max(1e-3))
        })
        .collect();
    let queues = (0..k).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
    (profiles, ChannelDraw { round: 0, gains }, queues)
}

proptest! {
    #[test]
    fn schedule_is_feasible_and_never_worse_than_idle(seed in any::<u64>(), k in 1usize..12, logv in -6.0f64..-2.0, round in 0usize..20) {
        let (profiles, channel, backlogs) = world(seed, k);
        let cfg = config(10f64.powf(logv), 20);
        let state = VirtualQueueState { backlogs, round };
        let decision = schedule_round(&state, &profiles, &channel, &cfg, round).unwrap();
        prop_assert!(decision.objective <= 0.0);
        let feasible: Vec<usize> = feasible_links(&state.backlogs, &profiles, &channel, &cfg).iter().map(|l| l.profile.id).collect();
        for &id in &decision.scheduled {
            prop_assert!(feasible.contains(&id));
            let d = decision.allocation.get(id).unwrap();
            prop_assert!(d.power <= profiles[id].max_power + 1e-9);
        }
        let mut sorted = decision.scheduled.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), decision.scheduled.len());
    }

    #[test]
    fn queues_stay_nonnegative_and_telescope(seed in any::<u64>(), k in 1usize..8, horizon in 1usize..30) {
        let (profiles, channel, _) = world(seed, k);
        let cfg = config(1e-4, horizon);
        let mut state = VirtualQueueState::new(k);
        for t in 0..horizon {
            let decision = schedule_round(&state, &profiles, &ChannelDraw { round: t, ..channel.clone() }, &cfg, t).unwrap();
            let next = update_queues(&state, &decision, &profiles, horizon);
            for (i, p) in profiles.iter().enumerate() {
                prop_assert!(next.backlogs[i] >= 0.0);
                let drift = decision.energy_of(i) - p.energy_budget / horizon as f64;
                prop_assert!(drift <= next.backlogs[i] - state.backlogs[i] + 1e-12);
            }
            state = next;
        }
    }
}

#[test]
fn empty_queue_ranks_ahead_of_equal_sized_device() {
    let inputs = [
        RankInput { device: 0, samples: 100, queue: 0.4, estimate: 0.02 },
        RankInput { device: 1, samples: 100, queue: 0.0, estimate: 0.05 },
        RankInput { device: 2, samples: 100, queue: 0.1, estimate: 0.02 },
    ];
    assert_eq!(rank_devices(&inputs, 1e-3, 0.5), vec![1, 2, 0]);
}

#[test]
fn unscheduled_devices_keep_empty_queues() {
    let out = run_experiment(&trajectory_config(3, 10, 20)).unwrap();
    for k in 0..out.profiles.len() {
        for t in 0..out.energy_trace.len() {
            let ever_scheduled = out.energy_trace[..=t].iter().any(|e| e[k] > 0.0);
            if !ever_scheduled {
                assert_eq!(out.queue_history[t + 1][k], 0.0, "device {k} round {t}");
            }
        }
    }
}

#[test]
fn round_robin_alternates_windows() {
    let (profiles, channel, _) = world(11, 10);
    let cfg = config(1e-4, 10);
    let mut rr = RoundRobin::new(5);
    let spent = vec![0.0; 10];
    let backlogs = vec![0.0; 10];
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for t in 0..4 {
        let d: RoundDecision = rr.schedule(&backlogs, &profiles, &channel, &cfg, &spent, t).unwrap();
        let mut s = d.scheduled.clone();
        s.sort_unstable();
        sets.push(s);
    }
    assert_eq!(sets[0], vec![0, 1, 2, 3, 4]);
    assert_eq!(sets[1], vec![5, 6, 7, 8, 9]);
    assert_eq!(sets[2], sets[0]);
    assert_eq!(sets[3], sets[1]);
}
