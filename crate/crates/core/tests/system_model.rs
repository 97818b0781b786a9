use kfl::allocation::optimal_power;
use kfl::system::{compute_energy, compute_latency, draw_channel, upload_energy, DeviceProfile};
use kfl::verify::{random_profile, reference_setup};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn profiles(n: usize, seed: u64) -> Vec<DeviceProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|id| random_profile(id, &mut rng)).collect()
}

#[test]
fn fading_mean_matches_path_loss() {
    let setup = reference_setup();
    let ps = profiles(3, 1);
    let rounds = 100_000;
    let mut sums = [0.0; 3];
    for t in 0..rounds {
        let draw = draw_channel(&setup.channel, &ps, t, 9);
        for (s, g) in sums.iter_mut().zip(&draw.gains) {
            *s += g;
        }
    }
    for (p, s) in ps.iter().zip(sums) {
        let mean = s / rounds as f64;
        let expected = setup.channel.mean_gain(p.distance);
        assert!((mean / expected - 1.0).abs() < 0.02, "device {}: {mean} vs {expected}", p.id);
    }
}

#[test]
fn channel_draws_are_keyed() {
    let setup = reference_setup();
    let ps = profiles(16, 2);
    let sequential: Vec<_> = (0..40).map(|t| draw_channel(&setup.channel, &ps, t, 5)).collect();
    let parallel: Vec<_> = (0..40).into_par_iter().rev().map(|t| draw_channel(&setup.channel, &ps, t, 5)).collect();
    let mut parallel = parallel;
    parallel.reverse();
    assert_eq!(sequential, parallel);

    // a device's gain does not depend on who else is in the population
    let alone = draw_channel(&setup.channel, &ps[7..8], 3, 5);
    assert_eq!(alone.gains[0].to_bits(), sequential[3].gains[7].to_bits());

    let other_seed = draw_channel(&setup.channel, &ps, 3, 6);
    assert_ne!(other_seed.gains, sequential[3].gains);
}

proptest! {
    #[test]
    fn upload_energy_over_window_is_optimal_power(seed in any::<u64>(), share in 1e-3f64..=1.0) {
        let setup = reference_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_profile(0, &mut rng);
        let gain = setup.channel.mean_gain(p.distance);
        let window = setup.deadline - compute_latency(&p, setup.local_iters);
        let power = optimal_power(share, &p, gain, &setup).unwrap();
        let from_energy = upload_energy(share, window, gain, &setup.payload, &setup.channel) / window;
        prop_assert!((from_energy - power).abs() <= 1e-9 * power);
    }

    #[test]
    fn compute_cost_is_linear_in_iterations_and_samples(seed in any::<u64>(), tau in 1u32..20, scale in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_profile(0, &mut rng);
        let mut bigger = p.clone();
        bigger.samples_per_class.iter_mut().for_each(|d| *d *= scale);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        prop_assert!(rel(compute_latency(&p, tau), f64::from(tau) * compute_latency(&p, 1)));
        prop_assert!(rel(compute_energy(&p, tau), f64::from(tau) * compute_energy(&p, 1)));
        prop_assert!(rel(compute_latency(&bigger, tau), scale as f64 * compute_latency(&p, tau)));
        prop_assert!(rel(compute_energy(&bigger, tau), scale as f64 * compute_energy(&p, tau)));
    }
}
