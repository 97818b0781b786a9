use crate::system::DeviceProfile;

/// Both sides of the long-run energy bound of the online scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBoundReport {
    /// `Σ_t Σ_k α_{k,t} E_{k,t}`.
    pub total_energy: f64,
    /// `Σ_k E_k + sqrt(2K(T ζ0 + V Σ_t γ_t D))`.
    pub bound: f64,
    /// `ζ_k = max_t |α_{k,t} E_{k,t} − E_k/T|`.
    pub zeta: Vec<f64>,
    /// `½ Σ_k ζ_k²`.
    pub zeta0: f64,
}

impl EnergyBoundReport {
    pub fn holds(&self) -> bool {
        self.total_energy <= self.bound
    }
}

/// Evaluate the energy bound on a finished trajectory.
///
/// `energies[t][k]` is the energy device `k` spent in round `t` (zero when
/// unscheduled); `gammas[t]` the round weight.
pub fn long_run_energy_bound(
    energies: &[Vec<f64>],
    gammas: &[f64],
    profiles: &[DeviceProfile],
    tradeoff_v: f64,
) -> EnergyBoundReport {
    let horizon = energies.len();
    let k = profiles.len();
    let per_round: Vec<f64> = profiles.iter().map(|p| p.energy_budget / horizon as f64).collect();
    let zeta: Vec<f64> =
        (0..k).map(|i| energies.iter().map(|round| (round[i] - per_round[i]).abs()).fold(0.0, f64::max)).collect();
    let zeta0 = 0.5 * zeta.iter().map(|z| z * z).sum::<f64>();
    let total_samples: f64 = profiles.iter().map(|p| p.total_samples() as f64).sum();
    let weighted_volume: f64 = gammas.iter().map(|g| g * total_samples).sum();
    let budgets: f64 = profiles.iter().map(|p| p.energy_budget).sum();
    let bound = budgets + (2.0 * k as f64 * (horizon as f64 * zeta0 + tradeoff_v * weighted_volume)).sqrt();
    let total_energy = energies.iter().flatten().sum();
    EnergyBoundReport { total_energy, bound, zeta, zeta0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::tests::profiles;

    #[test]
    fn zero_trace() {
        let ps = profiles(&[100, 200], 1.0);
        let r = long_run_energy_bound(&vec![vec![0.0, 0.0]; 5], &[1.0; 5], &ps, 0.1);
        assert_eq!(r.total_energy, 0.0);
        assert!(r.holds());
    }

    #[test]
    fn budget_paced_trace_is_tight() {
        let ps = profiles(&[100], 2.0);
        let trace = vec![vec![0.2]; 10];
        let r = long_run_energy_bound(&trace, &[1.0; 10], &ps, 0.0);
        assert!(r.zeta[0] < 1e-15);
        assert!((r.bound - 2.0).abs() < 1e-12);
        assert!((r.total_energy - 2.0).abs() < 1e-12);
    }
}
