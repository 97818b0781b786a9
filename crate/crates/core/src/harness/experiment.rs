//! The end-to-end round loop.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::config::{DatasetKind, ExperimentConfig, SchedulerKind};
use super::metrics::{emit_metrics, MetricsRecord};
use super::synthetic::SyntheticClusters;
use crate::allocation::RoundSetup;
use crate::error::Result;
use crate::learning::idx::load_mnist;
use crate::learning::{matching_test_shards, partition_non_iid, run_kfl_round, Dataset, KflState, LocalModel};
use crate::numerics::Tolerance;
use crate::rng::{keyed_rng, Stream};
use crate::scheduler::{
    myopic_schedule, pattern_schedule, pattern_sizes, schedule_fixed_set, unit_weight_links, RoundRobin,
};
use crate::scheduler::{schedule_round, update_queues, RoundDecision, SchedulerConfig, VirtualQueueState};
use crate::system::{draw_channel, DeviceProfile, PayloadSpec};

/// Devices, their data and their freshly initialised models.
#[derive(Debug, Clone)]
pub struct Population {
    pub profiles: Vec<DeviceProfile>,
    pub state: KflState,
    pub payload: PayloadSpec,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub decisions: Vec<RoundDecision>,
    /// Queue backlogs before every round, plus the final state: `T + 1` rows.
    pub queue_history: Vec<Vec<f64>>,
    /// `energy_trace[t][k]`, zero for unscheduled devices.
    pub energy_trace: Vec<Vec<f64>>,
    pub round_weights: Vec<f64>,
    pub profiles: Vec<DeviceProfile>,
    pub initial_accuracy: f64,
    pub state: KflState,
}

impl ExperimentOutcome {
    /// Accuracy of the last evaluated round.
    pub fn final_accuracy(&self) -> f64 {
        self.records.iter().rev().map(|r| r.test_accuracy).find(|a| !a.is_nan()).unwrap_or(self.initial_accuracy)
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Synthetic => {
            let mut rng = keyed_rng(cfg.seed, Stream::Dataset, 0, 0);
            let clusters = SyntheticClusters::new(d.num_classes, d.input_dim, d.cluster_spread, &mut rng);
            let train = clusters.sample(d.train_per_class, &mut rng);
            let test = clusters.sample(d.test_per_class, &mut rng);
            Ok((train, test))
        }
        DatasetKind::Mnist => {
            let dir = d.mnist_dir.as_deref().expect("validated");
            let train = load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
            let test = load_mnist(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            Ok((train, test))
        }
    }
}

/// Build datasets, shards, device profiles and models from `cfg`.
pub fn build_population(cfg: &ExperimentConfig) -> Result<Population> {
    cfg.validate()?;
    let k = cfg.num_devices();
    let (train_pool, test_pool) = load_data(cfg)?;
    let train = partition_non_iid(
        &train_pool,
        k,
        cfg.dataset.classes_per_device,
        &mut keyed_rng(cfg.seed, Stream::Partition, 0, 0),
    )?;
    let test = matching_test_shards(
        &train,
        &test_pool,
        cfg.dataset.test_per_device,
        &mut keyed_rng(cfg.seed, Stream::TestSplit, 0, 0),
    );

    let dv = &cfg.devices;
    let profiles: Vec<DeviceProfile> = train
        .iter()
        .enumerate()
        .map(|(id, shard)| {
            let mut rng = keyed_rng(cfg.seed, Stream::DeviceProfile, id as u64, 0);
            let ghz = *dv.cpu_freqs_ghz.choose(&mut rng).expect("validated non-empty");
            // uniform over the annulus area
            let (r0, r1) = (dv.min_distance_m, dv.cell_radius_m);
            let distance = rng.random_range(r0 * r0..=r1 * r1).sqrt();
            DeviceProfile {
                id,
                samples_per_class: shard.class_counts(),
                cpu_freq: ghz * 1e9,
                flops_per_cycle: dv.flops_per_cycle,
                flops_per_sample: dv.flops_per_sample,
                power_coeff: dv.power_coeff,
                max_power: cfg.max_power_watts(),
                energy_budget: dv.energy_per_round * cfg.horizon as f64,
                distance,
            }
        })
        .collect();
    for p in &profiles {
        p.validate()?;
    }

    let input_dim = train_pool.input_dim;
    let models = (0..k)
        .map(|id| {
            LocalModel::new(cfg.model_spec(id, input_dim), &mut keyed_rng(cfg.seed, Stream::ModelInit, id as u64, 0))
        })
        .collect();
    let state = KflState::new(models, train, test)?;
    let payload = PayloadSpec::for_knowledge(
        cfg.dataset.num_classes,
        cfg.model.feature_dim,
        cfg.channel.bits_per_param,
        cfg.channel.model_params,
    );
    Ok(Population { profiles, state, payload })
}

pub fn scheduler_config(cfg: &ExperimentConfig, payload: PayloadSpec) -> SchedulerConfig {
    SchedulerConfig {
        tradeoff_v: cfg.scheduler.tradeoff_v,
        round_weights: SchedulerConfig::inverse_round_weights(cfg.horizon),
        setup: RoundSetup {
            channel: cfg.channel_model(),
            payload,
            deadline: cfg.devices.deadline_s,
            local_iters: cfg.hyper.local_iters as u32,
        },
        tol: Tolerance::default(),
    }
}

/// Run the configured experiment and write its CSV if an output path is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = simulate(cfg)?;
    if let Some(path) = &cfg.output {
        emit_metrics(&outcome.records, path)?;
    }
    Ok(outcome)
}

/// [`run_experiment`] writing to `path` regardless of the configured output.
pub fn run_experiment_to(cfg: &ExperimentConfig, path: &Path) -> Result<ExperimentOutcome> {
    let outcome = simulate(cfg)?;
    emit_metrics(&outcome.records, path)?;
    Ok(outcome)
}

fn simulate(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let Population { profiles, mut state, payload } = build_population(cfg)?;
    let sched = scheduler_config(cfg, payload);
    sched.validate()?;
    let horizon = cfg.horizon;
    let k = profiles.len();
    let channel_model = cfg.channel_model();

    let pattern = (cfg.scheduler.kind == SchedulerKind::Pattern)
        .then(|| pattern_sizes(cfg.scheduler.pattern, horizon, cfg.scheduler.pattern_mean, cfg.scheduler.pattern_peak));
    let mut round_robin = RoundRobin::new(cfg.scheduler.round_robin_window);

    let initial_accuracy = state.accuracy();
    let mut queues = VirtualQueueState::new(k);
    let mut spent = vec![0.0; k];
    let mut records = Vec::with_capacity(horizon);
    let mut decisions = Vec::with_capacity(horizon);
    let mut queue_history = vec![queues.backlogs.clone()];
    let mut energy_trace = Vec::with_capacity(horizon);

    for t in 0..horizon {
        let channel = draw_channel(&channel_model, &profiles, t, cfg.seed);
        let decision = match cfg.scheduler.kind {
            SchedulerKind::Proposed => schedule_round(&queues, &profiles, &channel, &sched, t),
            SchedulerKind::RoundRobin => round_robin.schedule(&queues.backlogs, &profiles, &channel, &sched, &spent, t),
            SchedulerKind::Myopic => myopic_schedule(&queues.backlogs, &profiles, &channel, &sched, &spent, t),
            SchedulerKind::Pattern => {
                let sizes = pattern.as_ref().expect("pattern sizes");
                let links = unit_weight_links(&profiles, &channel, &sched);
                let feasible: Vec<usize> = links.iter().map(|l| l.profile.id).collect();
                let picked =
                    pattern_schedule(sizes[t], &feasible, &mut keyed_rng(cfg.seed, Stream::Pattern, t as u64, 0));
                let chosen = links.into_iter().filter(|l| picked.contains(&l.profile.id)).collect();
                schedule_fixed_set(chosen, &queues.backlogs, &profiles, &sched, t)
            }
        }
        .map_err(|e| e.in_round(t))?;

        let mut members = decision.scheduled.clone();
        members.sort_unstable();
        run_kfl_round(&mut state, &members, &cfg.hyper).map_err(|e| e.in_round(t))?;

        let energies: Vec<f64> = (0..k).map(|id| decision.energy_of(id)).collect();
        for (s, e) in spent.iter_mut().zip(&energies) {
            *s += e;
        }
        queues = update_queues(&queues, &decision, &profiles, horizon);
        queue_history.push(queues.backlogs.clone());

        let evaluate = (t + 1) % cfg.eval_interval == 0 || t + 1 == horizon;
        records.push(MetricsRecord {
            round: t,
            test_accuracy: if evaluate { state.accuracy() } else { f64::NAN },
            scheduled_count: decision.scheduled.len(),
            scheduled_data_volume: decision.data_volume(&profiles),
            cumulative_energy: spent.clone(),
            max_queue: queues.max_backlog(),
            dpp_objective: decision.objective,
            bytes_uploaded: decision.scheduled.len() as u64 * payload.bytes(),
        });
        energy_trace.push(energies);
        decisions.push(decision);
    }

    Ok(ExperimentOutcome {
        records,
        decisions,
        queue_history,
        energy_trace,
        round_weights: sched.round_weights,
        profiles,
        initial_accuracy,
        state,
    })
}
