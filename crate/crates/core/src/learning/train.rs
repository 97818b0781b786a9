//! Knowledge-aided loss, local updates and the per-round training protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::Dataset;
use crate::learning::knowledge::{aggregate_knowledge, compute_knowledge, KnowledgeMatrix};
use crate::learning::model::{log_sum_exp, softmax_in_place, Gradients, LocalModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub lr_extractor: f64,
    pub lr_predictor: f64,
    /// `λ`.
    pub knowledge_weight: f64,
    /// `τ`, full-batch steps per round.
    pub local_iters: usize,
    pub momentum: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { lr_extractor: 0.05, lr_predictor: 0.05, knowledge_weight: 0.1, local_iters: 5, momentum: 0.9 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_extractor >= 0.0 && self.lr_extractor.is_finite()) {
            return Err(Error::config("hyper.lr_extractor", "must be finite and non-negative"));
        }
        if !(self.lr_predictor >= 0.0 && self.lr_predictor.is_finite()) {
            return Err(Error::config("hyper.lr_predictor", "must be finite and non-negative"));
        }
        if !(self.knowledge_weight >= 0.0 && self.knowledge_weight.is_finite()) {
            return Err(Error::config("hyper.knowledge_weight", "must be finite and non-negative"));
        }
        if self.local_iters == 0 {
            return Err(Error::config("hyper.local_iters", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("hyper.momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `model` on `shard`; zero on an empty shard.
pub fn empirical_loss(model: &LocalModel, shard: &Dataset) -> f64 {
    if shard.is_empty() {
        return 0.0;
    }
    let cache = model.forward_batch(&shard.features, shard.len());
    let c = model.num_classes();
    let total: f64 = cache.logits().chunks_exact(c).zip(&shard.labels).map(|(z, &y)| log_sum_exp(z) - z[y]).sum();
    total / shard.len() as f64
}

/// Sample-weighted mean of the per-device losses.
pub fn global_loss(models: &[LocalModel], shards: &[Dataset]) -> f64 {
    let total: usize = shards.iter().map(Dataset::len).sum();
    if total == 0 {
        return 0.0;
    }
    models.iter().zip(shards).map(|(m, s)| s.len() as f64 * empirical_loss(m, s)).sum::<f64>() / total as f64
}

/// `(1/D_k) Σ ½‖h(x) − Ω_y‖²`. Samples whose class has no global prototype
/// add nothing; see [`absent_prototype_samples`].
pub fn knowledge_loss(model: &LocalModel, shard: &Dataset, global: &KnowledgeMatrix) -> f64 {
    if shard.is_empty() {
        return 0.0;
    }
    let p = model.feature_dim();
    let features = model.extract(&shard.features, shard.len());
    let total: f64 = features
        .chunks_exact(p)
        .zip(&shard.labels)
        .filter_map(|(z, &y)| global.row(y).map(|o| 0.5 * z.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
        .sum();
    total / shard.len() as f64
}

/// Samples of `shard` whose class is absent from `global`.
pub fn absent_prototype_samples(shard: &Dataset, global: &KnowledgeMatrix) -> usize {
    shard.labels.iter().filter(|&&y| !global.is_present(y)).count()
}

/// `F_k + λ L_k` and its gradient. Without `global` the knowledge term is
/// dropped.
pub fn loss_and_grad(
    model: &LocalModel,
    shard: &Dataset,
    global: Option<&KnowledgeMatrix>,
    knowledge_weight: f64,
) -> (f64, Gradients) {
    let n = shard.len();
    let c = model.num_classes();
    let p = model.feature_dim();
    let cache = model.forward_batch(&shard.features, n);
    let scale = 1.0 / n.max(1) as f64;

    let mut loss = 0.0;
    let mut d_logits = cache.logits().to_vec();
    for (row, &y) in d_logits.chunks_exact_mut(c).zip(&shard.labels) {
        loss += log_sum_exp(row) - row[y];
        softmax_in_place(row);
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= scale);
    }
    loss *= scale;

    let d_features = match global {
        Some(global) if knowledge_weight > 0.0 => {
            let mut d = vec![0.0; n * p];
            let mut penalty = 0.0;
            for ((z, dz), &y) in cache.features().chunks_exact(p).zip(d.chunks_exact_mut(p)).zip(&shard.labels) {
                let Some(proto) = global.row(y) else { continue };
                for ((g, a), b) in dz.iter_mut().zip(z).zip(proto) {
                    penalty += 0.5 * (a - b) * (a - b);
                    *g = knowledge_weight * scale * (a - b);
                }
            }
            loss += knowledge_weight * scale * penalty;
            Some(d)
        }
        _ => None,
    };

    let grads = model.backward(&cache, d_logits, d_features.as_deref());
    (loss, grads)
}

/// `τ` full-batch momentum steps on the knowledge-aided loss, with `global`
/// held fixed throughout.
///
/// Momentum buffers live on the model and carry over between rounds.
pub fn local_update(
    model: &mut LocalModel,
    shard: &Dataset,
    global: Option<&KnowledgeMatrix>,
    hp: &HyperParams,
    device: usize,
) -> Result<()> {
    if shard.is_empty() {
        return Ok(());
    }
    for step in 0..hp.local_iters {
        let (_, grads) = loss_and_grad(model, shard, global, hp.knowledge_weight);
        if !grads.all_finite() {
            return Err(Error::NonFiniteGradient { device, step });
        }
        let velocity = match model.velocity.take() {
            Some(mut v) if hp.momentum > 0.0 => {
                for (vl, gl) in v
                    .extractor
                    .iter_mut()
                    .chain(v.predictor.iter_mut())
                    .zip(grads.extractor.iter().chain(&grads.predictor))
                {
                    for (a, b) in vl.weights.iter_mut().zip(&gl.weights).chain(vl.bias.iter_mut().zip(&gl.bias)) {
                        *a = hp.momentum * *a + b;
                    }
                }
                v
            }
            _ => grads,
        };
        let n_extractor: usize = model.extractor.iter().map(|l| l.param_count()).sum();
        let values = velocity.values();
        for (i, (w, v)) in model.params_mut().zip(&values).enumerate() {
            let lr = if i < n_extractor { hp.lr_extractor } else { hp.lr_predictor };
            *w -= lr * v;
        }
        if hp.momentum > 0.0 {
            model.velocity = Some(velocity);
        }
    }
    Ok(())
}

/// Pooled accuracy: every device is scored on its own test shard by its own
/// model.
pub fn evaluate_accuracy(models: &[LocalModel], test_shards: &[Dataset]) -> f64 {
    let (correct, total) = models
        .par_iter()
        .zip(test_shards)
        .map(|(m, s)| (correct_predictions(m, s), s.len()))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

fn correct_predictions(model: &LocalModel, shard: &Dataset) -> usize {
    if shard.is_empty() {
        return 0;
    }
    let c = model.num_classes();
    let cache = model.forward_batch(&shard.features, shard.len());
    cache.logits().chunks_exact(c).zip(&shard.labels).filter(|(z, &y)| argmax(z) == y).count()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything the training protocol carries between rounds.
#[derive(Debug, Clone)]
pub struct KflState {
    pub models: Vec<LocalModel>,
    pub train: Vec<Dataset>,
    pub test: Vec<Dataset>,
    /// Global prototypes; `None` until the first aggregation.
    pub knowledge: Option<KnowledgeMatrix>,
}

impl KflState {
    pub fn new(models: Vec<LocalModel>, train: Vec<Dataset>, test: Vec<Dataset>) -> Result<Self> {
        if models.len() != train.len() || models.len() != test.len() {
            return Err(Error::DimensionMismatch { expected: models.len(), got: train.len().min(test.len()) });
        }
        if let Some(first) = models.first() {
            let (p, c) = (first.feature_dim(), first.num_classes());
            if let Some(bad) = models.iter().find(|m| m.feature_dim() != p || m.num_classes() != c) {
                return Err(Error::DimensionMismatch { expected: p, got: bad.feature_dim() });
            }
        }
        Ok(Self { models, train, test, knowledge: None })
    }

    pub fn accuracy(&self) -> f64 {
        evaluate_accuracy(&self.models, &self.test)
    }
}

/// One round of the protocol: the scheduled devices train against the current
/// global prototypes, upload their own, and the server aggregates them.
///
/// Devices train in parallel; aggregation runs in ascending id order.
pub fn run_kfl_round(state: &mut KflState, scheduled: &[usize], hp: &HyperParams) -> Result<()> {
    let mut mask = vec![false; state.models.len()];
    for &k in scheduled {
        *mask.get_mut(k).ok_or_else(|| Error::config("scheduled", format!("device {k} out of range")))? = true;
    }
    if scheduled.is_empty() {
        return Ok(());
    }
    let global = state.knowledge.as_ref();
    let train = &state.train;
    let locals: Vec<(usize, KnowledgeMatrix)> = state
        .models
        .par_iter_mut()
        .enumerate()
        .filter(|(k, _)| mask[*k])
        .map(|(k, model)| {
            local_update(model, &train[k], global, hp, k)?;
            Ok((k, compute_knowledge(model, &train[k])))
        })
        .collect::<Result<Vec<_>>>()?;
    // collect() preserves the index order of the source
    let locals: Vec<KnowledgeMatrix> = locals.into_iter().map(|(_, k)| k).collect();
    state.knowledge = Some(aggregate_knowledge(&locals, state.knowledge.as_ref())?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::model::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ModelSpec {
        ModelSpec { input_dim: 3, extractor_hidden: vec![4], feature_dim: 2, predictor_hidden: vec![], num_classes: 3 }
    }

    fn shard(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(3, 3, features, labels).unwrap()
    }

    /// Cross-entropy through the public single-sample forward pass.
    fn naive_loss(m: &LocalModel, s: &Dataset) -> f64 {
        let mut total = 0.0;
        for i in 0..s.len() {
            let (_, probs) = m.forward(s.sample(i)).unwrap();
            total -= probs[s.labels[i]].ln();
        }
        total / s.len() as f64
    }

    #[test]
    fn uniform_prediction_costs_ln_c() {
        let m = LocalModel::zeroed(spec());
        assert!((empirical_loss(&m, &shard(9, 1)) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_prediction_costs_nothing() {
        let mut m = LocalModel::zeroed(ModelSpec { num_classes: 2, ..spec() });
        m.predictor[0].bias = vec![800.0, 0.0];
        let s = Dataset::new(3, 2, vec![0.0; 3], vec![0]).unwrap();
        assert_eq!(empirical_loss(&m, &s), 0.0);
    }

    #[test]
    fn loss_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = LocalModel::new(spec(), &mut rng);
        let s = shard(17, 2);
        assert!((empirical_loss(&m, &s) - naive_loss(&m, &s)).abs() < 1e-10);
    }

    #[test]
    fn global_loss_weights_by_size() {
        let m = LocalModel::zeroed(spec());
        let mut biased = m.clone();
        biased.predictor[0].bias = vec![1.0, 0.0, 0.0];
        let (a, b) = (shard(6, 1), shard(3, 2));
        let la = empirical_loss(&m, &a);
        let lb = empirical_loss(&biased, &b);
        let g = global_loss(&[m, biased], &[a, b]);
        assert!((g - (2.0 * la + lb) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn knowledge_loss_single_sample() {
        let m = LocalModel::zeroed(spec());
        // zero model maps everything to the zero feature
        let mut g = KnowledgeMatrix::absent(3, 2);
        g.prototypes[0..2].copy_from_slice(&[2.0, 0.0]);
        g.class_counts[0] = 1;
        let s = Dataset::new(3, 3, vec![0.0; 6], vec![0, 1]).unwrap();
        assert_eq!(knowledge_loss(&m, &s, &g), 0.5 * 4.0 / 2.0);
        assert_eq!(absent_prototype_samples(&s, &g), 1);
    }

    #[test]
    fn knowledge_loss_vanishes_at_prototypes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = LocalModel::new(spec(), &mut rng);
        let s = shard(1, 3).subset(&[0, 0, 0]);
        let k = compute_knowledge(&m, &s);
        assert!(knowledge_loss(&m, &s, &k).abs() < 1e-30);
    }

    #[test]
    fn zero_learning_rates_leave_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = LocalModel::new(spec(), &mut rng);
        let before = m.params();
        let hp = HyperParams { lr_extractor: 0.0, lr_predictor: 0.0, ..HyperParams::default() };
        local_update(&mut m, &shard(12, 1), None, &hp, 0).unwrap();
        assert_eq!(m.params(), before);
    }

    #[test]
    fn plain_sgd_without_knowledge_or_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = LocalModel::new(spec(), &mut rng);
        let s = shard(12, 2);
        let mut g = KnowledgeMatrix::absent(3, 2);
        g.class_counts = vec![1, 1, 1];
        let hp =
            HyperParams { lr_extractor: 0.1, lr_predictor: 0.1, knowledge_weight: 0.0, local_iters: 1, momentum: 0.0 };

        let mut updated = m.clone();
        local_update(&mut updated, &s, Some(&g), &hp, 0).unwrap();

        let (_, grads) = loss_and_grad(&m, &s, None, 0.0);
        let mut reference = m.clone();
        for (w, gv) in reference.params_mut().zip(grads.values()) {
            *w -= 0.1 * gv;
        }
        assert_eq!(updated.params(), reference.params());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut m = LocalModel::zeroed(spec());
        m.predictor[0].weights[0] = f64::NAN;
        m.extractor[0].bias = vec![1.0; 4];
        m.extractor[1].bias = vec![1.0; 2];
        let err = local_update(&mut m, &shard(3, 1), None, &HyperParams::default(), 4).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { device: 4, step: 0 }));
    }

    #[test]
    fn accuracy_pools_samples() {
        let mut m = LocalModel::zeroed(spec());
        m.predictor[0].bias = vec![1.0, 0.0, 0.0];
        let a = Dataset::new(3, 3, vec![0.0; 9], vec![0, 0, 0]).unwrap();
        let b = Dataset::new(3, 3, vec![0.0; 3], vec![1]).unwrap();
        assert_eq!(evaluate_accuracy(&[m.clone(), m], &[a, b]), 0.75);
    }

    fn state() -> KflState {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let models = (0..3).map(|_| LocalModel::new(spec(), &mut rng)).collect();
        let train = (0..3).map(|k| shard(9, k)).collect();
        let test = (0..3).map(|k| shard(6, 10 + k)).collect();
        KflState::new(models, train, test).unwrap()
    }

    #[test]
    fn empty_round_changes_nothing() {
        let mut s = state();
        let models = s.models.clone();
        run_kfl_round(&mut s, &[], &HyperParams::default()).unwrap();
        assert_eq!(s.models, models);
        assert!(s.knowledge.is_none());
    }

    #[test]
    fn single_device_round_sets_its_knowledge() {
        let mut s = state();
        let untouched = s.models[0].clone();
        run_kfl_round(&mut s, &[1], &HyperParams::default()).unwrap();
        assert_eq!(s.models[0], untouched);
        assert_eq!(s.knowledge.as_ref().unwrap(), &compute_knowledge(&s.models[1], &s.train[1]));
    }

    #[test]
    fn rounds_are_deterministic() {
        let (mut a, mut b) = (state(), state());
        for round in [vec![0, 2], vec![1], vec![0, 1, 2]] {
            run_kfl_round(&mut a, &round, &HyperParams::default()).unwrap();
            run_kfl_round(&mut b, &round, &HyperParams::default()).unwrap();
        }
        assert_eq!(a.models, b.models);
        assert_eq!(a.knowledge, b.knowledge);
    }

    #[test]
    fn mismatched_feature_dims_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let models =
            vec![LocalModel::new(spec(), &mut rng), LocalModel::new(ModelSpec { feature_dim: 3, ..spec() }, &mut rng)];
        assert!(KflState::new(models, vec![shard(3, 0), shard(3, 1)], vec![shard(3, 2), shard(3, 3)]).is_err());
    }
}
