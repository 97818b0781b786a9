//! Labelled sample sets and the class-sharded non-IID split.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

/// Row-major features with class labels. Used both for whole datasets and
/// for per-device shards.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub num_classes: usize,
    /// `len() × input_dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input_dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * input_dim, got: features.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config("labels", format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self { input_dim, num_classes, features, labels })
    }

    pub fn empty(input_dim: usize, num_classes: usize) -> Self {
        Self { input_dim, num_classes, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// `D_{k,c}` for every class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of every class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            idx[y].push(i);
        }
        idx
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self { input_dim: self.input_dim, num_classes: self.num_classes, features, labels }
    }
}

/// Class-sorted shard split: every class is cut into `mK/C` shards and each
/// device receives `m` shards at random, so it sees at most `m` classes.
///
/// When a class does not divide evenly, the remainder goes to its last shard.
pub fn partition_non_iid<R: Rng + ?Sized>(
    dataset: &Dataset,
    devices: usize,
    classes_per_device: usize,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    let classes = dataset.num_classes;
    if devices == 0 {
        return Err(Error::config("num_devices", "must be at least 1"));
    }
    if classes_per_device == 0 || classes_per_device > classes {
        return Err(Error::config(
            "classes_per_device",
            format!("must be in [1, {classes}], got {classes_per_device}"),
        ));
    }
    let total_shards = classes_per_device * devices;
    if !total_shards.is_multiple_of(classes) {
        return Err(Error::config(
            "classes_per_device",
            format!("m·K = {total_shards} is not a multiple of the {classes} classes"),
        ));
    }
    let per_class = total_shards / classes;

    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    for (c, mut idx) in dataset.class_indices().into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::config(
                "dataset",
                format!("class {c} has {} samples, fewer than its {per_class} shards", idx.len()),
            ));
        }
        idx.shuffle(rng);
        let size = idx.len() / per_class;
        for s in 0..per_class {
            let end = if s + 1 == per_class { idx.len() } else { (s + 1) * size };
            shards.push(idx[s * size..end].to_vec());
        }
    }
    shards.shuffle(rng);

    Ok(shards
        .chunks(classes_per_device)
        .map(|group| {
            let mut members: Vec<usize> = group.iter().flatten().copied().collect();
            members.sort_unstable();
            dataset.subset(&members)
        })
        .collect())
}

/// Test shard for every device, drawn from `pool` with the class proportions
/// of the device's training shard.
pub fn matching_test_shards<R: Rng + ?Sized>(
    train: &[Dataset],
    pool: &Dataset,
    per_device: usize,
    rng: &mut R,
) -> Vec<Dataset> {
    let by_class = pool.class_indices();
    train
        .iter()
        .map(|shard| {
            let counts = shard.class_counts();
            let quotas = largest_remainder(per_device, &counts);
            let mut members = Vec::with_capacity(per_device);
            for (c, &quota) in quotas.iter().enumerate() {
                let available = &by_class[c];
                if quota == 0 || available.is_empty() {
                    continue;
                }
                let take = quota.min(available.len());
                members.extend(available.choose_multiple(rng, take).copied());
            }
            members.sort_unstable();
            pool.subset(&members)
        })
        .collect()
}

fn largest_remainder(total: usize, counts: &[usize]) -> Vec<usize> {
    let sum: usize = counts.iter().sum();
    if sum == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts.iter().map(|&c| total as f64 * c as f64 / sum as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total - quotas.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if counts[i] > 0 {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    /// Sample `i` carries the single feature `i`, so shards can be traced back.
    fn tagged(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(1, classes, features, labels).unwrap()
    }

    fn tags(d: &Dataset) -> Vec<usize> {
        d.features.iter().map(|&f| f as usize).collect()
    }

    #[test]
    fn shards_are_a_partition() {
        let data = tagged(120, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shards = partition_non_iid(&data, 100, 2, &mut rng).unwrap();
        assert_eq!(shards.len(), 100);
        let mut seen = HashSet::new();
        let mut total = 0;
        for s in &shards {
            total += s.len();
            for t in tags(s) {
                assert!(seen.insert(t), "sample {t} appears twice");
            }
            let classes = s.class_counts().iter().filter(|&&c| c > 0).count();
            assert!(classes <= 2);
            // 20 shards of 6 samples per class
            assert_eq!(s.len(), 12);
        }
        assert_eq!(total, data.len());
    }

    #[test]
    fn single_device_gets_everything() {
        let data = tagged(7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shards = partition_non_iid(&data, 1, 4, &mut rng).unwrap();
        assert_eq!(shards.len(), 1);
        let mut t = tags(&shards[0]);
        t.sort_unstable();
        assert_eq!(t, (0..28).collect::<Vec<_>>());
    }

    #[test]
    fn remainder_goes_to_last_shard() {
        let data = tagged(11, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shards = partition_non_iid(&data, 2, 2, &mut rng).unwrap();
        let mut sizes: Vec<usize> = shards.iter().map(Dataset::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes.iter().sum::<usize>(), 22);
        // shard sizes 5 and 6 per class
        assert!(sizes.iter().all(|&s| (10..=12).contains(&s)));
    }

    #[test]
    fn incompatible_shard_count_is_rejected() {
        let data = tagged(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = partition_non_iid(&data, 3, 3, &mut rng).unwrap_err().to_string();
        assert!(err.contains("classes_per_device"), "{err}");
        assert!(partition_non_iid(&data, 5, 11, &mut rng).is_err());
    }

    #[test]
    fn test_shards_follow_training_proportions() {
        let data = tagged(100, 4);
        let train = vec![data.subset(&[0, 4, 8, 1]), data.subset(&[2, 6])];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let test = matching_test_shards(&train, &data, 40, &mut rng);
        assert_eq!(test[0].class_counts(), vec![30, 10, 0, 0]);
        assert_eq!(test[1].class_counts(), vec![0, 0, 40, 0]);
    }
}
