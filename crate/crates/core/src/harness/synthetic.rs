//! Gaussian class clusters used as a small stand-in for MNIST.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::learning::Dataset;

/// `C` isotropic Gaussians around random unit-norm centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClusters {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Row-major `C × d`.
    pub means: Vec<f64>,
    pub spread: f64,
}

impl SyntheticClusters {
    pub fn new<R: Rng + ?Sized>(num_classes: usize, input_dim: usize, spread: f64, rng: &mut R) -> Self {
        let mut means = Vec::with_capacity(num_classes * input_dim);
        for _ in 0..num_classes {
            let mut v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            means.extend(v);
        }
        Self { num_classes, input_dim, means, spread }
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.input_dim..(class + 1) * self.input_dim]
    }

    /// `per_class` fresh samples of every class, classes interleaved.
    pub fn sample<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Dataset {
        let n = per_class * self.num_classes;
        let mut features = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.num_classes;
            for &m in self.mean(c) {
                let z: f64 = StandardNormal.sample(rng);
                features.push(m + self.spread * z);
            }
            labels.push(c);
        }
        Dataset { input_dim: self.input_dim, num_classes: self.num_classes, features, labels }
    }
}

pub fn gen_synthetic<R: Rng + ?Sized>(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut R,
) -> Dataset {
    SyntheticClusters::new(num_classes, input_dim, spread, rng).sample(per_class, rng)
}
