//! Class prototypes: per-device computation and server-side aggregation.

use crate::error::{Error, Result};
use crate::learning::data::Dataset;
use crate::learning::model::LocalModel;

/// `C × p` prototype matrix with the sample counts behind each row.
///
/// A row whose count is zero is absent; its values carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeMatrix {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Row-major `num_classes × feature_dim`.
    pub prototypes: Vec<f64>,
    pub class_counts: Vec<usize>,
}

impl KnowledgeMatrix {
    pub fn absent(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            prototypes: vec![0.0; num_classes * feature_dim],
            class_counts: vec![0; num_classes],
        }
    }

    pub fn row(&self, class: usize) -> Option<&[f64]> {
        (self.class_counts.get(class).copied().unwrap_or(0) > 0)
            .then(|| &self.prototypes[class * self.feature_dim..(class + 1) * self.feature_dim])
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.class_counts.get(class).is_some_and(|&c| c > 0)
    }

    /// Number of values sent on the uplink, `C·p`.
    pub fn param_count(&self) -> usize {
        self.num_classes * self.feature_dim
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.num_classes != other.num_classes || self.feature_dim != other.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.param_count(), got: other.param_count() });
        }
        Ok(())
    }
}

/// Mean extractor output per class over `shard`.
pub fn compute_knowledge(model: &LocalModel, shard: &Dataset) -> KnowledgeMatrix {
    let p = model.feature_dim();
    let mut know = KnowledgeMatrix::absent(model.num_classes(), p);
    let features = model.extract(&shard.features, shard.len());
    for (z, &y) in features.chunks_exact(p).zip(&shard.labels) {
        know.class_counts[y] += 1;
        for (acc, v) in know.prototypes[y * p..(y + 1) * p].iter_mut().zip(z) {
            *acc += v;
        }
    }
    for (row, &n) in know.prototypes.chunks_exact_mut(p).zip(&know.class_counts) {
        if n > 0 {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    know
}

/// Count-weighted mean of the contributors' rows, class by class.
///
/// Contributors are summed in slice order. A class no contributor holds keeps
/// its row (and count) from `previous`, or stays absent.
pub fn aggregate_knowledge(locals: &[KnowledgeMatrix], previous: Option<&KnowledgeMatrix>) -> Result<KnowledgeMatrix> {
    let first = match (locals.first(), previous) {
        (Some(f), _) => f,
        (None, Some(prev)) => return Ok(prev.clone()),
        (None, None) => return Err(Error::config("knowledge", "aggregation needs at least one contributor")),
    };
    for other in locals.iter().chain(previous) {
        first.same_shape(other)?;
    }
    let p = first.feature_dim;
    let mut out = KnowledgeMatrix::absent(first.num_classes, p);
    for c in 0..first.num_classes {
        let total: usize = locals.iter().map(|l| l.class_counts[c]).sum();
        let row = &mut out.prototypes[c * p..(c + 1) * p];
        if total == 0 {
            if let Some(prev) = previous.filter(|prev| prev.is_present(c)) {
                row.copy_from_slice(prev.row(c).unwrap());
                out.class_counts[c] = prev.class_counts[c];
            }
            continue;
        }
        for local in locals {
            let n = local.class_counts[c];
            if n == 0 {
                continue;
            }
            let w = n as f64 / total as f64;
            for (acc, v) in row.iter_mut().zip(&local.prototypes[c * p..(c + 1) * p]) {
                *acc += w * v;
            }
        }
        out.class_counts[c] = total;
    }
    Ok(out)
}
