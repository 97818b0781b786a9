//! Local models, prototype knowledge and the federated training protocol.

pub mod data;
pub mod idx;
pub mod knowledge;
pub mod model;
pub mod train;

pub use data::{matching_test_shards, partition_non_iid, Dataset};
pub use knowledge::{aggregate_knowledge, compute_knowledge, KnowledgeMatrix};
pub use model::{Gradients, Layer, LocalModel, ModelSpec};
pub use train::{
    absent_prototype_samples, empirical_loss, evaluate_accuracy, global_loss, knowledge_loss, local_update,
    loss_and_grad, run_kfl_round, HyperParams, KflState,
};
