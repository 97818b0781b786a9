//! Federated learning with prototype (knowledge) sharing over an
//! energy-limited wireless uplink.
//!
//! Each round the server draws channel gains, picks devices with an online
//! drift-plus-penalty scheduler, splits the band between them, lets them train
//! locally against the current global prototypes and averages the prototypes
//! they upload.
//!
//! - [`numerics`]: Lambert W and bisection.
//! - [`system`]: device profiles, fading channel, latency and energy.
//! - [`allocation`]: bandwidth shares and transmit powers for a scheduled set.
//! - [`scheduler`]: virtual energy queues, the online scheduler and baselines.
//! - [`learning`]: local models, prototypes and the training protocol.
//! - [`harness`]: configuration, datasets, the round loop and CSV metrics.
//! - [`oracle`] and [`verify`]: brute-force references and the suites that use them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod error;
pub mod harness;
pub mod learning;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod scheduler;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
