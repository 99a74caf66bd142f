//! Meta-learning for multi-instance multi-label (MIML) bags embedded in a
//! heterogeneous network.
//!
//! The pipeline, end to end:
//!
//! 1. [`hmin`] loads a typed heterogeneous network whose bag-type nodes carry
//!    instance feature matrices and label sets.
//! 2. [`walks`] samples meta-path-constrained random walks starting from every
//!    bag node.
//! 3. [`skipgram`] trains one negative-sampling skip-gram table per meta-path
//!    over the walk corpus and reads out per-path bag context vectors.
//! 4. [`projection`] fuses each instance with its bag's context through a
//!    sparse random projection, producing the per-path bag representations.
//! 5. [`tasklearner`] scores instances and bags with a two-head perceptron and
//!    provides the task loss with full manual backpropagation.
//! 6. [`episodes`] splits bags/labels into source and target pools and builds
//!    one support/query task per bag.
//! 7. [`meta`] runs the bilevel optimization: per-task inner adaptation with
//!    per-meta-path attention, a first-order outer update of the shared prior,
//!    and fast adaptation to target tasks.
//! 8. [`metrics`] evaluates multi-label rankings (AUROC, AUPRC, top-K F1,
//!    1-HL).
//! 9. [`synth`] generates planted-structure synthetic networks with a
//!    ground-truth manifest for end-to-end verification.
//!
//! [`pipeline`] composes the stages into whole experiments (the CLI drives
//! the same functions through files).
//!
//! Everything stochastic is driven by explicitly seeded ChaCha streams derived
//! via [`seed::derive_seed`], so a run is a pure function of its config and
//! master seed, independent of thread count.

pub mod episodes;
pub mod error;
pub mod hmin;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod seed;
pub mod skipgram;
pub mod synth;
pub mod tasklearner;
pub mod walks;

pub use error::{Error, Result};
