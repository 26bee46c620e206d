//! Robust optimal transport under adversarial Mahalanobis metrics.
//!
//! The crate computes `W_ROT(μ1, μ2) = min_γ max_M ⟨V(γ), M⟩ − Ω(M)` between
//! discrete measures with a Frank–Wolfe outer loop and closed-form inner
//! maximizers, and trains softmax classifiers with the resulting loss.
//!
//! Modules, bottom up:
//!
//! * [`measures`]: measures, transport plans, displacement moments, groupings;
//! * [`sinkhorn`]: entropic OT, symmetric scaling, a tiny exact OT solver;
//! * [`metric_solvers`]: closed-form adversarial metrics;
//! * [`frank_wolfe`]: the robust distance and the `W₂²` baseline;
//! * [`rot_loss`]: the robust loss over label distributions and its gradient;
//! * [`classifier`]: softmax model, SGD training, AUC and mAP;
//! * [`data_io`]: file formats;
//! * [`cli`]: the `robust-ot` command line.

// `!(x > 0.0)` is the NaN-rejecting parameter check used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod frank_wolfe;
pub mod measures;
pub mod metric_solvers;
pub mod rot_loss;
pub mod sinkhorn;

pub use error::{Error, Result};
