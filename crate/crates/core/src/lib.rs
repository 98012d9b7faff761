//! Gradient combiners for multi-task learning.
//!
//! Every combiner maps a [`TaskGradientSet`] (one gradient row per task) to a
//! single update direction. The crate ships linear scalarization, MGDA,
//! PCGrad, CAGrad and Nash-MTL, plus the imbalance-sensitive IMGrad variants
//! of CAGrad and Nash-MTL that interpolate between a "push away from the mean
//! gradient" objective and a min-norm objective using the cosine between the
//! mean gradient and the MGDA min-norm point.
//!
//! Alongside the combiners live the synthetic two-task benchmark
//! ([`toybench`]), a trajectory runner ([`runner`]) and the diagnostics used
//! to audit them ([`metrics`]).

// `!(x > 0.0)` is the NaN-rejecting form throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod combiners;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod runner;
pub mod seed;
pub mod solvers;
pub mod toybench;

pub use combiners::{build_combiner, Combiner, CombinerConfig, Method, MuMode, NashState, ObjectiveVariant};
pub use error::{Error, Result};
pub use linalg::{cosine, gram, CombineOutcome, PositiveWeights, SimplexWeights, TaskGradientSet, Weights};
pub use solvers::SolverConfig;
