//! Model-based reinforcement learning with a risk-seeking ("curious") iLQR.
//!
//! The pieces, bottom-up:
//!
//! - [`arm`]: ground-truth planar n-link arm used for rollouts and metrics.
//! - [`dataset`]: `(state, torque) -> next acceleration` transition tuples.
//! - [`gp`]: per-output Gaussian-process dynamics with analytic gradients and
//!   Euler integration to a Gaussian next-state distribution.
//! - [`cost`]: quadratic joint-space reaching cost.
//! - [`ilqr`]: risk-sensitive backward pass, line-searched forward pass and the
//!   outer solver returning a time-varying affine feedback policy.
//! - [`mbrl`]: the learn / optimize / roll out loop plus baseline exploration modes.
//! - [`config`] and [`cli`]: experiment configuration and the command-line runner.

pub mod arm;
pub mod cli;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod ilqr;
pub mod mbrl;

pub use arm::{Action, ArmParams, State};
pub use cost::{CostExpansion, ReachingCost};
pub use dataset::TransitionDataset;
pub use error::{Error, Result};
pub use gp::{GaussianPrediction, GpHyperparams, GpModel, HyperparamSpec, KernelParams, StateDistribution};
pub use ilqr::{FeedbackPolicy, LinearizedStep, SolverConfig};
pub use mbrl::{ExperimentResult, ExplorationMode, IterationRecord};
