//! A tabular-MDP planning and reinforcement-learning lab built around
//! operator-splitting value iteration.
//!
//! The crate provides:
//!
//! - [`mdp`]: the finite-MDP data model and Bellman operators;
//! - [`splitting`]: the generic matrix-splitting linear solver that value
//!   iteration instantiates, plus Jacobi and Gauss-Seidel schemes;
//! - [`solvers`]: direct policy evaluation, value iteration, policy
//!   iteration, and modified policy iteration;
//! - [`varga`]: the operator-splitting iteration that plans against an
//!   approximate model while querying the true one once per iteration;
//! - [`analysis`]: effective discount factors, gain-operator norms, and
//!   error-propagation bound checkers;
//! - [`model`]: smoothed, self-loop, and maximum-likelihood approximate
//!   models;
//! - [`learners`]: OS-Dyna, Dyna, Q-learning, and TD(0);
//! - [`envs`]: the cliffwalk, maze, Garnet, and two-state benchmarks;
//! - [`experiment`]: the configuration-driven runner with CSV / JSON
//!   emission that the CLI drives.

pub mod analysis;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod linalg;
pub mod mdp;
pub mod model;
pub mod solvers;
pub mod splitting;
pub mod trajectory;
pub mod varga;

pub use error::{Error, Result};
pub use mdp::{Mode, Policy, TabularMdp, ValueFunction};
pub use model::ModelPair;
pub use varga::InnerSolve;

// Array types appear throughout the public API.
pub use ndarray;
