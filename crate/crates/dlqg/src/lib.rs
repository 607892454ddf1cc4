//! Decentralized output-feedback LQG control on multitree DAGs.
//!
//! The library is organized around a pipeline:
//!
//! * [`graph`] — multitree machinery: reachability, relations, generations,
//!   six-node aggregations, embedding matrices.
//! * [`model`] — problem data (block dynamics, cost, noise), structural
//!   validation, and the A1/A2/A2' assumption checkers.
//! * [`lingauss`] — exact linear-Gaussian calculus: closed-loop variables as
//!   affine maps of the primitive random vector, exact covariances,
//!   conditional expectations, and exact expected cost.
//! * [`centralized`] — finite-horizon Riccati/Kalman recursions and the
//!   six-node reduction to a centralized subproblem.
//! * [`structured`] — the structured controller (per-node sufficient
//!   statistics `z^funnel(j)`) and its recursive estimator.
//! * [`oracle`] — globally optimal linear decentralized strategies via a
//!   convex purified-output parametrization; the ground truth the structural
//!   results are tested against.
//! * [`simulate`] — seeded Monte Carlo rollouts.
//! * [`verify`] — the experiment battery tying everything together.
//! * [`fileio`] — problem/report file formats used by the CLI.
//!
//! Solving a two-node chain and checking the structural claim at the
//! optimum:
//!
//! ```
//! use dlqg::graph::Dag;
//! use dlqg::lingauss::PrimitiveBasis;
//! use dlqg::model::{random_instance, AssumptionMode, NodeDims};
//! use dlqg::{oracle, verify};
//!
//! let dag = Dag::from_edges_1based(2, &[(1, 2)]).unwrap();
//! let dims = NodeDims::uniform(2, 1, 1, 1);
//! let problem = random_instance(&dag, &dims, 3, 7, AssumptionMode::A2).unwrap();
//!
//! let basis = PrimitiveBasis::new(&problem);
//! let (_gains, optimal_cost, info) = oracle::solve(&problem, &basis, false).unwrap();
//! assert!(optimal_cost > 0.0);
//! assert!(info.grad_norm <= 1e-8 * (1.0 + info.hess_norm));
//!
//! // At the optimum, every input is a function of ancestral state estimates.
//! let desc = verify::InstanceDescriptor {
//!     graph: "chain(2)".into(),
//!     edges: problem.dag.edges_1based(),
//!     state_dims: problem.dims.state.clone(),
//!     horizon: problem.horizon,
//!     seed: 7,
//! };
//! let report = verify::run_theorem1(&problem, desc).unwrap();
//! assert_eq!(report.passed, Some(true));
//! ```

// Index-heavy block-matrix code reads clearest with explicit loops over
// node/time indices shared across several arrays.
#![allow(clippy::needless_range_loop)]

pub mod centralized;
pub mod fileio;
pub mod graph;
pub mod lingauss;
pub mod model;
pub mod oracle;
pub mod simulate;
pub mod structured;
pub mod verify;

mod error;

pub use error::Error;

// Callers build matrices with the same linear-algebra types the library uses.
pub use nalgebra;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
