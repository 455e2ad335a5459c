//! 2D lidar scan matching against an occupancy probability grid.
//!
//! The matcher refines a pose by minimizing three constraints (occupied
//! space, translation prior, rotation prior) with one of two independent
//! nonlinear least-squares backends:
//!
//! * [`residual`]: residual blocks over a single pose, Jacobians from
//!   forward-mode autodiff, dense Cholesky normal equations.
//! * [`graph`]: pose vertices with an additive update and typed edges, solved
//!   as a stacked damped system.
//!
//! [`bench`] reruns the randomized initial-pose experiment for both backends
//! and [`sim`] drives a raycast lidar through a 2D world to build maps
//! incrementally.

pub mod autodiff;
pub mod bench;
pub mod costs;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod linalg;
pub mod matcher;
pub mod residual;
pub mod rng;
pub mod sim;
pub mod solver;

pub use autodiff::{Jet3, Real};
pub use costs::{ResidualKind, ResidualSpec, Weights};
pub use error::{Error, Result};
pub use geometry::{normalize_angle, transform_point, PointCloud2D, Pose2D};
pub use graph::{edge_error_and_jacobian, graph_optimize, EdgeKind, Graph, GraphEdge, PoseVertex};
pub use grid::{OccupancyUpdate, ProbabilityGrid, SplatKernel};
pub use linalg::cholesky_solve;
pub use matcher::{match_scan, MatchRequest, MatchResult};
pub use residual::{solve_residual_blocks, CostFunction, LeastSquaresProblem};
pub use solver::{Algorithm, Backend, SolverOptions, SolverReport, Termination};
