//! Options and reports shared by both least-squares backends.

use std::fmt;
use std::time::Duration;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    GaussNewton,
    LevenbergMarquardt,
}

/// Which backend runs a scan match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backend {
    /// Residual blocks over one parameter block.
    Residual,
    /// Vertices and typed edges.
    Graph,
}

impl Backend {
    pub const ALL: [Backend; 2] = [Backend::Residual, Backend::Graph];

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Residual => "residual",
            Backend::Graph => "graph",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Backend::Residual),
            "graph" => Ok(Backend::Graph),
            other => Err(Error::argument(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub algorithm: Algorithm,
    pub max_iterations: usize,
    /// Stop when `|cost_prev - cost| <= function_tolerance * cost`.
    pub function_tolerance: f64,
    /// Stop when `||J^T r||_inf <= gradient_tolerance`.
    pub gradient_tolerance: f64,
    /// Stop when the computed step satisfies `||delta|| <= parameter_tolerance`.
    pub parameter_tolerance: f64,
    pub initial_lm_lambda: f64,
    /// Damping multiplier after an accepted step.
    pub lambda_accept_factor: f64,
    /// Damping multiplier after a rejected step.
    pub lambda_reject_factor: f64,
    /// Damping beyond which the solve is declared a numerical failure.
    pub max_lm_lambda: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions::residual_defaults()
    }
}

impl SolverOptions {
    pub fn residual_defaults() -> Self {
        SolverOptions {
            algorithm: Algorithm::LevenbergMarquardt,
            max_iterations: 100,
            function_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            parameter_tolerance: 1e-12,
            initial_lm_lambda: 1e-4,
            lambda_accept_factor: 0.5,
            lambda_reject_factor: 4.0,
            max_lm_lambda: 1e32,
        }
    }

    pub fn graph_defaults() -> Self {
        SolverOptions {
            initial_lm_lambda: 1e-3,
            lambda_accept_factor: 1.0 / 3.0,
            lambda_reject_factor: 2.0,
            ..SolverOptions::residual_defaults()
        }
    }

    pub fn for_backend(backend: Backend) -> Self {
        match backend {
            Backend::Residual => SolverOptions::residual_defaults(),
            Backend::Graph => SolverOptions::graph_defaults(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::argument("max_iterations must be >= 1"));
        }
        for (name, v) in [
            ("function_tolerance", self.function_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
            ("parameter_tolerance", self.parameter_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::argument(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.algorithm == Algorithm::LevenbergMarquardt {
            if !(self.initial_lm_lambda > 0.0 && self.initial_lm_lambda.is_finite()) {
                return Err(Error::argument("initial_lm_lambda must be > 0"));
            }
            if !(self.lambda_accept_factor > 0.0 && self.lambda_accept_factor <= 1.0) {
                return Err(Error::argument("lambda_accept_factor must lie in (0, 1]"));
            }
            if !(self.lambda_reject_factor > 1.0 && self.lambda_reject_factor.is_finite()) {
                return Err(Error::argument("lambda_reject_factor must be > 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    NumericalFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverReport {
    /// Accepted steps. Trial steps rejected by Levenberg-Marquardt only raise
    /// the damping and are counted in `rejected_steps`.
    pub iterations: usize,
    pub rejected_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// `||J^T r||_inf` at the returned estimate.
    pub gradient_norm: f64,
    pub wall_time: Duration,
    pub termination: Termination,
}

impl SolverReport {
    pub fn wall_time_us(&self) -> f64 {
        self.wall_time.as_secs_f64() * 1e6
    }
}
