//! Residual-block backend: one 3-parameter pose, a list of cost functions,
//! Jacobians from [`Jet3`] seeding and dense normal equations.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Jet3;
use crate::costs::ResidualSpec;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2D};
use crate::linalg::cholesky_solve;
use crate::solver::{Algorithm, SolverOptions, SolverReport, Termination};

/// A block of residuals over the pose parameters `[x, y, theta]`.
pub trait CostFunction {
    fn num_residuals(&self) -> usize;

    /// Residuals with derivatives; `residuals.len() == self.num_residuals()`.
    fn evaluate_jet(&self, params: &[Jet3; 3], residuals: &mut [Jet3]);

    fn evaluate(&self, params: &[f64; 3], residuals: &mut [f64]) {
        let p = params.map(Jet3::constant);
        let mut buf = vec![Jet3::default(); residuals.len()];
        self.evaluate_jet(&p, &mut buf);
        for (r, j) in residuals.iter_mut().zip(buf) {
            *r = j.a;
        }
    }
}

impl CostFunction for ResidualSpec<'_> {
    fn num_residuals(&self) -> usize {
        self.residual_count()
    }

    fn evaluate_jet(&self, params: &[Jet3; 3], residuals: &mut [Jet3]) {
        ResidualSpec::evaluate(self, params, residuals)
    }

    fn evaluate(&self, params: &[f64; 3], residuals: &mut [f64]) {
        ResidualSpec::evaluate(self, params, residuals)
    }
}

pub struct LeastSquaresProblem<'a> {
    parameter: Pose2D,
    constant: [bool; 3],
    blocks: Vec<Box<dyn CostFunction + 'a>>,
}

/// `J^T J`, `J^T r` and the cost at one point, over all three parameters.
struct Linearization {
    cost: f64,
    jtj: [[f64; 3]; 3],
    jtr: [f64; 3],
}

impl<'a> LeastSquaresProblem<'a> {
    pub fn new(initial: Pose2D) -> Self {
        LeastSquaresProblem {
            parameter: initial,
            constant: [false; 3],
            blocks: Vec::new(),
        }
    }

    pub fn add_residual_block(&mut self, block: impl CostFunction + 'a) -> Result<()> {
        if block.num_residuals() == 0 {
            return Err(Error::argument("residual block has no residuals"));
        }
        self.blocks.push(Box::new(block));
        Ok(())
    }

    /// Holds parameter `index` (0 = x, 1 = y, 2 = theta) at its initial value.
    pub fn set_parameter_constant(&mut self, index: usize) -> Result<()> {
        if index >= 3 {
            return Err(Error::argument(format!(
                "parameter index {index} out of range"
            )));
        }
        self.constant[index] = true;
        Ok(())
    }

    pub fn parameter(&self) -> Pose2D {
        self.parameter
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_residuals(&self) -> usize {
        self.blocks.iter().map(|b| b.num_residuals()).sum()
    }

    pub fn cost(&self, params: &[f64; 3]) -> f64 {
        let mut buf = Vec::new();
        let mut cost = 0.0;
        for b in &self.blocks {
            buf.clear();
            buf.resize(b.num_residuals(), 0.0);
            b.evaluate(params, &mut buf);
            cost += buf.iter().map(|r| r * r).sum::<f64>();
        }
        cost
    }

    fn linearize(&self, params: &[f64; 3]) -> Linearization {
        let seeded = Jet3::seed(*params);
        let mut lin = Linearization {
            cost: 0.0,
            jtj: [[0.0; 3]; 3],
            jtr: [0.0; 3],
        };
        let mut buf = Vec::new();
        for b in &self.blocks {
            buf.clear();
            buf.resize(b.num_residuals(), Jet3::default());
            b.evaluate_jet(&seeded, &mut buf);
            for r in &buf {
                lin.cost += r.a * r.a;
                for i in 0..3 {
                    lin.jtr[i] += r.v[i] * r.a;
                    for j in 0..3 {
                        lin.jtj[i][j] += r.v[i] * r.v[j];
                    }
                }
            }
        }
        lin
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::argument("problem has no residual blocks"));
        }
        if self.constant.iter().all(|&c| c) {
            return Err(Error::argument("problem has no free parameters"));
        }
        if !self.parameter.is_finite() {
            return Err(Error::argument("initial parameter is not finite"));
        }
        Ok(())
    }
}

/// Scan-matching problem over the three constraints in `blocks`.
pub fn problem_from_specs<'a>(
    initial: Pose2D,
    blocks: &[ResidualSpec<'a>],
) -> Result<LeastSquaresProblem<'a>> {
    let mut problem = LeastSquaresProblem::new(initial);
    for b in blocks {
        problem.add_residual_block(*b)?;
    }
    Ok(problem)
}

fn inf_norm(free: &[usize], v: &[f64; 3]) -> f64 {
    free.iter().map(|&i| v[i].abs()).fold(0.0, f64::max)
}

/// Minimizes `sum r_i^2` starting from the problem's parameter.
///
/// Returns the best pose found and a report; a [`Termination::NumericalFailure`]
/// still yields the last accepted pose.
pub fn solve_residual_blocks(
    problem: &LeastSquaresProblem<'_>,
    options: &SolverOptions,
) -> Result<(Pose2D, SolverReport)> {
    options.validate()?;
    problem.validate()?;
    let start = Instant::now();

    let free: Vec<usize> = (0..3).filter(|&i| !problem.constant[i]).collect();
    let n = free.len();
    let mut params = problem.parameter.to_array();
    let mut lin = problem.linearize(&params);
    let initial_cost = lin.cost;
    let mut best = (lin.cost, params);
    let mut lambda = options.initial_lm_lambda;
    let mut iterations = 0;

    let mut rejected_steps = 0;

    let termination = if !lin.cost.is_finite() {
        Termination::NumericalFailure
    } else {
        'outer: loop {
            if inf_norm(&free, &lin.jtr) <= options.gradient_tolerance {
                break Termination::Converged;
            }
            if iterations >= options.max_iterations {
                break Termination::MaxIterations;
            }
            iterations += 1;

            loop {
                let mut h = DMatrix::from_fn(n, n, |i, j| lin.jtj[free[i]][free[j]]);
                let g = DVector::from_fn(n, |i, _| -lin.jtr[free[i]]);
                if options.algorithm == Algorithm::LevenbergMarquardt {
                    for i in 0..n {
                        h[(i, i)] += lambda * h[(i, i)].clamp(1e-6, 1e32);
                    }
                }
                let delta = match cholesky_solve(&h, &g) {
                    Ok(d) => d,
                    Err(_) if options.algorithm == Algorithm::LevenbergMarquardt => {
                        rejected_steps += 1;
                        lambda *= options.lambda_reject_factor;
                        if lambda > options.max_lm_lambda {
                            break 'outer Termination::NumericalFailure;
                        }
                        continue;
                    }
                    Err(_) => break 'outer Termination::NumericalFailure,
                };
                if delta.norm() <= options.parameter_tolerance {
                    break 'outer Termination::Converged;
                }

                let mut candidate = params;
                for (k, &i) in free.iter().enumerate() {
                    candidate[i] += delta[k];
                }
                candidate[2] = normalize_angle(candidate[2]);
                let new_cost = problem.cost(&candidate);

                match options.algorithm {
                    Algorithm::LevenbergMarquardt => {
                        if new_cost.is_finite() && new_cost < lin.cost {
                            let prev = lin.cost;
                            params = candidate;
                            lin = problem.linearize(&params);
                            best = (lin.cost, params);
                            lambda *= options.lambda_accept_factor;
                            if (prev - lin.cost).abs() <= options.function_tolerance * lin.cost {
                                break 'outer Termination::Converged;
                            }
                            break;
                        }
                        rejected_steps += 1;
                        lambda *= options.lambda_reject_factor;
                        if lambda > options.max_lm_lambda {
                            break 'outer Termination::NumericalFailure;
                        }
                    }
                    Algorithm::GaussNewton => {
                        if !new_cost.is_finite() {
                            break 'outer Termination::NumericalFailure;
                        }
                        let prev = lin.cost;
                        params = candidate;
                        lin = problem.linearize(&params);
                        if lin.cost < best.0 {
                            best = (lin.cost, params);
                        }
                        if (prev - lin.cost).abs() <= options.function_tolerance * lin.cost {
                            break 'outer Termination::Converged;
                        }
                        break;
                    }
                }
            }
        }
    };

    if best.1 != params {
        params = best.1;
        lin = problem.linearize(&params);
    }
    let report = SolverReport {
        iterations,
        rejected_steps,
        initial_cost,
        final_cost: lin.cost,
        gradient_norm: inf_norm(&free, &lin.jtr),
        wall_time: start.elapsed(),
        termination,
    };
    Ok((Pose2D::from_array(params), report))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    struct Linear;
    impl CostFunction for Linear {
        fn num_residuals(&self) -> usize {
            1
        }
        fn evaluate_jet(&self, p: &[Jet3; 3], r: &mut [Jet3]) {
            r[0] = p[0] - 5.0;
        }
    }

    struct Rosenbrock;
    impl CostFunction for Rosenbrock {
        fn num_residuals(&self) -> usize {
            2
        }
        fn evaluate_jet(&self, p: &[Jet3; 3], r: &mut [Jet3]) {
            r[0] = (p[1] - p[0] * p[0]) * 10.0;
            r[1] = 1.0 - p[0];
        }
    }

    #[test]
    fn linear_problem_one_gauss_newton_step() {
        let mut problem = LeastSquaresProblem::new(Pose2D::identity());
        problem.add_residual_block(Linear).unwrap();
        problem.set_parameter_constant(1).unwrap();
        problem.set_parameter_constant(2).unwrap();
        let options = SolverOptions {
            algorithm: Algorithm::GaussNewton,
            ..SolverOptions::default()
        };
        let (pose, report) = solve_residual_blocks(&problem, &options).unwrap();
        assert_eq!(pose.x, 5.0);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(report.initial_cost, 25.0);
        assert_eq!(report.final_cost, 0.0);
    }

    #[test]
    fn rosenbrock_levenberg_marquardt() {
        let mut problem = LeastSquaresProblem::new(Pose2D::new(-1.2, 1.0, 0.0));
        problem.add_residual_block(Rosenbrock).unwrap();
        problem.set_parameter_constant(2).unwrap();
        let options = SolverOptions {
            max_iterations: 200,
            ..SolverOptions::default()
        };
        let (pose, report) = solve_residual_blocks(&problem, &options).unwrap();
        assert!(report.final_cost < 1e-10, "{report:?}");
        assert_abs_diff_eq!(pose.x, 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(pose.y, 1.0, epsilon = 1e-5);
        assert!(report.iterations <= 200);
    }

    #[test]
    fn rejects_empty_problem_and_bad_options() {
        let problem = LeastSquaresProblem::new(Pose2D::identity());
        assert!(solve_residual_blocks(&problem, &SolverOptions::default()).is_err());

        let mut problem = LeastSquaresProblem::new(Pose2D::identity());
        problem.add_residual_block(Linear).unwrap();
        let bad = SolverOptions {
            function_tolerance: 0.0,
            ..SolverOptions::default()
        };
        assert!(solve_residual_blocks(&problem, &bad).is_err());
        let bad = SolverOptions {
            max_iterations: 0,
            ..SolverOptions::default()
        };
        assert!(solve_residual_blocks(&problem, &bad).is_err());
    }

    #[test]
    fn respects_max_iterations() {
        let mut problem = LeastSquaresProblem::new(Pose2D::new(-1.2, 1.0, 0.0));
        problem.add_residual_block(Rosenbrock).unwrap();
        problem.set_parameter_constant(2).unwrap();
        let options = SolverOptions {
            max_iterations: 3,
            ..SolverOptions::default()
        };
        let (_, report) = solve_residual_blocks(&problem, &options).unwrap();
        assert_eq!(report.iterations, 3);
        assert_eq!(report.termination, Termination::MaxIterations);
        assert!(report.final_cost <= report.initial_cost);
    }

    #[test]
    fn singular_gauss_newton_is_numerical_failure() {
        // theta never enters the residual, so J^T J is singular
        let mut problem = LeastSquaresProblem::new(Pose2D::identity());
        problem.add_residual_block(Linear).unwrap();
        let options = SolverOptions {
            algorithm: Algorithm::GaussNewton,
            ..SolverOptions::default()
        };
        let (pose, report) = solve_residual_blocks(&problem, &options).unwrap();
        assert_eq!(report.termination, Termination::NumericalFailure);
        assert_eq!(pose, Pose2D::identity());

        // LM's diagonal floor keeps the same system solvable
        let (pose, report) = solve_residual_blocks(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert_abs_diff_eq!(pose.x, 5.0, epsilon = 1e-6);
    }
}
