//! Randomized initial-pose benchmark.
//!
//! Each trial samples a ground-truth pose and a small body-frame cloud, paints
//! a synthetic probability grid around the truth-transformed points, perturbs
//! the truth to get the initial estimate, and matches with every selected
//! backend. Trial `i` under seed `s` draws from [`rng::stream(s, i)`](crate::rng::stream)
//! in this order: truth `x, y, theta`; each point `x, y`; perturbation radius,
//! perturbation direction, heading perturbation.

use std::f64::consts::FRAC_PI_4;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use nalgebra::Point2;

use crate::costs::Weights;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, PointCloud2D, Pose2D};
use crate::grid::{ProbabilityGrid, SplatKernel};
use crate::matcher::{match_scan, MatchRequest};
use crate::rng;
use crate::solver::{Backend, SolverOptions, Termination};

/// Exact CSV header written by [`run_benchmark`].
pub const CSV_HEADER: &str =
    "trial,backend,init_x,init_y,init_theta,gt_x,gt_y,gt_theta,est_x,est_y,est_theta,final_cost,iterations,time_us";

/// Relative final-cost gap above which two backends count as disagreeing.
pub const COST_AGREEMENT_RTOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub seed: u64,
    pub trials: usize,
    pub points_per_cloud: usize,
    /// Initial translation error is drawn uniformly from a disk of this radius.
    pub max_translation_perturbation: f64,
    /// Initial heading error is drawn uniformly from `[-max, max]`.
    pub max_rotation_perturbation: f64,
    pub backends: Vec<Backend>,
    /// Truth translation is drawn from `[-t, t]^2`.
    pub truth_translation_range: f64,
    /// Truth heading is drawn from `[-r, r]`.
    pub truth_rotation_range: f64,
    /// Body-frame points are drawn from `[-p, p]^2`.
    pub point_range: f64,
    pub grid_resolution: f64,
    pub grid_padding_cells: usize,
    pub kernel: SplatKernel,
    pub weights: Weights,
    pub max_iterations: usize,
    /// Relative cost-reduction tolerance passed to both backends.
    pub function_tolerance: f64,
    pub rmse_with_theta: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 42,
            trials: 20,
            points_per_cloud: 5,
            max_translation_perturbation: 0.3,
            max_rotation_perturbation: 0.15,
            backends: Backend::ALL.to_vec(),
            truth_translation_range: 1.0,
            truth_rotation_range: FRAC_PI_4,
            point_range: 2.0,
            grid_resolution: 0.035,
            grid_padding_cells: 10,
            kernel: SplatKernel::default(),
            weights: Weights::default(),
            max_iterations: 100,
            function_tolerance: 1e-10,
            rmse_with_theta: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::argument("trials must be >= 1"));
        }
        if self.points_per_cloud < 1 {
            return Err(Error::argument("points_per_cloud must be >= 1"));
        }
        if self.backends.is_empty() {
            return Err(Error::argument("no backend selected"));
        }
        if !(self.max_translation_perturbation >= 0.0 && self.max_rotation_perturbation >= 0.0) {
            return Err(Error::argument("perturbation bounds must be >= 0"));
        }
        if !(self.grid_resolution > 0.0 && self.grid_resolution.is_finite()) {
            return Err(Error::argument("grid resolution must be > 0"));
        }
        self.weights.validate()?;
        self.options_for(Backend::Residual).validate()
    }

    /// The backend's default schedule with this config's tolerance and cap.
    pub fn options_for(&self, backend: Backend) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            function_tolerance: self.function_tolerance,
            ..SolverOptions::for_backend(backend)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub grid: ProbabilityGrid,
    pub cloud: PointCloud2D,
    pub truth: Pose2D,
    pub initial: Pose2D,
}

impl Trial {
    /// Match request for this trial; the translation target is the truth.
    pub fn request(&self, backend: Backend, config: &BenchConfig) -> MatchRequest<'_> {
        MatchRequest {
            weights: config.weights,
            options: config.options_for(backend),
            ..MatchRequest::new(
                self.truth.translation(),
                self.initial,
                &self.cloud,
                &self.grid,
                backend,
            )
        }
    }
}

/// Deterministically builds trial `index` under `seed`.
pub fn generate_trial(seed: u64, index: usize, config: &BenchConfig) -> Result<Trial> {
    let mut r = rng::stream(seed, index as u64);
    let t = config.truth_translation_range;
    let truth = Pose2D::new(
        rng::uniform(&mut r, -t, t),
        rng::uniform(&mut r, -t, t),
        rng::uniform(
            &mut r,
            -config.truth_rotation_range,
            config.truth_rotation_range,
        ),
    );
    let p = config.point_range;
    let points = (0..config.points_per_cloud)
        .map(|_| Point2::new(rng::uniform(&mut r, -p, p), rng::uniform(&mut r, -p, p)))
        .collect();
    // Snapping the world points to the cell lattice makes the truth an exact
    // stationary point of the interpolated map.
    let res = config.grid_resolution;
    let world = PointCloud2D::new(points)?.transformed(&truth);
    let snapped = PointCloud2D::new(
        world
            .iter()
            .map(|w| Point2::new((w.x / res).round() * res, (w.y / res).round() * res))
            .collect(),
    )?;
    let cloud = snapped.transformed(&truth.inverse());
    let grid = ProbabilityGrid::from_pointcloud(
        &snapped,
        config.grid_resolution,
        config.grid_padding_cells,
        &config.kernel,
    )?;
    let [dx, dy] = rng::in_disk(&mut r, config.max_translation_perturbation);
    let rr = config.max_rotation_perturbation;
    let dtheta = rng::uniform(&mut r, -rr, rr);
    let initial = Pose2D::new(truth.x + dx, truth.y + dy, truth.theta + dtheta);
    Ok(Trial {
        index,
        grid,
        cloud,
        truth,
        initial,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub backend: Backend,
    pub initial: Pose2D,
    pub truth: Pose2D,
    pub estimate: Pose2D,
    pub final_cost: f64,
    pub iterations: usize,
    pub time_us: f64,
    pub termination: Termination,
    /// Infinity norm of the total-cost gradient at `estimate`.
    pub gradient_norm: f64,
}

impl TrialRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.trial,
            self.backend,
            self.initial.x,
            self.initial.y,
            self.initial.theta,
            self.truth.x,
            self.truth.y,
            self.truth.theta,
            self.estimate.x,
            self.estimate.y,
            self.estimate.theta,
            self.final_cost,
            self.iterations,
            self.time_us,
        )
    }
}

/// Trial where the two backends ended at different costs.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub trial: usize,
    pub residual_cost: f64,
    pub graph_cost: f64,
    pub residual_gradient_norm: f64,
    pub graph_gradient_norm: f64,
}

pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Translation-only RMSE: `sqrt(mean ||(dx, dy)||^2)`.
pub fn rmse(estimates: &[Pose2D], truths: &[Pose2D]) -> Result<f64> {
    rmse_impl(estimates, truths, false)
}

/// RMSE that also adds the squared wrapped heading error of every trial.
pub fn rmse_with_theta(estimates: &[Pose2D], truths: &[Pose2D]) -> Result<f64> {
    rmse_impl(estimates, truths, true)
}

fn rmse_impl(estimates: &[Pose2D], truths: &[Pose2D], with_theta: bool) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::argument(format!(
            "rmse needs equal lengths, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::argument("rmse needs at least one pose"));
    }
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            let d2 = (e.x - t.x).powi(2) + (e.y - t.y).powi(2);
            if with_theta {
                d2 + normalize_angle(e.theta - t.theta).powi(2)
            } else {
                d2
            }
        })
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendSummary {
    pub backend: Backend,
    pub rmse: f64,
    pub mean_iterations: f64,
    pub mean_time_us: f64,
    pub converged: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub records: Vec<TrialRecord>,
    pub backends: Vec<BackendSummary>,
    pub divergences: Vec<Divergence>,
    pub rmse_with_theta: bool,
}

impl BenchSummary {
    pub fn backend(&self, backend: Backend) -> Option<&BackendSummary> {
        self.backends.iter().find(|b| b.backend == backend)
    }
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = if self.rmse_with_theta {
            "RMSE(x,y,theta)"
        } else {
            "RMSE(x,y) [m]"
        };
        writeln!(
            f,
            "{:<10} {:>16} {:>12} {:>14} {:>10}",
            "backend", label, "mean iters", "mean time [ms]", "converged"
        )?;
        for b in &self.backends {
            writeln!(
                f,
                "{:<10} {:>16.5} {:>12.2} {:>14.4} {:>7}/{}",
                b.backend.name(),
                b.rmse,
                b.mean_iterations,
                b.mean_time_us / 1000.0,
                b.converged,
                b.runs
            )?;
        }
        if !self.divergences.is_empty() {
            writeln!(
                f,
                "{} trial(s) with differing final costs",
                self.divergences.len()
            )?;
        }
        Ok(())
    }
}

/// Runs every trial and backend in memory.
pub fn run_trials(config: &BenchConfig) -> Result<BenchSummary> {
    config.validate()?;
    let mut backends = config.backends.clone();
    backends.sort();
    backends.dedup();

    let mut records = Vec::with_capacity(config.trials * backends.len());
    let mut divergences = Vec::new();
    for index in 0..config.trials {
        let trial = generate_trial(config.seed, index, config)?;
        let mut per_backend = Vec::with_capacity(backends.len());
        for &backend in &backends {
            let req = trial.request(backend, config);
            let result = match_scan(&req)?;
            let gradient = req.gradient_at(&result.pose_estimate)?;
            let record = TrialRecord {
                trial: index,
                backend,
                initial: trial.initial,
                truth: trial.truth,
                estimate: result.pose_estimate,
                final_cost: result.report.final_cost,
                iterations: result.report.iterations,
                time_us: result.report.wall_time_us(),
                termination: result.report.termination,
                gradient_norm: gradient.iter().fold(0.0, |m, g| m.max(g.abs())),
            };
            per_backend.push(record);
        }
        if let (Some(r), Some(g)) = (
            per_backend.iter().find(|r| r.backend == Backend::Residual),
            per_backend.iter().find(|r| r.backend == Backend::Graph),
        ) {
            if relative_difference(r.final_cost, g.final_cost) > COST_AGREEMENT_RTOL {
                log::warn!(
                    "trial {index}: final costs differ (residual {} vs graph {}); \
                     gradient inf-norms {:.3e} / {:.3e}",
                    r.final_cost,
                    g.final_cost,
                    r.gradient_norm,
                    g.gradient_norm
                );
                divergences.push(Divergence {
                    trial: index,
                    residual_cost: r.final_cost,
                    graph_cost: g.final_cost,
                    residual_gradient_norm: r.gradient_norm,
                    graph_gradient_norm: g.gradient_norm,
                });
            }
        }
        records.extend(per_backend);
    }

    let summaries = backends
        .iter()
        .map(|&backend| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.backend == backend).collect();
            let est: Vec<Pose2D> = rows.iter().map(|r| r.estimate).collect();
            let truth: Vec<Pose2D> = rows.iter().map(|r| r.truth).collect();
            let n = rows.len() as f64;
            Ok(BackendSummary {
                backend,
                rmse: rmse_impl(&est, &truth, config.rmse_with_theta)?,
                mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
                mean_time_us: rows.iter().map(|r| r.time_us).sum::<f64>() / n,
                converged: rows
                    .iter()
                    .filter(|r| r.termination == Termination::Converged)
                    .count(),
                runs: rows.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BenchSummary {
        records,
        backends: summaries,
        divergences,
        rmse_with_theta: config.rmse_with_theta,
    })
}

pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Plain-text table of initial and per-backend estimated poses, one trial per line.
pub fn pose_table(records: &[TrialRecord]) -> String {
    let mut out = String::from(
        "# trial init_x init_y init_theta residual_x residual_y residual_theta graph_x graph_y graph_theta\n",
    );
    let trials = records.iter().map(|r| r.trial).max().map_or(0, |m| m + 1);
    for t in 0..trials {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.trial == t).collect();
        let Some(first) = rows.first() else { continue };
        let pose_of = |b: Backend| {
            rows.iter()
                .find(|r| r.backend == b)
                .map(|r| r.estimate.to_array())
                .unwrap_or([f64::NAN; 3])
        };
        let i = first.initial;
        let r = pose_of(Backend::Residual);
        let g = pose_of(Backend::Graph);
        let _ = writeln!(
            out,
            "{t} {} {} {} {} {} {} {} {} {}",
            i.x, i.y, i.theta, r[0], r[1], r[2], g[0], g[1], g[2]
        );
    }
    out
}

/// Runs the benchmark, writes one CSV row per (trial, backend) to `out`
/// and optionally a pose table to `dump_poses`.
pub fn run_benchmark(
    config: &BenchConfig,
    out: &Path,
    dump_poses: Option<&Path>,
) -> Result<BenchSummary> {
    let summary = run_trials(config)?;
    fs::write(out, records_to_csv(&summary.records)).map_err(|e| Error::io(out, e))?;
    if let Some(path) = dump_poses {
        fs::write(path, pose_table(&summary.records)).map_err(|e| Error::io(path, e))?;
    }
    Ok(summary)
}
