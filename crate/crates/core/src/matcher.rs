//! Scan-to-map matching: builds the three constraints and hands them to the
//! selected backend.
//!
//! The rotation prior targets the heading of the initial estimate; the
//! translation prior targets `target_translation`.

use crate::costs::{cost_gradient, total_cost, ResidualSpec, Weights};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud2D, Pose2D};
use crate::graph::{graph_optimize, EdgeKind, Graph, GraphEdge, PoseVertex};
use crate::grid::ProbabilityGrid;
use crate::residual::{problem_from_specs, solve_residual_blocks};
use crate::solver::{Backend, SolverOptions, SolverReport};

/// Smallest grid side (in cells) the bicubic lookup is defined for.
pub const MIN_GRID_CELLS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct MatchRequest<'a> {
    pub target_translation: [f64; 2],
    pub initial_pose: Pose2D,
    pub cloud: &'a PointCloud2D,
    pub grid: &'a ProbabilityGrid,
    pub backend: Backend,
    pub weights: Weights,
    pub options: SolverOptions,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    pub pose_estimate: Pose2D,
    pub report: SolverReport,
}

impl<'a> MatchRequest<'a> {
    /// Request with default weights and the backend's default solver schedule.
    pub fn new(
        target_translation: [f64; 2],
        initial_pose: Pose2D,
        cloud: &'a PointCloud2D,
        grid: &'a ProbabilityGrid,
        backend: Backend,
    ) -> Self {
        MatchRequest {
            target_translation,
            initial_pose,
            cloud,
            grid,
            backend,
            weights: Weights::default(),
            options: SolverOptions::for_backend(backend),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cloud.is_empty() {
            return Err(Error::argument("cannot match an empty point cloud"));
        }
        self.weights.validate()?;
        if self.grid.width() < MIN_GRID_CELLS || self.grid.height() < MIN_GRID_CELLS {
            return Err(Error::argument(format!(
                "grid of {}x{} cells is too small to match against",
                self.grid.width(),
                self.grid.height()
            )));
        }
        if !self.initial_pose.is_finite() || !self.target_translation.iter().all(|t| t.is_finite())
        {
            return Err(Error::argument("initial pose and target must be finite"));
        }
        Ok(())
    }

    /// The occupied-space, translation and rotation constraints of this match.
    pub fn residual_specs(&self) -> Result<[ResidualSpec<'a>; 3]> {
        Ok([
            ResidualSpec::occupied_space(self.cloud, self.grid, self.weights.occupied_space)?,
            ResidualSpec::translation_delta(self.target_translation, self.weights.translation)?,
            ResidualSpec::rotation_delta(self.initial_pose.theta, self.weights.rotation)?,
        ])
    }

    /// Total cost `sum r_i^2` of this match at `pose`.
    pub fn cost_at(&self, pose: &Pose2D) -> Result<f64> {
        Ok(total_cost(&self.residual_specs()?, &pose.to_array()))
    }

    /// Gradient of [`Self::cost_at`] with respect to `(x, y, theta)`.
    pub fn gradient_at(&self, pose: &Pose2D) -> Result<[f64; 3]> {
        Ok(cost_gradient(&self.residual_specs()?, &pose.to_array()))
    }
}

fn match_residual(req: &MatchRequest<'_>) -> Result<MatchResult> {
    let problem = problem_from_specs(req.initial_pose, &req.residual_specs()?)?;
    let (pose_estimate, report) = solve_residual_blocks(&problem, &req.options)?;
    Ok(MatchResult {
        pose_estimate,
        report,
    })
}

fn match_graph(req: &MatchRequest<'_>) -> Result<MatchResult> {
    const POSE: usize = 0;
    let mut graph = Graph::new();
    graph.add_vertex(PoseVertex::new(POSE, req.initial_pose))?;
    graph.add_edge(GraphEdge::unary(
        EdgeKind::OccupiedSpace {
            cloud: req.cloud,
            grid: req.grid,
        },
        POSE,
        req.weights.occupied_space,
    ))?;
    graph.add_edge(GraphEdge::unary(
        EdgeKind::TranslationDelta {
            target: req.target_translation,
        },
        POSE,
        req.weights.translation,
    ))?;
    graph.add_edge(GraphEdge::unary(
        EdgeKind::RotationDelta {
            target: req.initial_pose.theta,
        },
        POSE,
        req.weights.rotation,
    ))?;
    let report = graph_optimize(&mut graph, &req.options)?;
    let pose_estimate = graph
        .vertex(POSE)
        .map(|v| v.estimate)
        .expect("pose vertex was inserted above");
    Ok(MatchResult {
        pose_estimate,
        report,
    })
}

/// Refines `req.initial_pose` against the grid.
pub fn match_scan(req: &MatchRequest<'_>) -> Result<MatchResult> {
    req.validate()?;
    match req.backend {
        Backend::Residual => match_residual(req),
        Backend::Graph => match_graph(req),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SplatKernel;
    use crate::solver::Termination;
    use std::f64::consts::PI;

    fn setup() -> (PointCloud2D, ProbabilityGrid, Pose2D) {
        let truth = Pose2D::new(0.3, -0.2, 0.25);
        let res = 0.035;
        // world points on cell centers, so the truth is an exact stationary point
        let world = PointCloud2D::from_xy(&[
            [1.2, 0.4],
            [-0.7, 1.5],
            [0.3, -1.8],
            [-1.6, -0.9],
            [1.9, 1.1],
        ])
        .unwrap();
        let world = PointCloud2D::from_xy(
            &world
                .iter()
                .map(|p| [(p.x / res).round() * res, (p.y / res).round() * res])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let grid =
            ProbabilityGrid::from_pointcloud(&world, res, 10, &SplatKernel::default()).unwrap();
        (world.transformed(&truth.inverse()), grid, truth)
    }

    #[test]
    fn truth_is_stationary() {
        let (cloud, grid, truth) = setup();
        for backend in Backend::ALL {
            let req = MatchRequest::new(truth.translation(), truth, &cloud, &grid, backend);
            let res = match_scan(&req).unwrap();
            let g = req.gradient_at(&res.pose_estimate).unwrap();
            assert!(g.iter().all(|d| d.abs() < 1e-6), "{backend}: {g:?}");
            assert!(res.pose_estimate.translation_distance(&truth) < 1e-3);
            assert!(res.pose_estimate.rotation_distance(&truth) < 1e-3);
        }
    }

    #[test]
    fn both_backends_recover_a_small_offset() {
        let (cloud, grid, truth) = setup();
        let initial = Pose2D::new(truth.x + 0.04, truth.y - 0.03, truth.theta + 0.01);
        let mut costs = Vec::new();
        for backend in Backend::ALL {
            let req = MatchRequest::new(truth.translation(), initial, &cloud, &grid, backend);
            let res = match_scan(&req).unwrap();
            assert_eq!(res.report.termination, Termination::Converged, "{backend}");
            assert!(res.pose_estimate.translation_distance(&truth) < 0.02);
            assert!(res.pose_estimate.rotation_distance(&truth) < 0.01);
            assert!(res.report.final_cost <= res.report.initial_cost);
            assert!((-PI..PI).contains(&res.pose_estimate.theta));
            costs.push(res.report.final_cost);
        }
        assert!(
            (costs[0] - costs[1]).abs() <= 1e-6 * costs[0].max(costs[1]),
            "{costs:?}"
        );
    }

    #[test]
    fn rejects_bad_requests() {
        let (cloud, grid, truth) = setup();
        let empty = PointCloud2D::from_xy(&[]).unwrap();
        let req = MatchRequest::new([0.0, 0.0], truth, &empty, &grid, Backend::Residual);
        assert!(matches!(match_scan(&req), Err(Error::Argument(_))));

        let tiny = ProbabilityGrid::new(3, 8, 0.1, [0.0, 0.0], 0.5).unwrap();
        let req = MatchRequest::new([0.0, 0.0], truth, &cloud, &tiny, Backend::Graph);
        assert!(matches!(match_scan(&req), Err(Error::Argument(_))));

        let mut req = MatchRequest::new([0.0, 0.0], truth, &cloud, &grid, Backend::Graph);
        req.weights.translation = -1.0;
        assert!(match_scan(&req).is_err());
    }

    #[test]
    fn does_not_mutate_inputs() {
        let (cloud, grid, truth) = setup();
        let (c0, g0) = (cloud.clone(), grid.clone());
        for backend in Backend::ALL {
            let req = MatchRequest::new(truth.translation(), truth, &cloud, &grid, backend);
            match_scan(&req).unwrap();
        }
        assert_eq!(cloud, c0);
        assert_eq!(grid, g0);
    }
}
