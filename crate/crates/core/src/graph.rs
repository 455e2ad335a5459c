//! Vertex/edge backend.
//!
//! Poses live in [`PoseVertex`]es that are updated through [`PoseVertex::oplus`];
//! constraints are [`GraphEdge`]s producing an error vector and one Jacobian
//! block per attached vertex. [`graph_optimize`] stacks the blocks of all free
//! vertices and runs damped Gauss-Newton on the joint system.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{Jet3, Real};
use crate::costs::{
    occupied_space_residuals_into, rotation_delta_residual, translation_delta_residual,
    ResidualKind,
};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, normalize_angle_real, PointCloud2D, Pose2D};
use crate::grid::ProbabilityGrid;
use crate::linalg::cholesky_solve;
use crate::solver::{Algorithm, SolverOptions, SolverReport, Termination};

pub type VertexId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseVertex {
    pub id: VertexId,
    pub estimate: Pose2D,
    pub fixed: bool,
}

impl PoseVertex {
    pub fn new(id: VertexId, estimate: Pose2D) -> Self {
        PoseVertex {
            id,
            estimate,
            fixed: false,
        }
    }

    pub fn new_fixed(id: VertexId, estimate: Pose2D) -> Self {
        PoseVertex {
            id,
            estimate,
            fixed: true,
        }
    }

    /// Additive update `(x + d0, y + d1, wrap(theta + d2))`.
    pub fn oplus(&self, delta: &[f64; 3]) -> Result<PoseVertex> {
        if self.fixed {
            return Err(Error::Contract(format!("vertex {} is fixed", self.id)));
        }
        let e = self.estimate;
        Ok(PoseVertex {
            estimate: Pose2D {
                x: e.x + delta[0],
                y: e.y + delta[1],
                theta: normalize_angle(e.theta + delta[2]),
            },
            ..*self
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EdgeKind<'a> {
    OccupiedSpace {
        cloud: &'a PointCloud2D,
        grid: &'a ProbabilityGrid,
    },
    TranslationDelta {
        target: [f64; 2],
    },
    RotationDelta {
        target: f64,
    },
    /// Relative pose measurement from `vertex_ids[0]` to `vertex_ids[1]`.
    Odometry {
        measurement: Pose2D,
    },
}

impl EdgeKind<'_> {
    pub fn arity(&self) -> usize {
        match self {
            EdgeKind::Odometry { .. } => 2,
            _ => 1,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EdgeKind::OccupiedSpace { cloud, .. } => cloud.len(),
            EdgeKind::TranslationDelta { .. } => 2,
            EdgeKind::RotationDelta { .. } => 1,
            EdgeKind::Odometry { .. } => 3,
        }
    }

    /// The scan-matching residual this edge mirrors; `None` for odometry.
    pub fn residual_kind(&self) -> Option<ResidualKind> {
        match self {
            EdgeKind::OccupiedSpace { .. } => Some(ResidualKind::OccupiedSpace),
            EdgeKind::TranslationDelta { .. } => Some(ResidualKind::TranslationDelta),
            EdgeKind::RotationDelta { .. } => Some(ResidualKind::RotationDelta),
            EdgeKind::Odometry { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphEdge<'a> {
    pub kind: EdgeKind<'a>,
    pub vertex_ids: Vec<VertexId>,
    pub information_weight: f64,
}

impl<'a> GraphEdge<'a> {
    pub fn unary(kind: EdgeKind<'a>, vertex: VertexId, information_weight: f64) -> Self {
        GraphEdge {
            kind,
            vertex_ids: vec![vertex],
            information_weight,
        }
    }

    pub fn odometry(
        from: VertexId,
        to: VertexId,
        measurement: Pose2D,
        information_weight: f64,
    ) -> Self {
        GraphEdge {
            kind: EdgeKind::Odometry { measurement },
            vertex_ids: vec![from, to],
            information_weight,
        }
    }

    /// Error of this edge given one pose per attached vertex.
    fn error<T: Real>(&self, poses: &[[T; 3]], out: &mut [T]) {
        let w = self.information_weight;
        match self.kind {
            EdgeKind::OccupiedSpace { cloud, grid } => {
                occupied_space_residuals_into(&poses[0], cloud, grid, w, out)
            }
            EdgeKind::TranslationDelta { target } => {
                out.copy_from_slice(&translation_delta_residual(&poses[0], target, w))
            }
            EdgeKind::RotationDelta { target } => {
                out.copy_from_slice(&rotation_delta_residual(&poses[0], target, w))
            }
            EdgeKind::Odometry { measurement } => {
                let [a, b] = [&poses[0], &poses[1]];
                let dx = b[0] - a[0];
                let dy = b[1] - a[1];
                let (s, c) = (a[2].sin(), a[2].cos());
                let local_x = c * dx + s * dy;
                let local_y = c * dy - s * dx;
                out[0] = (local_x - measurement.x) * w;
                out[1] = (local_y - measurement.y) * w;
                out[2] = normalize_angle_real(b[2] - a[2] - measurement.theta) * w;
            }
        }
    }
}

/// Error vector of an edge and one `dimension x 3` Jacobian block per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLinearization {
    pub error: Vec<f64>,
    pub jacobians: Vec<Vec<[f64; 3]>>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<'a> {
    vertices: BTreeMap<VertexId, PoseVertex>,
    edges: Vec<GraphEdge<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn add_vertex(&mut self, vertex: PoseVertex) -> Result<()> {
        if self.vertices.contains_key(&vertex.id) {
            return Err(Error::argument(format!(
                "duplicate vertex id {}",
                vertex.id
            )));
        }
        if !vertex.estimate.is_finite() {
            return Err(Error::argument(format!(
                "vertex {} has a non-finite estimate",
                vertex.id
            )));
        }
        self.vertices.insert(vertex.id, vertex);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: GraphEdge<'a>) -> Result<()> {
        if edge.vertex_ids.len() != edge.kind.arity() {
            return Err(Error::argument(format!(
                "edge expects {} vertices, got {}",
                edge.kind.arity(),
                edge.vertex_ids.len()
            )));
        }
        if let Some(id) = edge
            .vertex_ids
            .iter()
            .find(|id| !self.vertices.contains_key(id))
        {
            return Err(Error::argument(format!(
                "edge references unknown vertex {id}"
            )));
        }
        if !(edge.information_weight >= 0.0 && edge.information_weight.is_finite()) {
            return Err(Error::argument("edge information weight must be >= 0"));
        }
        if edge.kind.dimension() == 0 {
            return Err(Error::argument(
                "occupied-space edge needs a non-empty cloud",
            ));
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn vertex(&self, id: VertexId) -> Option<&PoseVertex> {
        self.vertices.get(&id)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &PoseVertex> {
        self.vertices.values()
    }

    pub fn edges(&self) -> &[GraphEdge<'a>] {
        &self.edges
    }

    fn poses_of(&self, edge: &GraphEdge<'_>) -> Vec<[f64; 3]> {
        edge.vertex_ids
            .iter()
            .map(|id| self.vertices[id].estimate.to_array())
            .collect()
    }

    /// Sum of squared errors over all edges.
    pub fn total_error(&self) -> f64 {
        let mut buf = Vec::new();
        self.edges
            .iter()
            .map(|e| {
                buf.resize(e.kind.dimension(), 0.0);
                e.error(&self.poses_of(e), &mut buf);
                buf.iter().map(|r| r * r).sum::<f64>()
            })
            .sum()
    }
}

/// Error and per-vertex Jacobians of `edge` at the current estimates.
pub fn edge_error_and_jacobian(
    edge: &GraphEdge<'_>,
    graph: &Graph<'_>,
) -> Result<EdgeLinearization> {
    if let Some(id) = edge
        .vertex_ids
        .iter()
        .find(|id| graph.vertex(**id).is_none())
    {
        return Err(Error::argument(format!(
            "edge references unknown vertex {id}"
        )));
    }
    if edge.vertex_ids.len() != edge.kind.arity() {
        return Err(Error::argument("edge arity does not match its vertex list"));
    }
    let poses = graph.poses_of(edge);
    let dim = edge.kind.dimension();
    let mut buf = vec![Jet3::default(); dim];
    let mut error = Vec::new();
    let mut jacobians = Vec::with_capacity(poses.len());
    // one seeding pass per vertex: that vertex's parameters vary, the rest are constants
    for seeded in 0..poses.len() {
        let jet_poses: Vec<[Jet3; 3]> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == seeded {
                    Jet3::seed(*p)
                } else {
                    p.map(Jet3::constant)
                }
            })
            .collect();
        edge.error(&jet_poses, &mut buf);
        if seeded == 0 {
            error = buf.iter().map(|e| e.a).collect();
        }
        jacobians.push(buf.iter().map(|e| e.v).collect());
    }
    Ok(EdgeLinearization { error, jacobians })
}

/// Runs the configured least-squares scheme over all free vertices, updating
/// their estimates in place.
///
/// Levenberg-Marquardt damps with `lambda * I`, where the initial `lambda` is
/// `initial_lm_lambda` times the largest diagonal entry of the first Hessian.
/// One iteration ends with an accepted step; rejected trial steps inside it
/// only raise the damping and are not counted separately.
pub fn graph_optimize(graph: &mut Graph<'_>, options: &SolverOptions) -> Result<SolverReport> {
    options.validate()?;
    let free: Vec<VertexId> = graph
        .vertices
        .values()
        .filter(|v| !v.fixed)
        .map(|v| v.id)
        .collect();
    if free.is_empty() {
        return Err(Error::argument("graph has no free vertices"));
    }
    if graph.edges.is_empty() {
        return Err(Error::argument("graph has no edges"));
    }
    let start = Instant::now();
    let column: BTreeMap<VertexId, usize> = free
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, 3 * k))
        .collect();
    let n = 3 * free.len();

    let build = |graph: &Graph<'_>| -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        let mut chi2 = 0.0;
        for edge in &graph.edges {
            let lin = edge_error_and_jacobian(edge, graph)?;
            chi2 += lin.error.iter().map(|e| e * e).sum::<f64>();
            for (a, id_a) in edge.vertex_ids.iter().enumerate() {
                let Some(&ca) = column.get(id_a) else {
                    continue;
                };
                let ja = &lin.jacobians[a];
                for (row, e) in ja.iter().zip(&lin.error) {
                    for i in 0..3 {
                        b[ca + i] += row[i] * e;
                    }
                }
                for (c, id_c) in edge.vertex_ids.iter().enumerate() {
                    let Some(&cc) = column.get(id_c) else {
                        continue;
                    };
                    let jc = &lin.jacobians[c];
                    for (ra, rc) in ja.iter().zip(jc) {
                        for i in 0..3 {
                            for j in 0..3 {
                                h[(ca + i, cc + j)] += ra[i] * rc[j];
                            }
                        }
                    }
                }
            }
        }
        Ok((chi2, h, b))
    };

    let (mut chi2, mut h, mut b) = build(graph)?;
    let initial_cost = chi2;
    // initial damping relative to the largest Hessian diagonal entry
    let max_diag = h.diagonal().amax();
    let mut lambda = if max_diag > 0.0 {
        options.initial_lm_lambda * max_diag
    } else {
        options.initial_lm_lambda
    };
    let mut iterations = 0;
    let mut rejected_steps = 0;
    let grad_norm = |b: &DVector<f64>| b.amax();

    let termination = if !chi2.is_finite() {
        Termination::NumericalFailure
    } else {
        'outer: loop {
            if grad_norm(&b) <= options.gradient_tolerance {
                break Termination::Converged;
            }
            if iterations >= options.max_iterations {
                break Termination::MaxIterations;
            }
            iterations += 1;

            // Retry with growing damping until the step lowers the error.
            loop {
                let mut system = h.clone();
                if options.algorithm == Algorithm::LevenbergMarquardt {
                    for i in 0..n {
                        system[(i, i)] += lambda;
                    }
                }
                let delta = match cholesky_solve(&system, &(-&b)) {
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

                let backup: Vec<PoseVertex> = free.iter().map(|id| graph.vertices[id]).collect();
                for (id, &c) in &column {
                    let d = [delta[c], delta[c + 1], delta[c + 2]];
                    let updated = graph.vertices[id].oplus(&d)?;
                    graph.vertices.insert(*id, updated);
                }
                let new_chi2 = graph.total_error();

                let accept = match options.algorithm {
                    Algorithm::LevenbergMarquardt => new_chi2.is_finite() && new_chi2 < chi2,
                    Algorithm::GaussNewton => new_chi2.is_finite(),
                };
                if accept {
                    let prev = chi2;
                    (chi2, h, b) = build(graph)?;
                    lambda *= options.lambda_accept_factor;
                    if (prev - chi2).abs() <= options.function_tolerance * chi2 {
                        break 'outer Termination::Converged;
                    }
                    break;
                }
                for v in backup {
                    graph.vertices.insert(v.id, v);
                }
                if options.algorithm == Algorithm::GaussNewton {
                    break 'outer Termination::NumericalFailure;
                }
                rejected_steps += 1;
                lambda *= options.lambda_reject_factor;
                if lambda > options.max_lm_lambda {
                    break 'outer Termination::NumericalFailure;
                }
            }
        }
    };

    Ok(SolverReport {
        iterations,
        rejected_steps,
        initial_cost,
        final_cost: chi2,
        gradient_norm: grad_norm(&b),
        wall_time: start.elapsed(),
        termination,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn oplus_examples() {
        let v = PoseVertex::new(0, Pose2D::new(1.0, 2.0, 3.0));
        let u = v.oplus(&[0.1, 0.0, -0.5]).unwrap();
        assert_abs_diff_eq!(u.estimate.x, 1.1, epsilon = 1e-15);
        assert_eq!(u.estimate.y, 2.0);
        assert_abs_diff_eq!(u.estimate.theta, 2.5, epsilon = 1e-15);

        assert_eq!(v.oplus(&[0.0; 3]).unwrap(), v);

        let w = PoseVertex::new(1, Pose2D::new(0.0, 0.0, 3.0))
            .oplus(&[0.0, 0.0, 0.3])
            .unwrap();
        assert_abs_diff_eq!(w.estimate.theta, 3.3 - TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(w.estimate.theta, -2.9832, epsilon = 1e-4);

        let fixed = PoseVertex::new_fixed(2, Pose2D::identity());
        assert!(matches!(
            fixed.oplus(&[1.0, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn linear_edge_jacobians() {
        let mut g = Graph::new();
        g.add_vertex(PoseVertex::new(0, Pose2D::new(2.0, 3.0, 0.1)))
            .unwrap();
        let t = GraphEdge::unary(EdgeKind::TranslationDelta { target: [2.0, 3.0] }, 0, 10.0);
        let lin = edge_error_and_jacobian(&t, &g).unwrap();
        assert_eq!(lin.error, vec![0.0, 0.0]);
        assert_eq!(lin.jacobians[0], vec![[10.0, 0.0, 0.0], [0.0, 10.0, 0.0]]);

        let r = GraphEdge::unary(EdgeKind::RotationDelta { target: -2.0 }, 0, 40.0);
        let lin = edge_error_and_jacobian(&r, &g).unwrap();
        assert_eq!(lin.jacobians[0], vec![[0.0, 0.0, 40.0]]);
    }

    #[test]
    fn separable_problem_converges() {
        let mut g = Graph::new();
        g.add_vertex(PoseVertex::new(7, Pose2D::new(-1.0, 0.5, 2.0)))
            .unwrap();
        g.add_edge(GraphEdge::unary(
            EdgeKind::TranslationDelta { target: [2.0, 3.0] },
            7,
            10.0,
        ))
        .unwrap();
        g.add_edge(GraphEdge::unary(
            EdgeKind::RotationDelta { target: 0.5 },
            7,
            40.0,
        ))
        .unwrap();
        let report = graph_optimize(&mut g, &SolverOptions::graph_defaults()).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        let est = g.vertex(7).unwrap().estimate;
        assert_abs_diff_eq!(est.x, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.y, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.theta, 0.5, epsilon = 1e-9);
        assert!(report.final_cost < 1e-12);
    }

    #[test]
    fn rejects_degenerate_graphs() {
        let mut g = Graph::new();
        g.add_vertex(PoseVertex::new_fixed(0, Pose2D::identity()))
            .unwrap();
        g.add_edge(GraphEdge::unary(
            EdgeKind::RotationDelta { target: 0.5 },
            0,
            1.0,
        ))
        .unwrap();
        assert!(matches!(
            graph_optimize(&mut g, &SolverOptions::graph_defaults()),
            Err(Error::Argument(_))
        ));

        let mut g = Graph::new();
        g.add_vertex(PoseVertex::new(0, Pose2D::identity()))
            .unwrap();
        assert!(graph_optimize(&mut g, &SolverOptions::graph_defaults()).is_err());
        assert!(g
            .add_vertex(PoseVertex::new(0, Pose2D::identity()))
            .is_err());
        assert!(g
            .add_edge(GraphEdge::unary(
                EdgeKind::RotationDelta { target: 0.0 },
                3,
                1.0
            ))
            .is_err());
        assert!(g
            .add_edge(GraphEdge {
                kind: EdgeKind::Odometry {
                    measurement: Pose2D::identity()
                },
                vertex_ids: vec![0],
                information_weight: 1.0,
            })
            .is_err());
    }

    #[test]
    fn odometry_chain_with_fixed_anchor() {
        let mut g = Graph::new();
        let anchor = Pose2D::new(0.5, -0.25, 0.3);
        g.add_vertex(PoseVertex::new_fixed(0, anchor)).unwrap();
        g.add_vertex(PoseVertex::new(1, Pose2D::new(0.0, 0.0, 0.0)))
            .unwrap();
        g.add_vertex(PoseVertex::new(2, Pose2D::new(0.0, 0.0, 0.0)))
            .unwrap();
        let step = Pose2D::new(1.0, 0.2, 0.4);
        g.add_edge(GraphEdge::odometry(0, 1, step, 1.0)).unwrap();
        g.add_edge(GraphEdge::odometry(1, 2, step, 1.0)).unwrap();
        let before = *g.vertex(0).unwrap();

        let report = graph_optimize(&mut g, &SolverOptions::graph_defaults()).unwrap();
        assert_eq!(report.termination, Termination::Converged, "{report:?}");
        assert_eq!(*g.vertex(0).unwrap(), before);
        let expected = anchor.compose(&step).compose(&step);
        let got = g.vertex(2).unwrap().estimate;
        assert_abs_diff_eq!(got.x, expected.x, epsilon = 1e-8);
        assert_abs_diff_eq!(got.y, expected.y, epsilon = 1e-8);
        assert_abs_diff_eq!(got.theta, expected.theta, epsilon = 1e-8);
    }

    #[test]
    fn odometry_jacobians_match_finite_differences() {
        let mut g = Graph::new();
        g.add_vertex(PoseVertex::new(0, Pose2D::new(0.3, -1.0, 0.7)))
            .unwrap();
        g.add_vertex(PoseVertex::new(1, Pose2D::new(1.1, 0.4, -0.2)))
            .unwrap();
        let edge = GraphEdge::odometry(0, 1, Pose2D::new(0.5, 0.5, 0.1), 2.0);
        let lin = edge_error_and_jacobian(&edge, &g).unwrap();
        let h = 1e-6;
        for v in 0..2 {
            for k in 0..3 {
                let mut poses = g.poses_of(&edge);
                let mut plus = [0.0; 3];
                let mut minus = [0.0; 3];
                poses[v][k] += h;
                edge.error(&poses, &mut plus);
                poses[v][k] -= 2.0 * h;
                edge.error(&poses, &mut minus);
                for row in 0..3 {
                    let fd = (plus[row] - minus[row]) / (2.0 * h);
                    assert!((lin.jacobians[v][row][k] - fd).abs() < 1e-6);
                }
            }
        }
    }
}
