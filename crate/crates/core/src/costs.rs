//! The three scan-matching constraints shared by both solver backends.
//!
//! Every residual is written once, generic over [`Real`], so the same code
//! yields plain costs (`f64`) and exact Jacobians ([`Jet3`](crate::Jet3)).

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle_real, transform_point, PointCloud2D};
use crate::grid::ProbabilityGrid;

/// Relative weights of the three constraints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub occupied_space: f64,
    pub translation: f64,
    pub rotation: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            occupied_space: 10.0,
            translation: 10.0,
            rotation: 40.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("occupied_space", self.occupied_space),
            ("translation", self.translation),
            ("rotation", self.rotation),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::argument(format!(
                    "{name} weight must be >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Writes `(weight / sqrt(n)) * (1 - M(T(p_i)))` for every point into `out`.
///
/// `out` must hold exactly `cloud.len()` entries.
pub fn occupied_space_residuals_into<T: Real>(
    pose: &[T; 3],
    cloud: &PointCloud2D,
    grid: &ProbabilityGrid,
    weight: f64,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), cloud.len());
    let scale = weight / (cloud.len() as f64).sqrt();
    for (r, p) in out.iter_mut().zip(cloud.iter()) {
        let [wx, wy] = transform_point(pose, p);
        let m = grid.interpolate(wx, wy);
        *r = (T::constant(1.0) - m) * scale;
    }
}

pub fn occupied_space_residuals<T: Real>(
    pose: &[T; 3],
    cloud: &PointCloud2D,
    grid: &ProbabilityGrid,
    weight: f64,
) -> Result<Vec<T>> {
    if cloud.is_empty() {
        return Err(Error::argument(
            "occupied-space residual needs a non-empty cloud",
        ));
    }
    let mut out = vec![T::constant(0.0); cloud.len()];
    occupied_space_residuals_into(pose, cloud, grid, weight, &mut out);
    Ok(out)
}

pub fn translation_delta_residual<T: Real>(pose: &[T; 3], target: [f64; 2], weight: f64) -> [T; 2] {
    [
        (pose[0] - target[0]) * weight,
        (pose[1] - target[1]) * weight,
    ]
}

/// Shortest-arc heading deviation, scaled by `weight`.
pub fn rotation_delta_residual<T: Real>(pose: &[T; 3], target: f64, weight: f64) -> [T; 1] {
    [normalize_angle_real(pose[2] - target) * weight]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    OccupiedSpace,
    TranslationDelta,
    RotationDelta,
}

impl ResidualKind {
    pub fn name(&self) -> &'static str {
        match self {
            ResidualKind::OccupiedSpace => "occupied_space",
            ResidualKind::TranslationDelta => "translation_delta",
            ResidualKind::RotationDelta => "rotation_delta",
        }
    }
}

/// One scan-matching constraint together with the data it needs.
#[derive(Clone, Copy, Debug)]
pub enum ResidualSpec<'a> {
    OccupiedSpace {
        cloud: &'a PointCloud2D,
        grid: &'a ProbabilityGrid,
        weight: f64,
    },
    TranslationDelta {
        target: [f64; 2],
        weight: f64,
    },
    RotationDelta {
        target: f64,
        weight: f64,
    },
}

fn check_weight(weight: f64) -> Result<()> {
    if weight >= 0.0 && weight.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!(
            "weight must be >= 0, got {weight}"
        )))
    }
}

impl<'a> ResidualSpec<'a> {
    pub fn occupied_space(
        cloud: &'a PointCloud2D,
        grid: &'a ProbabilityGrid,
        weight: f64,
    ) -> Result<Self> {
        check_weight(weight)?;
        if cloud.is_empty() {
            return Err(Error::argument(
                "occupied-space residual needs a non-empty cloud",
            ));
        }
        Ok(ResidualSpec::OccupiedSpace {
            cloud,
            grid,
            weight,
        })
    }

    pub fn translation_delta(target: [f64; 2], weight: f64) -> Result<Self> {
        check_weight(weight)?;
        Ok(ResidualSpec::TranslationDelta { target, weight })
    }

    pub fn rotation_delta(target: f64, weight: f64) -> Result<Self> {
        check_weight(weight)?;
        Ok(ResidualSpec::RotationDelta { target, weight })
    }

    pub fn kind(&self) -> ResidualKind {
        match self {
            ResidualSpec::OccupiedSpace { .. } => ResidualKind::OccupiedSpace,
            ResidualSpec::TranslationDelta { .. } => ResidualKind::TranslationDelta,
            ResidualSpec::RotationDelta { .. } => ResidualKind::RotationDelta,
        }
    }

    pub fn weight(&self) -> f64 {
        match *self {
            ResidualSpec::OccupiedSpace { weight, .. }
            | ResidualSpec::TranslationDelta { weight, .. }
            | ResidualSpec::RotationDelta { weight, .. } => weight,
        }
    }

    pub fn residual_count(&self) -> usize {
        match self {
            ResidualSpec::OccupiedSpace { cloud, .. } => cloud.len(),
            ResidualSpec::TranslationDelta { .. } => 2,
            ResidualSpec::RotationDelta { .. } => 1,
        }
    }

    /// Evaluates the residuals at `pose`; `out.len()` must equal [`Self::residual_count`].
    pub fn evaluate<T: Real>(&self, pose: &[T; 3], out: &mut [T]) {
        match *self {
            ResidualSpec::OccupiedSpace {
                cloud,
                grid,
                weight,
            } => occupied_space_residuals_into(pose, cloud, grid, weight, out),
            ResidualSpec::TranslationDelta { target, weight } => {
                out.copy_from_slice(&translation_delta_residual(pose, target, weight))
            }
            ResidualSpec::RotationDelta { target, weight } => {
                out.copy_from_slice(&rotation_delta_residual(pose, target, weight))
            }
        }
    }
}

/// Sum of squared residuals over all blocks at `pose`.
pub fn total_cost(blocks: &[ResidualSpec<'_>], pose: &[f64; 3]) -> f64 {
    let mut buf = Vec::new();
    blocks
        .iter()
        .map(|b| {
            buf.resize(b.residual_count(), 0.0);
            b.evaluate(pose, &mut buf);
            buf.iter().map(|r| r * r).sum::<f64>()
        })
        .sum()
}

/// Gradient of [`total_cost`] (that is `2 J^T r`) at `pose`.
pub fn cost_gradient(blocks: &[ResidualSpec<'_>], pose: &[f64; 3]) -> [f64; 3] {
    use crate::autodiff::Jet3;
    let seeded = Jet3::seed(*pose);
    let mut g = [0.0; 3];
    let mut buf = Vec::new();
    for b in blocks {
        buf.resize(b.residual_count(), Jet3::constant(0.0));
        b.evaluate(&seeded, &mut buf);
        for r in &buf {
            for (gk, dk) in g.iter_mut().zip(r.v.iter()) {
                *gk += 2.0 * r.a * dk;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::autodiff::Jet3;

    fn grid_with(p: f64) -> ProbabilityGrid {
        ProbabilityGrid::new(10, 10, 0.1, [0.0, 0.0], p).unwrap()
    }

    #[test]
    fn occupied_space_examples() {
        let cloud = PointCloud2D::from_xy(&[[0.5, 0.5]]).unwrap();
        let full = grid_with(1.0);
        let r = occupied_space_residuals(&[0.0, 0.0, 0.0], &cloud, &full, 3.0).unwrap();
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);

        let empty_map = grid_with(0.0);
        let r = occupied_space_residuals(&[0.0, 0.0, 0.0], &cloud, &empty_map, 3.0).unwrap();
        assert_abs_diff_eq!(r[0], 3.0, epsilon = 1e-15);

        let none = PointCloud2D::from_xy(&[]).unwrap();
        assert!(occupied_space_residuals(&[0.0; 3], &none, &full, 1.0).is_err());
        assert!(ResidualSpec::occupied_space(&none, &full, 1.0).is_err());
    }

    #[test]
    fn translation_examples() {
        assert_eq!(
            translation_delta_residual(&[3.0, 4.0, 1.0], [3.0, 4.0], 10.0),
            [0.0, 0.0]
        );
        assert_eq!(
            translation_delta_residual(&[1.0, 2.0, 0.3], [0.0, 0.0], 7.0),
            [7.0, 14.0]
        );
        assert_eq!(
            translation_delta_residual(&[1.0, -9.0, 0.3], [0.0, 0.0], 0.0),
            [0.0, 0.0]
        );
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_delta_residual(&[0.0, 0.0, 0.4], 0.4, 40.0), [0.0]);
        let r = rotation_delta_residual(&[0.0, 0.0, PI - 0.1], -PI + 0.1, 1.0);
        assert_abs_diff_eq!(r[0], -0.2, epsilon = 1e-12);
        let r = rotation_delta_residual(&[0.0, 0.0, 0.7], 0.2, 2.0);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_residual_jacobians() {
        let s = Jet3::seed([0.2, -0.1, 1.0]);
        let t = translation_delta_residual(&s, [0.2, -0.1], 4.0);
        assert_eq!(t[0].v, [4.0, 0.0, 0.0]);
        assert_eq!(t[1].v, [0.0, 4.0, 0.0]);
        let r = rotation_delta_residual(&s, 3.0, 5.0);
        assert_eq!(r[0].v, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(ResidualSpec::translation_delta([0.0, 0.0], -1.0).is_err());
        assert!(ResidualSpec::rotation_delta(0.0, f64::NAN).is_err());
        assert!(Weights {
            rotation: -1.0,
            ..Weights::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn residual_counts() {
        let g = grid_with(0.5);
        let cloud = PointCloud2D::from_xy(&[[0.1, 0.1], [0.2, 0.3], [0.4, 0.4]]).unwrap();
        let blocks = [
            ResidualSpec::occupied_space(&cloud, &g, 1.0).unwrap(),
            ResidualSpec::translation_delta([0.0, 0.0], 1.0).unwrap(),
            ResidualSpec::rotation_delta(0.0, 1.0).unwrap(),
        ];
        let counts: Vec<_> = blocks.iter().map(|b| b.residual_count()).collect();
        assert_eq!(counts, vec![3, 2, 1]);
        assert_eq!(blocks[0].kind(), ResidualKind::OccupiedSpace);
    }
}
