//! Planar poses, point clouds and angle wrapping.

use std::f64::consts::{PI, TAU};

use nalgebra::Point2;

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Wraps an angle into the half-open interval `[-pi, pi)`.
///
/// Angles already inside the interval are returned untouched, which makes the
/// function exactly idempotent.
pub fn normalize_angle(t: f64) -> f64 {
    if (-PI..PI).contains(&t) {
        return t;
    }
    let r = (t + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to TAU for inputs just below a multiple of it
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

/// [`normalize_angle`] on a generic scalar; the wrap is a constant shift so
/// derivatives pass through unchanged.
pub fn normalize_angle_real<T: Real>(t: T) -> T {
    let a = t.value();
    let wrapped = normalize_angle(a);
    if wrapped == a {
        t
    } else {
        t + (wrapped - a)
    }
}

/// Applies the rigid transform `[x, y, theta]` to a body-frame point.
pub fn transform_point<T: Real>(pose: &[T; 3], p: &Point2<f64>) -> [T; 2] {
    let (s, c) = (pose[2].sin(), pose[2].cos());
    [c * p.x - s * p.y + pose[0], s * p.x + c * p.y + pose[1]]
}

/// Robot pose in the map frame. `theta` is kept in `[-pi, pi)` by every
/// constructor and by the solvers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2D::default()
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Pose2D::new(a[0], a[1], a[2])
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn transform_point(&self, p: &Point2<f64>) -> Point2<f64> {
        let [x, y] = transform_point(&self.to_array(), p);
        Point2::new(x, y)
    }

    /// `self * other`: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let p = self.transform_point(&Point2::new(other.x, other.y));
        Pose2D::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative motion from `self` to `other`, expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }

    /// Euclidean distance between the translations.
    pub fn translation_distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute shortest-arc heading difference.
    pub fn rotation_distance(&self, other: &Pose2D) -> f64 {
        normalize_angle(self.theta - other.theta).abs()
    }
}

/// A 2D scan in the sensor (body) frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud2D {
    points: Vec<Point2<f64>>,
}

impl PointCloud2D {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::argument(format!(
                "non-finite point ({}, {})",
                p.x, p.y
            )));
        }
        Ok(PointCloud2D { points })
    }

    pub fn from_xy(xy: &[[f64; 2]]) -> Result<Self> {
        Self::new(xy.iter().map(|p| Point2::new(p[0], p[1])).collect())
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point2<f64>> {
        self.points.iter()
    }

    /// The cloud expressed in the frame that `pose` maps into.
    pub fn transformed(&self, pose: &Pose2D) -> PointCloud2D {
        PointCloud2D {
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn normalize_examples() {
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(0.0), 0.0);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!(normalize_angle(-1e-300 - TAU) < PI);
    }

    #[test]
    fn transform_examples() {
        let p = Point2::new(3.0, 4.0);
        assert_eq!(Pose2D::identity().transform_point(&p), p);

        let q = Pose2D::new(1.0, 0.0, FRAC_PI_2).transform_point(&Point2::new(1.0, 0.0));
        assert_abs_diff_eq!(q.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-15);

        let q = Pose2D::new(0.0, 0.0, PI).transform_point(&Point2::new(1.0, 2.0));
        assert_abs_diff_eq!(q.x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn constructor_normalizes() {
        assert_abs_diff_eq!(Pose2D::new(0.0, 0.0, 3.3).theta, 3.3 - TAU, epsilon = 1e-15);
    }

    #[test]
    fn cloud_rejects_non_finite() {
        assert!(PointCloud2D::from_xy(&[[0.0, f64::NAN]]).is_err());
        assert!(PointCloud2D::from_xy(&[]).unwrap().is_empty());
    }

    #[test]
    fn between_recovers_relative_motion() {
        let a = Pose2D::new(1.0, -2.0, 0.4);
        let d = Pose2D::new(0.3, 0.1, -0.2);
        let b = a.compose(&d);
        let r = a.between(&b);
        assert_abs_diff_eq!(r.x, d.x, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, d.y, epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta, d.theta, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_periodic(t in -1e3f64..1e3, k in -20i32..20) {
            let n = normalize_angle(t);
            prop_assert!((-PI..PI).contains(&n));
            prop_assert_eq!(normalize_angle(n), n);
            let shifted = normalize_angle(t + k as f64 * TAU);
            // compare on the circle to tolerate wrap at the interval ends
            prop_assert!(normalize_angle(shifted - n).abs() < 1e-9);
            prop_assert!(normalize_angle(n - t).abs() < 1e-9);
        }

        #[test]
        fn inverse_round_trips_points(
            x in -10.0f64..10.0, y in -10.0f64..10.0, th in -PI..PI,
            px in -20.0f64..20.0, py in -20.0f64..20.0,
        ) {
            let pose = Pose2D::new(x, y, th);
            let p = Point2::new(px, py);
            let back = pose.inverse().transform_point(&pose.transform_point(&p));
            prop_assert!((back - p).norm() < 1e-12);
        }
    }
}
