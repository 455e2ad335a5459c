//! Forward-mode automatic differentiation with three derivative slots.
//!
//! A [`Jet3`] carries a value together with its partial derivatives with
//! respect to the three pose parameters `(x, y, theta)`. Code written
//! against the [`Real`] trait evaluates either on plain `f64` (cost only) or
//! on `Jet3` (cost and exact Jacobian row).
//!
//! Arithmetic follows IEEE semantics: dividing by a zero-valued jet or taking
//! `ln` of a negative value yields `inf`/`NaN` rather than panicking. The
//! `checked_*`/`try_*` variants report those cases as [`Error::Domain`].

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Number of derivative slots carried by a [`Jet3`].
pub const JET_DIM: usize = 3;

/// Scalar type that the residuals and map lookups are generic over.
pub trait Real:
    Copy
    + fmt::Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Lifts a plain number; derivatives (if any) are zero.
    fn constant(x: f64) -> Self;
    /// The plain value, dropping derivatives.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// Four-quadrant arctangent of `self / x`.
    fn atan2(self, x: Self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Dual number with a value `a` and gradient `v` over three variables.
///
/// `PartialEq` and `PartialOrd` look at the value only.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jet3 {
    pub a: f64,
    pub v: [f64; JET_DIM],
}

impl Jet3 {
    #[inline]
    pub const fn new(a: f64, v: [f64; JET_DIM]) -> Self {
        Jet3 { a, v }
    }

    /// A constant: zero derivative vector.
    #[inline]
    pub const fn constant(a: f64) -> Self {
        Jet3 {
            a,
            v: [0.0; JET_DIM],
        }
    }

    /// The `k`-th independent variable, seeded with the unit vector `e_k`.
    pub fn variable(a: f64, k: usize) -> Result<Self> {
        if k >= JET_DIM {
            return Err(Error::argument(format!(
                "jet variable index {k} out of range 0..{JET_DIM}"
            )));
        }
        let mut v = [0.0; JET_DIM];
        v[k] = 1.0;
        Ok(Jet3 { a, v })
    }

    /// Seeds all three pose parameters at once.
    pub fn seed(values: [f64; JET_DIM]) -> [Jet3; JET_DIM] {
        let mut out = [Jet3::default(); JET_DIM];
        for (k, (slot, &a)) in out.iter_mut().zip(values.iter()).enumerate() {
            slot.a = a;
            slot.v[k] = 1.0;
        }
        out
    }

    /// Chain rule for a unary function with value `fa` and derivative `dfa` at `a`.
    #[inline]
    fn chain(self, fa: f64, dfa: f64) -> Self {
        Jet3 {
            a: fa,
            v: [dfa * self.v[0], dfa * self.v[1], dfa * self.v[2]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.v.iter().all(|d| d.is_finite())
    }

    pub fn checked_div(self, rhs: Jet3) -> Result<Jet3> {
        if rhs.a == 0.0 {
            return Err(Error::Domain("division by a zero-valued jet".into()));
        }
        Ok(self / rhs)
    }

    pub fn try_ln(self) -> Result<Jet3> {
        if self.a.is_nan() || self.a <= 0.0 {
            return Err(Error::Domain(format!(
                "ln of non-positive value {}",
                self.a
            )));
        }
        Ok(Real::ln(self))
    }

    pub fn try_sqrt(self) -> Result<Jet3> {
        if self.a.is_nan() || self.a < 0.0 {
            return Err(Error::Domain(format!("sqrt of negative value {}", self.a)));
        }
        Ok(Real::sqrt(self))
    }

    pub fn try_atan2(self, x: Jet3) -> Result<Jet3> {
        if self.a == 0.0 && x.a == 0.0 {
            return Err(Error::Domain("atan2(0, 0) is undefined".into()));
        }
        Ok(Real::atan2(self, x))
    }
}

impl Real for Jet3 {
    #[inline]
    fn constant(x: f64) -> Self {
        Jet3::constant(x)
    }
    #[inline]
    fn value(self) -> f64 {
        self.a
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.a.sin(), self.a.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.a.cos(), -self.a.sin())
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.a.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.a.ln(), 1.0 / self.a)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.a.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn atan2(self, x: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let y = self;
        let denom = x.a * x.a + y.a * y.a;
        let mut v = [0.0; JET_DIM];
        for (k, d) in v.iter_mut().enumerate() {
            *d = (x.a * y.v[k] - y.a * x.v[k]) / denom;
        }
        Jet3 {
            a: y.a.atan2(x.a),
            v,
        }
    }
}

impl PartialEq for Jet3 {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a
    }
}

impl PartialOrd for Jet3 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.a.partial_cmp(&other.a)
    }
}

impl PartialEq<f64> for Jet3 {
    fn eq(&self, other: &f64) -> bool {
        self.a == *other
    }
}

impl PartialOrd<f64> for Jet3 {
    fn partial_cmp(&self, other: &f64) -> Option<Ordering> {
        self.a.partial_cmp(other)
    }
}

impl fmt::Display for Jet3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, [{}, {}, {}])",
            self.a, self.v[0], self.v[1], self.v[2]
        )
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    #[inline]
    fn neg(self) -> Jet3 {
        Jet3::new(-self.a, [-self.v[0], -self.v[1], -self.v[2]])
    }
}

impl Add for Jet3 {
    type Output = Jet3;
    #[inline]
    fn add(self, rhs: Jet3) -> Jet3 {
        Jet3::new(
            self.a + rhs.a,
            [
                self.v[0] + rhs.v[0],
                self.v[1] + rhs.v[1],
                self.v[2] + rhs.v[2],
            ],
        )
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    #[inline]
    fn sub(self, rhs: Jet3) -> Jet3 {
        Jet3::new(
            self.a - rhs.a,
            [
                self.v[0] - rhs.v[0],
                self.v[1] - rhs.v[1],
                self.v[2] - rhs.v[2],
            ],
        )
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    #[inline]
    fn mul(self, rhs: Jet3) -> Jet3 {
        let mut v = [0.0; JET_DIM];
        for (k, d) in v.iter_mut().enumerate() {
            *d = self.v[k] * rhs.a + self.a * rhs.v[k];
        }
        Jet3::new(self.a * rhs.a, v)
    }
}

impl Div for Jet3 {
    type Output = Jet3;
    #[inline]
    fn div(self, rhs: Jet3) -> Jet3 {
        // (f/g)' = (f' g - f g') / g^2 = (f' - q g') / g with q = f/g
        let inv = 1.0 / rhs.a;
        let q = self.a * inv;
        let mut v = [0.0; JET_DIM];
        for (k, d) in v.iter_mut().enumerate() {
            *d = (self.v[k] - q * rhs.v[k]) * inv;
        }
        Jet3::new(q, v)
    }
}

impl Add<f64> for Jet3 {
    type Output = Jet3;
    #[inline]
    fn add(self, rhs: f64) -> Jet3 {
        Jet3::new(self.a + rhs, self.v)
    }
}

impl Sub<f64> for Jet3 {
    type Output = Jet3;
    #[inline]
    fn sub(self, rhs: f64) -> Jet3 {
        Jet3::new(self.a - rhs, self.v)
    }
}

impl Mul<f64> for Jet3 {
    type Output = Jet3;
    #[inline]
    fn mul(self, rhs: f64) -> Jet3 {
        Jet3::new(
            self.a * rhs,
            [self.v[0] * rhs, self.v[1] * rhs, self.v[2] * rhs],
        )
    }
}

impl Div<f64> for Jet3 {
    type Output = Jet3;
    #[inline]
    fn div(self, rhs: f64) -> Jet3 {
        self / Jet3::constant(rhs)
    }
}

impl Add<Jet3> for f64 {
    type Output = Jet3;
    #[inline]
    fn add(self, rhs: Jet3) -> Jet3 {
        rhs + self
    }
}

impl Sub<Jet3> for f64 {
    type Output = Jet3;
    #[inline]
    fn sub(self, rhs: Jet3) -> Jet3 {
        Jet3::constant(self) - rhs
    }
}

impl Mul<Jet3> for f64 {
    type Output = Jet3;
    #[inline]
    fn mul(self, rhs: Jet3) -> Jet3 {
        rhs * self
    }
}

impl Div<Jet3> for f64 {
    type Output = Jet3;
    #[inline]
    fn div(self, rhs: Jet3) -> Jet3 {
        Jet3::constant(self) / rhs
    }
}

impl AddAssign for Jet3 {
    fn add_assign(&mut self, rhs: Jet3) {
        *self = *self + rhs;
    }
}

impl SubAssign for Jet3 {
    fn sub_assign(&mut self, rhs: Jet3) {
        *self = *self - rhs;
    }
}

impl MulAssign for Jet3 {
    fn mul_assign(&mut self, rhs: Jet3) {
        *self = *self * rhs;
    }
}

impl From<f64> for Jet3 {
    fn from(a: f64) -> Self {
        Jet3::constant(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_jet(j: Jet3, a: f64, v: [f64; 3]) {
        assert_eq!(j.a, a, "value of {j}");
        assert_eq!(j.v, v, "derivatives of {j}");
    }

    #[test]
    fn constants_have_zero_gradient() {
        assert_jet(Jet3::constant(5.0), 5.0, [0.0; 3]);
        assert_jet(Jet3::constant(0.0), 0.0, [0.0; 3]);
        assert_jet(Jet3::constant(-2.5), -2.5, [0.0; 3]);
    }

    #[test]
    fn variables_are_unit_seeds() {
        assert_jet(Jet3::variable(1.0, 0).unwrap(), 1.0, [1.0, 0.0, 0.0]);
        assert_jet(Jet3::variable(3.0, 2).unwrap(), 3.0, [0.0, 0.0, 1.0]);
        assert!(matches!(Jet3::variable(0.5, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn arithmetic_rules() {
        let x = Jet3::new(1.0, [1.0, 0.0, 0.0]);
        let y = Jet3::new(2.0, [0.0, 1.0, 0.0]);
        assert_jet(x + y, 3.0, [1.0, 1.0, 0.0]);

        let x = Jet3::new(2.0, [1.0, 0.0, 0.0]);
        let y = Jet3::new(3.0, [0.0, 1.0, 0.0]);
        assert_jet(x * y, 6.0, [3.0, 2.0, 0.0]);

        let x = Jet3::new(6.0, [1.0, 0.0, 0.0]);
        assert_jet(x / Jet3::constant(2.0), 3.0, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn scalar_overloads_match_constant_jets() {
        let x = Jet3::new(1.5, [0.25, -1.0, 2.0]);
        let c = 0.75;
        assert_jet(x + c, (x + Jet3::constant(c)).a, (x + Jet3::constant(c)).v);
        assert_jet(c - x, (Jet3::constant(c) - x).a, (Jet3::constant(c) - x).v);
        assert_jet(x * c, (x * Jet3::constant(c)).a, (x * Jet3::constant(c)).v);
        assert_jet(c / x, (Jet3::constant(c) / x).a, (Jet3::constant(c) / x).v);
    }

    #[test]
    fn identities_are_exact() {
        let x = Jet3::new(0.3, [0.7, -1.1, 4.0]);
        assert_jet(x + 0.0, x.a, x.v);
        assert_jet(x * 1.0, x.a, x.v);
        assert_jet(x / x, 1.0, [0.0; 3]);
    }

    #[test]
    fn elementary_functions() {
        assert_jet(Jet3::new(0.0, [1.0, 0.0, 0.0]).sin(), 0.0, [1.0, 0.0, 0.0]);
        assert_jet(Jet3::new(0.0, [0.0, 2.0, 0.0]).exp(), 1.0, [0.0, 2.0, 0.0]);
        let y = Jet3::variable(1.0, 1).unwrap();
        let x = Jet3::variable(1.0, 0).unwrap();
        let t = y.atan2(x);
        assert!((t.a - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((t.v[0] + 0.5).abs() < 1e-15 && (t.v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let zero = Jet3::constant(0.0);
        assert!(matches!(
            Jet3::constant(1.0).checked_div(zero),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Jet3::constant(-1.0).try_ln(),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Jet3::constant(0.0).try_ln(),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Jet3::constant(-1e-3).try_sqrt(),
            Err(Error::Domain(_))
        ));
        assert!(Jet3::constant(0.0).try_sqrt().is_ok());
        assert!(matches!(zero.try_atan2(zero), Err(Error::Domain(_))));
    }

    #[test]
    fn unchecked_ops_propagate_ieee() {
        let q = Jet3::constant(1.0) / Jet3::constant(0.0);
        assert!(q.a.is_infinite());
        assert!(Real::ln(Jet3::constant(-1.0)).a.is_nan());
        assert!(!q.is_finite());
    }

    #[test]
    fn comparisons_ignore_derivatives() {
        let a = Jet3::new(1.0, [5.0, 0.0, 0.0]);
        let b = Jet3::new(1.0, [0.0, -3.0, 0.0]);
        assert_eq!(a, b);
        assert!(Jet3::constant(0.5) < a);
        assert!(a > 0.0);
    }
}
