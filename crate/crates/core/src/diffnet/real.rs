//! Scalar abstraction shared by plain `f64` evaluation and tape recording.
//!
//! Model code written against [`Real`] runs unchanged on `f64` (fast path,
//! simulator) and on [`Var`](super::Var) (differentiable path, training).
//! Both implementations evaluate the identical floating-point expression for
//! every primitive, so the two paths agree bit-for-bit on values.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
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
    /// Numeric value, used for branch selection and domain checks.
    fn value(self) -> f64;

    /// A constant living in the same evaluation context as `self`.
    fn constant(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn asin(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;

    /// `c / self`
    fn rdiv(self, c: f64) -> Self;

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    fn square(self) -> Self {
        self * self
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn constant(self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn asin(self) -> Self {
        f64::asin(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn rdiv(self, c: f64) -> Self {
        c / self
    }
}
