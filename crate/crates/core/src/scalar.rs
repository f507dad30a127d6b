//! Scalar abstraction for the forward pass.
//!
//! Every forward computation (projection, compositing, losses) is written once
//! against [`Scalar`]. `f64` is the production instantiation.
//!
//! [`Perturbed`] carries a base value and a perturbed value side by side.
//! Arithmetic is applied to both channels, while every discrete decision
//! (depth sort, culling, clamps, the sign inside an absolute value,
//! argmin/argmax, neighbour selection) is taken on the base channel. Running
//! the forward pass on `Perturbed` inputs therefore evaluates the objective at
//! the perturbed point along the branch that is active at the base point,
//! which is what a finite-difference check of a piecewise-smooth function
//! needs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Value used for every discrete decision.
    fn branch(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn abs(self) -> Self {
        if self.branch() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn max_s(self, other: Self) -> Self {
        if other.branch() > self.branch() {
            other
        } else {
            self
        }
    }

    fn min_s(self, other: Self) -> Self {
        if other.branch() < self.branch() {
            other
        } else {
            self
        }
    }

    fn clamp_s(self, lo: f64, hi: f64) -> Self {
        let b = self.branch();
        if b < lo {
            Self::cst(lo)
        } else if b > hi {
            Self::cst(hi)
        } else {
            self
        }
    }

    fn sq(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn branch(self) -> f64 {
        self
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
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Base value plus a perturbed copy evaluated on the base branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbed {
    pub base: f64,
    pub value: f64,
}

impl Perturbed {
    pub fn new(base: f64, value: f64) -> Self {
        Self { base, value }
    }
}

macro_rules! perturbed_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Perturbed {
            type Output = Perturbed;
            #[inline]
            fn $m(self, o: Perturbed) -> Perturbed {
                Perturbed { base: self.base $op o.base, value: self.value $op o.value }
            }
        }
        impl $tr<f64> for Perturbed {
            type Output = Perturbed;
            #[inline]
            fn $m(self, o: f64) -> Perturbed {
                Perturbed { base: self.base $op o, value: self.value $op o }
            }
        }
    };
}

perturbed_binop!(Add, add, +);
perturbed_binop!(Sub, sub, -);
perturbed_binop!(Mul, mul, *);
perturbed_binop!(Div, div, /);

impl Neg for Perturbed {
    type Output = Perturbed;
    fn neg(self) -> Perturbed {
        Perturbed { base: -self.base, value: -self.value }
    }
}

impl AddAssign for Perturbed {
    fn add_assign(&mut self, o: Perturbed) {
        *self = *self + o;
    }
}

impl SubAssign for Perturbed {
    fn sub_assign(&mut self, o: Perturbed) {
        *self = *self - o;
    }
}

impl MulAssign for Perturbed {
    fn mul_assign(&mut self, o: Perturbed) {
        *self = *self * o;
    }
}

impl Scalar for Perturbed {
    fn cst(v: f64) -> Self {
        Perturbed { base: v, value: v }
    }
    fn branch(self) -> f64 {
        self.base
    }
    fn exp(self) -> Self {
        Perturbed { base: self.base.exp(), value: self.value.exp() }
    }
    fn ln(self) -> Self {
        Perturbed { base: self.base.ln(), value: self.value.ln() }
    }
    fn sqrt(self) -> Self {
        Perturbed { base: self.base.sqrt(), value: self.value.sqrt() }
    }
    fn sin(self) -> Self {
        Perturbed { base: self.base.sin(), value: self.value.sin() }
    }
    fn cos(self) -> Self {
        Perturbed { base: self.base.cos(), value: self.value.cos() }
    }
    fn is_finite(self) -> bool {
        self.base.is_finite() && self.value.is_finite()
    }
}

pub fn lift<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::cst(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbed_follows_base_branch() {
        let x = Perturbed::new(0.5, -0.5);
        // base positive -> identity, even though the perturbed channel is negative
        assert_eq!(x.abs().value, -0.5);
        let y = Perturbed::new(2.0, 0.9).clamp_s(1.0, 3.0);
        assert_eq!(y.value, 0.9);
    }

    #[test]
    fn f64_helpers() {
        assert_eq!((-2.0f64).max_s(1.0), 1.0);
        assert_eq!(Scalar::abs(-3.0f64), 3.0);
        assert_eq!(5.0f64.clamp_s(0.0, 1.0), 1.0);
    }
}
