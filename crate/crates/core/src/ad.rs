//! Second-order forward-mode automatic differentiation.
//!
//! [`Jet`] carries a value together with its gradient and Hessian with
//! respect to `N` seeded variables. Model code is written once against the
//! [`Scalar`] trait and evaluated either on plain `f64` or on jets.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
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
    fn cst(x: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqr(self) -> Self {
        self * self
    }
    /// `max(self, 0)`
    fn pos_part(self) -> Self;
    /// `min(self, 0)`
    fn neg_part(self) -> Self;
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn pos_part(self) -> Self {
        self.max(0.0)
    }
    fn neg_part(self) -> Self {
        self.min(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// Independent variable number `i`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Chain rule for a scalar function with derivatives `f0, f1, f2` at `self.v`.
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
        }
        for i in 0..N {
            let gi = self.g[i];
            for j in 0..N {
                out.h[i][j] = f1 * self.h[i][j] + f2 * gi * self.g[j];
            }
        }
        out
    }

    fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for i in 0..N {
            self.g[i] += rhs.g[i];
            for j in 0..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for i in 0..N {
            self.g[i] -= rhs.g[i];
            for j in 0..N {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.v * rhs.v);
        for i in 0..N {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
        }
        for i in 0..N {
            let (ai, bi) = (self.g[i], rhs.g[i]);
            for j in 0..N {
                out.h[i][j] = self.v * rhs.h[i][j]
                    + rhs.v * self.h[i][j]
                    + ai * rhs.g[j]
                    + bi * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for i in 0..N {
            self.g[i] *= rhs;
            for j in 0..N {
                self.h[i][j] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize> Scalar for Jet<N> {
    fn cst(x: f64) -> Self {
        Self::constant(x)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn pos_part(self) -> Self {
        if self.v > 0.0 {
            self
        } else {
            Self::constant(0.0)
        }
    }
    fn neg_part(self) -> Self {
        if self.v < 0.0 {
            self
        } else {
            Self::constant(0.0)
        }
    }
}
