//! 2×2 real matrices for phase-plane linearizations.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;

use crate::scalar::Real;

/// Row-major `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> T {
        self.a + self.d
    }

    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        Some(Self::new(self.d / det, -self.b / det, -self.c / det, self.a / det))
    }

    /// Solves `self · z = rhs`.
    pub fn solve(&self, rhs: [T; 2]) -> Option<[T; 2]> {
        self.inverse().map(|m| m.apply(rhs))
    }

    pub fn max_abs(&self) -> T {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Eigenvalues ordered by modulus, largest first. Uses `det` for the
    /// smaller root so strongly hyperbolic matrices keep full accuracy.
    pub fn eigenvalues_with_det(&self, det: T) -> [Complex<T>; 2] {
        let half = self.trace() / T::lit(2.0);
        let disc = half * half - det;
        if disc >= T::zero() {
            let root = disc.sqrt();
            let big = if half >= T::zero() { half + root } else { half - root };
            if big == T::zero() {
                return [Complex::new(T::zero(), T::zero()); 2];
            }
            [Complex::new(big, T::zero()), Complex::new(det / big, T::zero())]
        } else {
            let im = (-disc).sqrt();
            [Complex::new(half, im), Complex::new(half, -im)]
        }
    }

    pub fn eigenvalues(&self) -> [Complex<T>; 2] {
        self.eigenvalues_with_det(self.det())
    }

    /// Unit eigenvector for a real eigenvalue `mu`.
    pub fn eigenvector(&self, mu: T) -> [T; 2] {
        // Rows of (M - mu I) are orthogonal to the eigenvector; use the larger.
        let r1 = [self.a - mu, self.b];
        let r2 = [self.c, self.d - mu];
        let n1 = r1[0].hypot(r1[1]);
        let n2 = r2[0].hypot(r2[1]);
        let v = if n1 >= n2 { [-r1[1], r1[0]] } else { [-r2[1], r2[0]] };
        let n = v[0].hypot(v[1]);
        if n == T::zero() {
            [T::one(), T::zero()]
        } else {
            [v[0] / n, v[1] / n]
        }
    }
}

impl<T: Real> Mul for Mat2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl<T: Real> Add for Mat2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl<T: Real> Sub for Mat2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}
