//! Unit-sphere geometry: directions, angles, projection and halfspace labels.

use std::f64::consts::PI;
use std::ops::Neg;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary label in `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    #[inline]
    pub fn from_sign(v: f64) -> Label {
        // sign(0) := +1
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    #[inline]
    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A direction in `R^d` with unit Euclidean norm, `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `coords`. Fails on `d < 2`, the zero vector, or non-finite input.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionTooSmall(coords.len()));
        }
        let n = norm(&coords);
        if !n.is_finite() {
            return Err(crate::error::invalid("coords", "non-finite coordinates"));
        }
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        let mut coords = coords;
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(UnitVector(coords))
    }

    /// The standard basis vector `e_{axis}` in `R^dim`.
    pub fn basis(dim: usize, axis: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if axis >= dim {
            return Err(crate::error::invalid("axis", format!("{axis} >= {dim}")));
        }
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Ok(UnitVector(v))
    }

    /// Uniformly distributed direction (normalized Gaussian).
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if norm(&v) > 1e-8 {
                return UnitVector::new(v);
            }
        }
    }

    /// The unit vector at angle `theta` from `self` inside the plane spanned by
    /// `self` and `toward`: `cos(theta) self + sin(theta) u`, where `u` is the
    /// normalized component of `toward` orthogonal to `self`.
    pub fn rotated_toward(&self, toward: &[f64], theta: f64) -> Result<Self> {
        self.check_dim(toward.len())?;
        let c = dot(&self.0, toward);
        let mut u: Vec<f64> = toward.iter().zip(&self.0).map(|(t, w)| t - c * w).collect();
        let un = norm(&u);
        if un < 1e-12 {
            return Err(Error::ZeroVector);
        }
        u.iter_mut().for_each(|x| *x /= un);
        let (s, co) = theta.sin_cos();
        UnitVector::new(self.0.iter().zip(&u).map(|(w, u)| co * w + s * u).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        dot(&self.0, x)
    }

    pub fn angle(&self, other: &UnitVector) -> Result<f64> {
        angle(self, other)
    }

    /// `min(angle(self, other), angle(-self, other))`.
    pub fn min_angle(&self, other: &UnitVector) -> Result<f64> {
        let a = angle(self, other)?;
        Ok(a.min(PI - a))
    }

    #[inline]
    pub fn label(&self, x: &[f64]) -> Label {
        Label::from_sign(self.dot(x))
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// `self <- (self - beta g) / ||self - beta g||`. Returns `||self - beta g||`.
    pub(crate) fn step_and_project(&mut self, g: &[f64], beta: f64) -> Result<f64> {
        debug_assert_eq!(g.len(), self.dim());
        for (w, gi) in self.0.iter_mut().zip(g) {
            *w -= beta * gi;
        }
        let n = norm(&self.0);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvariantViolation(format!("projected SGD produced ||v|| = {n}")));
        }
        self.0.iter_mut().for_each(|w| *w /= n);
        Ok(n)
    }

    /// An orthonormal basis of the tangent space `{u : <u, self> = 0}`.
    pub fn tangent_basis(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
        let mut candidates: Vec<usize> = (0..d).collect();
        // start from the axes least aligned with self for conditioning
        candidates.sort_by(|&a, &b| self.0[a].abs().total_cmp(&self.0[b].abs()));
        for axis in candidates {
            if basis.len() == d - 1 {
                break;
            }
            let mut v = vec![0.0; d];
            v[axis] = 1.0;
            for _ in 0..2 {
                let c = dot(&v, &self.0);
                v.iter_mut().zip(&self.0).for_each(|(x, w)| *x -= c * w);
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        basis
    }
}

impl Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(self.0.into_iter().map(|c| -c).collect())
    }
}

impl Neg for &UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(self.0.iter().map(|c| -c).collect())
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Vec<f64> {
        v.0
    }
}

/// Angle in `[0, pi]`; the inner product is clamped into `[-1, 1]`.
pub fn angle(u: &UnitVector, v: &UnitVector) -> Result<f64> {
    u.check_dim(v.dim())?;
    Ok(u.dot(v.as_slice()).clamp(-1.0, 1.0).acos())
}

/// `v / ||v||` for any nonzero `v`.
pub fn project_to_sphere(v: &[f64]) -> Result<UnitVector> {
    UnitVector::new(v.to_vec())
}

/// `sign(<w, x>)` with `sign(0) = +1`.
pub fn halfspace_label(w: &UnitVector, x: &[f64]) -> Result<Label> {
    w.check_dim(x.len())?;
    Ok(w.label(x))
}
