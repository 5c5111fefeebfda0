//! Quadratic bilevel instance whose lower level is merely convex.
//!
//! Variables: `x ∈ R^N`, `y = (y₁, y₂) ∈ R^{2N}`. Agent `i` has
//!
//! ```text
//! f_i = ½‖a_i x − y₂‖² + ½‖b_i y₁ − e‖²
//! g_i = ½ b_i² ‖y₁‖² − a_i xᵀy₁
//! ```
//!
//! so `g_i` does not depend on `y₂` and the lower-level solution set is a
//! whole affine subspace; `y₂` is picked by the upper level (optimistic
//! convention).

use super::{BilevelProblem, Dims, Gradient};
use crate::error::{DsboError, Result};
use crate::linalg::dot;
use crate::scalar::Scalar;

/// Published approximate optimum `(x, y₁, y₂) ≈ (1.43e, 0.84e, 1.58e)` for the
/// 5-agent instance. Kept only for side-by-side reporting; it does not agree
/// with the closed form in [`QuadraticToy::reference_solution`].
pub const PUBLISHED_TOY_TRIPLE: (f64, f64, f64) = (1.43, 0.84, 1.58);

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticToy<T> {
    dim: usize,
    a: Vec<T>,
    b: Vec<T>,
}

/// Optimistic bilevel optimum of a [`QuadraticToy`]; every block is a
/// multiple of the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyReference<T> {
    pub x: Vec<T>,
    pub y1: Vec<T>,
    pub y2: Vec<T>,
}

impl<T: Scalar> ToyReference<T> {
    /// `y = (y₁, y₂)` as one vector.
    pub fn y(&self) -> Vec<T> {
        crate::linalg::concat(&self.y1, &self.y2)
    }
}

impl<T: Scalar> QuadraticToy<T> {
    /// `a_i = 1 + 0.1 i`, `b_i = 1 + 0.05 i`.
    pub fn published(n_agents: usize, dim: usize) -> Self {
        Self::with_spread(n_agents, dim, 0.1, 0.05)
    }

    /// `a_i = 1 + a_step·i`, `b_i = 1 + b_step·i`.
    pub fn with_spread(n_agents: usize, dim: usize, a_step: f64, b_step: f64) -> Self {
        let a = (0..n_agents).map(|i| T::of(1.0 + a_step * i as f64)).collect();
        let b = (0..n_agents).map(|i| T::of(1.0 + b_step * i as f64)).collect();
        Self { dim, a, b }
    }

    pub fn from_coefficients(dim: usize, a: Vec<T>, b: Vec<T>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() || dim == 0 {
            return Err(DsboError::InvalidParameter(
                "toy instance needs matching nonempty a, b and dim >= 1".into(),
            ));
        }
        Ok(Self { dim, a, b })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    fn mean(v: impl Iterator<Item = T>, n: usize) -> T {
        v.sum::<T>() / T::of(n as f64)
    }

    /// `Σa_i / Σb_i²`, the slope of the lower-level solution `y₁*(x)`.
    pub fn lower_slope(&self) -> T {
        let sa: T = self.a.iter().copied().sum();
        let sb2: T = self.b.iter().map(|&b| b * b).sum();
        sa / sb2
    }

    /// Closed-form optimistic bilevel optimum.
    ///
    /// The lower-level first-order condition gives `y₁ = c·x` with
    /// `c = Σa_i / Σb_i²`; substituting leaves a convex quadratic in `(x, y₂)`
    /// that decouples per coordinate into a 2×2 linear system.
    pub fn reference_solution(&self) -> Result<ToyReference<T>> {
        let n = self.a.len();
        let sb2: T = self.b.iter().map(|&b| b * b).sum();
        if sb2 == T::zero() {
            return Err(DsboError::DegenerateInstance("all b_i are zero".into()));
        }
        let c = self.lower_slope();
        let mean_a = Self::mean(self.a.iter().copied(), n);
        let mean_a2 = Self::mean(self.a.iter().map(|&a| a * a), n);
        let mean_b = Self::mean(self.b.iter().copied(), n);
        let mean_b2 = sb2 / T::of(n as f64);
        // minimise mean_i ½(a_i x − y₂)² + ½(b_i c x − 1)² per coordinate:
        //   [mean a² + c² mean b²   −mean a] [x ]   [c mean b]
        //   [−mean a                 1     ] [y₂] = [0       ]
        let h11 = mean_a2 + c * c * mean_b2;
        let h12 = -mean_a;
        let det = h11 - h12 * h12;
        if det.abs() <= T::epsilon() * h11.abs().max(T::one()) {
            return Err(DsboError::DegenerateInstance("singular normal equations".into()));
        }
        let rhs = c * mean_b;
        let x = rhs / det;
        let y2 = -h12 * rhs / det;
        let y1 = c * x;
        Ok(ToyReference {
            x: vec![x; self.dim],
            y1: vec![y1; self.dim],
            y2: vec![y2; self.dim],
        })
    }
}

impl<T: Scalar> BilevelProblem<T> for QuadraticToy<T> {
    fn n_agents(&self) -> usize {
        self.a.len()
    }

    fn dims(&self) -> Dims {
        Dims {
            dx: self.dim,
            dy: 2 * self.dim,
        }
    }

    fn l1(&self) -> T {
        // per-coordinate Hessian of f_i has blocks [[a², −a], [−a, 1]] and [b²]
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| (a * a + T::one()).max(b * b))
            .fold(T::zero(), T::max)
    }

    fn l2(&self) -> T {
        // Hessian of g_i in (x, y₁) is [[0, −a], [−a, b²]]
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| {
                let b2 = b * b;
                (b2 + (b2 * b2 + T::of(4.0) * a * a).sqrt()) / T::of(2.0)
            })
            .fold(T::zero(), T::max)
    }

    fn f_value(&self, agent: usize, x: &[T], y: &[T]) -> T {
        let (a, b) = (self.a[agent], self.b[agent]);
        let (y1, y2) = y.split_at(self.dim);
        let half = T::of(0.5);
        let upper: T = x.iter().zip(y2).map(|(&xi, &zi)| (a * xi - zi) * (a * xi - zi)).sum();
        let fit: T = y1.iter().map(|&v| (b * v - T::one()) * (b * v - T::one())).sum();
        half * (upper + fit)
    }

    fn g_value(&self, agent: usize, x: &[T], y: &[T]) -> T {
        let (a, b) = (self.a[agent], self.b[agent]);
        let y1 = &y[..self.dim];
        T::of(0.5) * b * b * dot(y1, y1) - a * dot(x, y1)
    }

    fn f_gradient(&self, agent: usize, x: &[T], y: &[T]) -> Gradient<T> {
        let (a, b) = (self.a[agent], self.b[agent]);
        let (y1, y2) = y.split_at(self.dim);
        let resid: Vec<T> = x.iter().zip(y2).map(|(&xi, &zi)| a * xi - zi).collect();
        let gx = resid.iter().map(|&r| a * r).collect();
        let mut gy: Vec<T> = y1.iter().map(|&v| b * (b * v - T::one())).collect();
        gy.extend(resid.iter().map(|&r| -r));
        Gradient { gx, gy }
    }

    fn g_gradient(&self, agent: usize, x: &[T], y: &[T]) -> Gradient<T> {
        let (a, b) = (self.a[agent], self.b[agent]);
        let y1 = &y[..self.dim];
        let gx = y1.iter().map(|&v| -a * v).collect();
        let mut gy: Vec<T> = y1.iter().zip(x).map(|(&v, &xi)| b * b * v - a * xi).collect();
        gy.extend(std::iter::repeat_n(T::zero(), self.dim));
        Gradient { gx, gy }
    }

    fn prox_lower(&self, x: &[T], y: &[T], gamma: T) -> Option<Vec<T>> {
        // (mean b² + 1/γ) θ₁ = mean a · x + y₁/γ ;  θ₂ = y₂
        let n = self.a.len();
        let mean_a = Self::mean(self.a.iter().copied(), n);
        let mean_b2 = Self::mean(self.b.iter().map(|&b| b * b), n);
        let inv_g = T::one() / gamma;
        let denom = mean_b2 + inv_g;
        let (y1, y2) = y.split_at(self.dim);
        let mut theta: Vec<T> = y1.iter().zip(x).map(|(&v, &xi)| (mean_a * xi + inv_g * v) / denom).collect();
        theta.extend_from_slice(y2);
        Some(theta)
    }
}
