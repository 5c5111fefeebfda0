//! Floating-point abstraction shared by every numerical routine in the crate.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar type the simulator is generic over (`f32` or `f64`).
pub trait Scalar: Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Tolerance used by structural checks (double stochasticity, symmetry).
    ///
    /// This is `1e-12` for `f64`; narrower types get a floor proportional to
    /// their machine epsilon so the same checks stay meaningful.
    fn structural_tol(n: usize) -> Self {
        let floor = Self::epsilon() * Self::of(16.0 * n.max(1) as f64);
        Self::of(1e-12).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
