//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point scalar: `f32` or `f64`.
///
/// Sampling primitives live on the trait so generic code never needs a
/// `StandardNormal: Distribution<T>` bound at every call site.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

/// Squared Euclidean distance. Panics in debug builds on length mismatch.
#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

#[inline]
pub fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    squared_distance(a, b).sqrt()
}
