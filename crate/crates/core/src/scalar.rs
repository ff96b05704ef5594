//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the solvers and simulators are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented float types.
    fn lit(x: f64) -> Self;

    /// Lossy view used for error messages, hashing and CSV output.
    fn as_f64(self) -> f64;

    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

macro_rules! impl_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $f
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

pub(crate) fn mean_and_stderr<T: Scalar>(samples: impl ExactSizeIterator<Item = T> + Clone) -> (T, T) {
    let count = samples.len();
    if count == 0 {
        return (T::zero(), T::zero());
    }
    let n = T::from_count(count);
    let mean = samples.clone().fold(T::zero(), |acc, x| acc + x) / n;
    if count == 1 {
        return (mean, T::zero());
    }
    let ss = samples.fold(T::zero(), |acc, x| acc + (x - mean) * (x - mean));
    let var = ss / T::from_count(count - 1);
    (mean, (var / n).sqrt())
}
