use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the energy, probability and series code is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable in scalar type")
    }

    fn from_i64_lossy(n: i64) -> Self {
        Self::from_i64(n).expect("integer representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// `log(sum(exp(xs)))` with max subtraction; all `-inf` inputs give `-inf`.
/// The non-maximal terms go through `ln_1p` so sums close to one term keep
/// their small excess.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let Some((im, m)) = xs.iter().copied().enumerate().fold(None, |acc: Option<(usize, F)>, (i, x)| match acc {
        Some((_, b)) if b >= x => acc,
        _ => Some((i, x)),
    }) else {
        return F::neg_infinity();
    };
    if m == F::neg_infinity() {
        return m;
    }
    if m == F::infinity() {
        return m;
    }
    let rest: F = xs.iter().enumerate().filter(|&(i, _)| i != im).map(|(_, &x)| (x - m).exp()).sum();
    m + rest.ln_1p()
}
