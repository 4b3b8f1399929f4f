//! Differentiable operations recorded on a [`crate::Tape`].

mod convolution;
mod norm;
mod pointwise;
mod structural;

pub use norm::{NormMode, BN_EPS, BN_MOMENTUM};
pub use pointwise::Activation;

use crate::Scalar;

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
