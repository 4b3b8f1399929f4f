//! Dense `N x C x H x W` tensors with a tape for reverse-mode
//! differentiation, sized for small convolutional generators.
//!
//! ```
//! use adar_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, -2.0]).unwrap());
//! let y = tape.square(x);
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0]);
//! ```

pub mod conv;
pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_difference_check, finite_difference_check_ladder, finite_difference_check_ladder_with_fault,
    finite_difference_check_with_fault, relative_error, GradCheck,
};
pub use ops::{Activation, NormMode, BN_EPS, BN_MOMENTUM};
pub use scalar::Scalar;
pub use tape::{Fault, Tape, Var};
pub use tensor::{Result, Tensor, TensorError};
