//! Dense `f64` arithmetic, a reverse-mode tape over the primitives the
//! forecaster uses, a DFT, and a finite-difference gradient checker.

mod array;
pub mod dft;
pub mod gradcheck;
pub mod tape;

pub use array::{
    activation, dropout, elementwise, gelu, gelu_derivative, matmul, normal_cdf, normal_pdf, Activation,
    Array2, ElementwiseKind, Mode, GELU_LIPSCHITZ,
};
pub use dft::{dft, ComplexVec, DftPlan};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
