//! Dense tensors, the autodiff tape, seeded randomness and gradient checking.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_report, relative_error, GradCheckReport};
pub use rng::SeededRng;
pub use tape::{sigmoid, softmax_in_place, ActivationKind, BackwardFault, ElementwiseKind, Gradients, Tape, Var};
pub use tensor::Tensor;
