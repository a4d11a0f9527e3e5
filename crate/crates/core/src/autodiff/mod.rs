//! Reverse-mode differentiation over small dense tensors, the embedding
//! network trained with it, and the finite-difference check that guards
//! both.

mod gradcheck;
mod net;
pub mod objective;
mod optim;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use gradcheck::{
    analytic_gradients, grad_check, numeric_loss, tiny_problem, GradCheckOptions, GradCheckReport,
};
pub use net::{
    checkpoint_bytes, checkpoint_from_bytes, read_checkpoint, write_checkpoint, Activation,
    EmbeddingNet, Layer, ParamVars, CHECKPOINT_MAGIC,
};
pub use optim::{sgd_step, LinearDecay, SgdMomentum};
pub use tape::{DerivativeRule, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Floating-point type a network can be trained in.
pub trait Real:
    Float + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    const NAME: &'static str;

    fn cast(v: f64) -> Self;

    fn widen(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "single";

    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "double";

    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }
}
