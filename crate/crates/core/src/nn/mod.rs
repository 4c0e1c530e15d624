//! Feed-forward classifier: dense layers, batch normalization, ReLU,
//! inverted dropout and a softmax output trained with categorical
//! cross-entropy and Adam.
//!
//! All operations are generic over [`Scalar`] so the same code path runs
//! in single precision for training and double precision for gradient
//! checking.

mod adam;
mod network;
mod spec;
mod train;
mod weights;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use adam::{adam_step, AdamState};
pub use network::{
    forward, loss_and_grad, ForwardCache, LossAndGrad, Mode, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM, LOG_PROB_FLOOR,
};
pub use spec::{Activation, ModelSpec};
pub use train::{argmax, predict, train, EpochRecord, Prediction, TrainConfig, TrainHistory};
pub use weights::{init_model, Fingerprint, Tensor, WeightSet};

pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
