//! Small deterministic network and optimizer substrate.
//!
//! Everything here is double precision and free of global state, so the
//! trainer can reproduce a run bit-for-bit from a seed.

mod gaussian;
mod mlp;
mod optim;

pub use gaussian::{
    squashed_gaussian_grads, GaussianHeadOutput, HeadGrad, SquashedSample, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use mlp::{elu, elu_derivative, ForwardCache, LayerSlice, Mlp, MlpSpec, ParamLayout, ParamVector};
pub use gaussian::softplus;
pub use optim::{adam_clipped_step, polyak_update, AdamState, LrSchedule, StepInfo};

/// Log-density of a standard normal at zero, `-0.5 * ln(2π)`.
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
