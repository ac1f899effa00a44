//! Neural building blocks with exact analytic gradients.

mod ablation;
mod cell;
mod ops;
mod tensor;

pub use ablation::{apply_ablation, AblationMask};
pub use cell::{gru_step, lstm_step, CellKind, CellParams, RecurrentState, StepCache};
pub use ops::{attention, attention_backward, dropout, dropout_mask, softmax, softmax_over_vocab, Attention};
pub use tensor::{axpy, dot, Tensor};

/// Half-width of the uniform parameter initialization range.
pub const INIT_SCALE: f64 = 0.08;
