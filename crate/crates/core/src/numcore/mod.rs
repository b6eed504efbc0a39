//! Dense 2-D tensors, a recording tape with reverse-mode differentiation,
//! the AdamW optimizer and finite-difference gradient checking.
//!
//! Everything is `f64`. Vectors are `1 × n` rows. Loops run in a fixed order
//! so single-threaded runs are bitwise reproducible.

mod checkpoint;
mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_FLOOR};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Csr, Gradients, MapFn, Tape, Var};
pub use tensor::Tensor;
