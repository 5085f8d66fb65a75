//! Dense reverse-mode differentiation, sparse aggregation and optimization.

pub mod adam;
pub mod aggregate;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use aggregate::DEG_FLOOR;
pub use gradcheck::grad_check;
pub use sparse::CsrMatrix;
pub use tape::{softmax, Gradients, Shared, Tape, Var};
