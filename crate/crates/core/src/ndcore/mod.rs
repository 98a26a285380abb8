//! Dense matrices, a reverse-mode tape over them, Adam and Xavier init.

mod adam;
mod init;
mod matrix;
mod sparse;
mod tape;

pub use adam::AdamState;
pub use init::{xavier_bound, xavier_init, xavier_uniform};
pub use matrix::Matrix;
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var, NORM_EPS};
