pub mod data;
pub mod embed;
pub mod error;
pub mod fuse;
pub mod harness;
pub mod hyper;
pub mod model;
pub mod ndcore;
pub mod objective;
pub mod par;

pub use error::{Error, Result};
