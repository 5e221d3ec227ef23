pub mod error;
pub mod harness;
pub mod hessian;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod stats;
pub mod svd;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::Matrix;
