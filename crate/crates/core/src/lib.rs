pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
