//! QuanvNeXt: a fully quanvolutional network for multichannel time-series
//! classification, simulated exactly on a classical statevector backend.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod qsim;
pub mod quanv;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
