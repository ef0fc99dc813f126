pub mod biot_savart;
pub mod dump;
pub mod error;
pub mod field;
pub mod harness;
pub mod kernels;
pub mod nonlinear;
pub mod norms;
pub mod special;
pub mod stepper;
pub mod vertical;

pub use error::{Error, Result};
