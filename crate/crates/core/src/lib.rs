pub mod adapt;
pub mod driver;
pub mod error;
pub mod fem;
pub mod flow;
pub mod ksmodel;
pub mod mesh;

pub use error::{Error, Result};
