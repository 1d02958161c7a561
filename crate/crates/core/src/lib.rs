pub mod error;
pub mod fusion;
pub mod geo;
pub mod losses;
pub mod occ;
pub mod tensor;
pub mod verify;
pub mod view;

pub use error::{Error, Result};
