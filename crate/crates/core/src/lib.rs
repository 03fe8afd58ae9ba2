pub mod collocation;
pub mod error;
pub mod fit;
pub mod functional;
pub mod grid;
pub mod groundstate;
pub mod io;
pub mod linalg;
pub mod morse;
pub mod problem;
pub mod quad;
pub mod reduction;
pub mod verify;

pub use error::{Error, Result};
