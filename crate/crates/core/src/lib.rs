//! Radical-pair magnetometry: spin dynamics of a driven radical pair, its
//! reaction yields and the Fisher information carried by the steady-state
//! probe about the magnetic-field direction.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod metrology;
pub mod model;
pub mod spin;
pub mod sweep;
pub mod tolerance;

pub use error::{Error, Result};
