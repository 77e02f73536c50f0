//! Multi-task sequence models whose shared layers are chosen per task by a
//! learned controller from a pool of stackable recurrent modules.

pub mod architecture;
pub mod autodiff;
pub mod controller;
pub mod error;
pub mod harness;
pub mod layers;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
