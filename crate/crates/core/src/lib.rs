pub mod bikac;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod geomcon;
pub mod hmsr;
pub mod math;
pub mod pipeline;
pub mod saliency;
pub mod synthgen;
pub mod trajdata;
pub mod vmp;

pub use error::{Error, Result};
pub use math::Point;
