pub mod analysis;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linearized;
pub mod modulation;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
