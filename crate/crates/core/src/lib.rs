//! Cost-optimal control of an electrical energy storage under time-varying
//! prices with discrete purchase quantities.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod milp;
pub mod model;
pub mod oracle;
pub mod rbdp;

pub use error::{Error, Result};
