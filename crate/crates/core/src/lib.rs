pub mod classify;
pub mod cli;
pub mod edap;
pub mod error;
pub mod extract;
pub mod features;
pub mod io;
pub mod model;
pub mod plot;
pub mod rules;
pub mod synth;

pub use error::{Error, Result};
