//! File-backed front end of tunnelkit: dump and manifest I/O, the parallel
//! probe grid, the report pipeline and its SVG plots.

pub mod error;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod records;
pub mod validate;

pub use error::{Result, TkError};
