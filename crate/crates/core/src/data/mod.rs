//! Synthetic generators, CSV ingestion and export, and embedding
//! persistence.

mod generate;
mod io;

pub use generate::*;
pub use io::*;
