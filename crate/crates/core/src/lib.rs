pub mod change;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod io;
pub mod preprocess;
pub mod raster;
pub mod train;

pub use error::{Error, ErrorKind, Result};
