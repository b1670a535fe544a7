//! Command-line front end for flip-chip resonator sample analysis:
//! configuration handling, CSV/JSON I/O, and the report pipeline that
//! binds the analysis stages into one reproducible run.

pub mod config;
pub mod io;
pub mod jsonout;
pub mod report;
