//! File formats, CSV/JSON exports and the `icunet` command line.

pub mod cli;
pub mod export;
pub mod persist;
