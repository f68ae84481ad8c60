//! File formats, verification harnesses, parallel sweeps and the `countlab`
//! command line on top of `countlab-core`.

pub mod cli;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod sweep;
pub mod verify;

pub use countlab_core as core;
