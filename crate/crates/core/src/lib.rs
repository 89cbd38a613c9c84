//! Post-link stack smashing protection for wasm32 / WASI preview 1 binaries.
pub mod audit;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod harness;
pub mod layout;
pub mod leb;
pub mod model;
pub mod ssp;
