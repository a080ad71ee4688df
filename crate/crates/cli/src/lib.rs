//! Command-line pipeline and HTTP review service.
//!
//! - [`cli`]: subcommands from tokenizer training through evaluation.
//! - [`service`]: search, classification and judgment capture over HTTP.
//! - [`store`]: the durable append-only judgment log.

pub mod cli;
pub mod error;
pub mod service;
pub mod store;

pub use error::CliError;
