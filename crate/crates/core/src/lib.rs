// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod aggregation;
pub mod audit;
pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod http;
pub mod io;
pub mod model;
pub mod runner;
pub mod scenario;
pub mod tracing;

pub use error::{Error, Result};
