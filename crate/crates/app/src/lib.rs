//! Command-line tool and HTTP JSON service for explainable crop
//! recommendation, built on `cropwise_core`.

pub mod cli;
pub mod request;
pub mod runner;
pub mod service;
