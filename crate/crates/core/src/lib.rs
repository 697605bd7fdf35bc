//! Multilingual tweet sentiment pipeline.
//!
//! Raw star-rated tweets are ingested ([`corpus`]), normalized
//! ([`preprocess`]), split with joint language × label stratification
//! ([`split`]), used to fine-tune encoder classifiers ([`model`], [`train`]),
//! optionally combined by majority vote ([`ensemble`]) and evaluated with
//! macro/weighted metrics and per-language confusion matrices ([`metrics`],
//! [`report`]).

pub mod cli;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod label;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod report;
pub mod split;
pub mod train;

pub use error::{Error, Result};
pub use label::{map_stars_to_label, SentimentLabel};
