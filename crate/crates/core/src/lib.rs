//! Multi-class queueing networks with spinning and their flow-level limit.
//!
//! Exact product-form quantities live in [`product_form`]; the two simulators
//! are [`packet_sim`] (prelimit, packet level) and [`flow_sim`] (limit model).
//! [`experiments`] couples them.

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod feed;
pub mod flow_sim;
pub mod packet_sim;
pub mod product_form;
pub mod rng;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
