//! Social recommendation for users with few interactions.
//!
//! Users and items are embedded by a graph encoder over the interaction
//! graph. The social graph is then refined per user: dissimilar friends are
//! dropped and links to representative users of item clusters are added.
//! A contrastive mimic loss teaches the model to place sparse users near the
//! representative of the interests they resemble.

pub mod ablation;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gsl;
pub mod mimic;
pub mod model;
pub mod tape;
pub mod training;

pub use error::{LsirError, Result};
