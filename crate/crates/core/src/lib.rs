//! State-based retrieval for offline imitation learning from mixed-quality
//! demonstrations.
//!
//! The pipeline learns a latent world model over expert and offline data,
//! measures state similarity in that latent space, walks backward from
//! expert-like offline states to collect transitions that lead into the
//! expert distribution, and trains a Gaussian policy by weighted behavior
//! cloning on expert plus retrieved data.

pub mod dataset;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod retrieval;
pub mod similarity;
pub mod world_model;

pub use error::{Result, SbrError};
