//! Cryptographic key distribution through watermarked compressive measurements.
//!
//! A server senses an object with a seeded binary matrix, hides a key
//! (the watermark) in the permuted measurements, and publishes the result. A
//! receiver holding the initial keys extracts the watermark from group
//! variances, restores the measurements and reconstructs the object by TV
//! minimisation; a degraded reconstruction reveals tampering.

pub mod attacks;
pub mod error;
pub mod evaluation;
pub mod keys;
pub mod metrics;
pub mod pgm;
pub mod protocol;
pub mod reconstruction;
pub mod rng;
pub mod sensing;
pub mod transport;
pub mod vectors;
pub mod watermark;

pub use error::{Error, Result};
