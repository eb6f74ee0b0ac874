//! Certified defense against adversarial patch attacks at desk scale.
//!
//! The pipeline: a patch-ensemble classifier with a small receptive field
//! turns an image into a grid of local class vectors ([`model`]); robust
//! masking aggregates that grid into a prediction that detects and removes
//! the window an adversarial patch could corrupt ([`aggregate`]); a sliding
//! window analysis certifies, per image, that no in-model patch attack can
//! change the prediction ([`certify`]); and the certificates are validated
//! empirically by a projected-gradient patch attack ([`attack`]) and
//! exhaustively by brute-force feature-space adversaries ([`oracle`]).

pub mod aggregate;
pub mod attack;
pub mod certify;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
