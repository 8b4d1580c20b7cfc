//! Wi-Fi CSI sensing pipeline: delay-Doppler decomposition of channel state
//! information into per-delay-bin velocity projections, a random-kernel
//! feature transform, and a set classifier that is invariant to the order
//! and repetition of its inputs.
//!
//! A synthetic multipath simulator provides ground truth for every stage.
//!
//! Stage overview:
//!
//! ```text
//! CsiFrame --sanitize--> CsiFrame --delay_doppler--> VelocitySet
//!          --features--> FeatureSet --classifier--> class probabilities
//! ```

pub mod classifier;
pub mod delay_doppler;
pub mod error;
pub mod features;
pub mod formats;
pub mod harness;
pub mod pipeline;
pub mod sanitize;
pub mod seed;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CsiFrame, FeatureRow, FeatureSet, Gesture, RadioConfig, SampleMeta, VelocitySet, VelocityVector, SPEED_OF_LIGHT,
};
