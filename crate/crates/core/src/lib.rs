//! Seizure detection from multichannel scalp EEG.
//!
//! The pipeline turns raw recordings into per-second seizure decisions:
//!
//! 1. [`edf`] / [`synth`]: load EDF recordings (or generate labelled synthetic ones).
//! 2. [`prep`]: bipolar montage, 60 Hz notch, trimming around seizures and
//!    segmentation into 1 s blocks with 4 s / 32 s context windows.
//! 3. [`smile`]: per-block inter-channel mutual information, estimated with a
//!    small statistics network trained on the clipped Donsker-Varadhan objective.
//! 4. [`detector`]: a 1D CNN over the 4 s context fused with the MI vector
//!    through a logistic head, giving a soft seizure score per block.
//! 5. [`factor_graph`]: sum-product smoothing of the soft scores over a
//!    two-state Markov chain, then thresholded detection.
//! 6. [`metrics`], [`split`], [`pipeline`]: evaluation strategies, the six
//!    reported metrics and end-to-end orchestration.
//!
//! [`dependence`] holds the classical dependence measures (Pearson, distance
//! correlation, phase locking) used as comparison points for the MI features,
//! and [`nn`] is the small layer engine shared by both networks.

pub mod dependence;
pub mod detector;
pub mod edf;
pub mod error;
pub mod factor_graph;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prep;
pub mod rng;
pub mod smile;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
