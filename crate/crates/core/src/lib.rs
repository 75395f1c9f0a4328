//! Final stroke lesion prediction from multi-parametric MRI maps.
//!
//! Two learning blocks are chained:
//!
//! 1. Gaussian/NReLU restricted Boltzmann machines, one per group of parametric
//!    maps, generate per-voxel feature volumes. A handful of hidden units per
//!    machine is kept by fusing normalized mutual information with random-forest
//!    impurity importance ([`rbm`], [`selection`]).
//! 2. A 2D encoder-decoder network with long skip connections and two gated
//!    recurrent blocks (bidirectional LSTMs over a 2x2 partition) predicts the
//!    lesion slice by slice from the maps plus the selected features ([`nn`]).
//!
//! [`pipeline`] wires both blocks together with the preprocessing of
//! [`volume`], the connected-component post-processing and the evaluation
//! [`metrics`]. [`synth`] generates desk-scale cases for end-to-end runs.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rbm;
pub mod selection;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
