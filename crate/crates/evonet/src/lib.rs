//! Evolutionary synthesis of sparse convolutional networks.
//!
//! The library trains a dense ancestor classifier, then repeatedly breeds
//! offspring whose synaptic clusters and individual synapses survive at
//! random with probabilities tied to their learned strength and to scarcity
//! factors of the environment they are born into. Over generations this
//! yields progressively sparser networks whose accuracy/storage trade-off is
//! tracked by the experiment harness.
//!
//! Modules:
//! - [`dataio`]: IDX image/label loading and stratified subsetting.
//! - [`nn`]: the f64 network engine (forward, backprop, SGD) with mask-aware
//!   training.
//! - [`genome`]: the heritable representation, cluster partition, strength
//!   statistics, and on-disk formats.
//! - [`synthesis`]: mating and stochastic survival sampling.
//! - [`harness`]: lineages, sweeps, CSV export, and SVG plots.
//! - [`rng`]: deterministic seed derivation for independent random streams.

pub mod dataio;
pub mod genome;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod synthesis;
