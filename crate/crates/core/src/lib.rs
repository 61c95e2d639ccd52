//! Walk-based image encoding of protein sequences, a compact dropout
//! classifier, and Monte Carlo dropout uncertainty analysis.
//!
//! The pipeline stages map onto modules:
//!
//! * [`seq`]: FASTA parsing, residue alphabet, class labels.
//! * [`encoder`] and [`corpus`]: the polar walk renderer and batch PNG output.
//! * [`dataset`]: length thresholds, length categories, stratified splits.
//! * [`classifier`]: the built-in CNN, training, evaluation metrics.
//! * [`mcd`]: stochastic forward passes, variance/entropy reports.
//! * [`synthetic`]: toy two-class corpora for smoke tests and demos.

pub mod classifier;
pub mod corpus;
pub mod dataset;
pub mod encoder;
pub mod mcd;
pub mod rng;
pub mod seq;
pub mod synthetic;

pub use encoder::{encode, AngleColorTable, EncodedImage, EncodingConfig};
pub use seq::{parse_fasta, ClassLabel, ProteinSequence, SanitizePolicy};
