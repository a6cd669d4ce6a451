//! Pragmatic rate-distortion toolkit and a task-oriented collaborative
//! perception codec built on it.
//!
//! * [`infotheory`]: exact entropies and mutual informations over finite joint tables
//! * [`bayes_risk`]: Bayes risks of task losses and pragmatic distortion
//! * [`rd_oracle`]: exhaustive encoder enumeration against the minimal-rate bound
//! * [`vq_codec`]: base + residual vector quantization
//! * [`entropy_coder`]: confidence-weighted canonical Huffman coding and message bitstreams
//! * [`mi_estimator`]: discriminator-based mutual information estimation and redundancy masks
//! * [`simworld`]: synthetic multi-agent BEV occupancy worlds with exact posteriors
//! * [`pipeline`]: collaboration rounds, training and threshold sweeps

pub mod bayes_risk;
pub mod entropy_coder;
pub mod error;
pub mod grid;
pub mod infotheory;
pub mod mi_estimator;
pub mod pipeline;
pub mod rd_oracle;
pub mod simworld;
pub mod vq_codec;

pub use error::{Error, Result};
pub use grid::{FeatureGrid, Grid, Mask};
pub use infotheory::{Axis, InfoQuantity, JointTable, Units};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
