//! Cross-modal selective self-training over precomputed embedding corpora.
//!
//! The crate covers the full selection and training path for building an
//! end-to-end spoken language understanding training set from speech-text
//! pairs collected outside the target domain:
//!
//! * [`corpus`] ingests and validates line-delimited embedding records, and
//!   generates seeded synthetic corpora for tests and demos.
//! * [`geometry`] holds the distance metrics, z-score normalization,
//!   covariance estimation and seeded k-means shared by every stage.
//! * [`textsim`] drops out-of-domain pairs by text-embedding distance to the
//!   nearest target-domain text centroid.
//! * [`mcss`] builds text, speech and semantic views, clusters the weighted
//!   joint representation and selects a balanced subset.
//! * [`diversity`] measures per-view entropy of a selection and provides the
//!   random and extreme sampling baselines.
//! * [`cmsn`] trains the cross-modal selective network with analytic
//!   gradients.
//! * [`pipeline`] wires the stages together from a single config file.

pub mod cmsn;
pub mod corpus;
pub mod diversity;
mod error;
pub mod geometry;
pub mod mcss;
pub mod pipeline;
pub mod seed;
pub mod textsim;

pub use error::{Error, Result};
