//! Shortcut-learning audits from attribution maps.
//!
//! Attribution maps of a baseline (BA), test (TS) and sensitive-attribute
//! (SA) model are summarised per region, ranked per image, and aggregated
//! into dataset-level rank profiles. Correlations between the profiles
//! (pairwise, partial on a reference model, or deviation-based) measure how
//! strongly the test model's spatial reliance aligns with the
//! sensitive-attribute model once the baseline is accounted for. Permutation
//! tests and image-level bootstraps attach significance and uncertainty,
//! region contribution scores localise the evidence, and the combined score
//! map drives a test-time attenuation of penultimate features.

pub mod attenuation;
pub mod correlations;
pub mod error;
pub mod inference;
pub mod interchange;
pub mod partitioning;
pub mod pipeline;
pub mod rank_profiles;
pub mod rcs;
pub mod seed;
pub mod synth;

pub use correlations::{CorrelationResult, Kind, Method, Roles};
pub use error::{Error, Result};
pub use interchange::{AttributionMap, FeatureBundle, GroupLabels, Manifest, ModelTag};
pub use partitioning::Partition;
pub use rank_profiles::{Aggregation, RankMatrix, RankProfile, RankVector, Statistic};
