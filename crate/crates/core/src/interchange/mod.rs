//! On-disk data model: manifests, attribution arrays, feature bundles and
//! group labels, plus attribution preprocessing.

pub mod features;
pub mod manifest;
pub mod npy;
pub mod report;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::FeatureBundle;
pub use manifest::{load_manifest, GroupLabels, ImageEntry, Manifest, MANIFEST_VERSION};
pub use report::{write_report, ReportBundle};

/// Role of a model in the audited triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelTag {
    /// Baseline trained on attribute-balanced data.
    BA,
    /// Test model under audit.
    TS,
    /// Sensitive-attribute classifier.
    SA,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::BA, ModelTag::TS, ModelTag::SA];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::BA => "BA",
            ModelTag::TS => "TS",
            ModelTag::SA => "SA",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BA" => Ok(ModelTag::BA),
            "TS" => Ok(ModelTag::TS),
            "SA" => Ok(ModelTag::SA),
            _ => Err(Error::BadConfig(format!("unknown model tag {s:?}"))),
        }
    }
}

/// A per-image attribution map for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub image_id: String,
    pub model: ModelTag,
    pub values: ArrayD<f64>,
}

impl AttributionMap {
    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// Clamp negatives to zero, then divide by the total mass.
    #[default]
    ReluL1,
    /// Divide by the sum of absolute values.
    L1Only,
    None,
}

impl FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu_l1" => Ok(PreprocessMode::ReluL1),
            "l1_only" => Ok(PreprocessMode::L1Only),
            "none" => Ok(PreprocessMode::None),
            _ => Err(Error::BadConfig(format!("unknown preprocess mode {s:?}"))),
        }
    }
}

/// Applies attribution preprocessing in place.
///
/// Fails with [`Error::DegenerateMap`] when nothing is left to normalise.
pub fn preprocess_in_place(values: &mut ArrayD<f64>, mode: PreprocessMode) -> Result<()> {
    if mode == PreprocessMode::ReluL1 {
        values.mapv_inplace(|v| v.max(0.0));
    }
    if mode == PreprocessMode::None {
        return Ok(());
    }
    let mass: f64 = values.iter().map(|v| v.abs()).sum();
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::DegenerateMap);
    }
    values.mapv_inplace(|v| v / mass);
    Ok(())
}

pub fn preprocess_map(raw: &ArrayD<f64>, mode: PreprocessMode) -> Result<ArrayD<f64>> {
    let mut out = raw.clone();
    preprocess_in_place(&mut out, mode)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};
    use proptest::prelude::*;

    fn vec_map(v: &[f64]) -> ArrayD<f64> {
        arr1(v).into_dyn()
    }

    #[test]
    fn relu_l1_clamps_then_normalises() {
        let out = preprocess_map(&vec_map(&[-1.0, 1.0, 3.0]), PreprocessMode::ReluL1).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[0.0, 0.25, 0.75]);
    }

    #[test]
    fn zero_mass_is_degenerate() {
        let err = preprocess_map(&vec_map(&[0.0, 0.0, 0.0]), PreprocessMode::ReluL1);
        assert!(matches!(err, Err(Error::DegenerateMap)));
        let err = preprocess_map(&vec_map(&[-1.0, -3.0]), PreprocessMode::ReluL1);
        assert!(matches!(err, Err(Error::DegenerateMap)));
    }

    #[test]
    fn l1_only_keeps_sign() {
        let out = preprocess_map(&vec_map(&[2.0, 2.0]), PreprocessMode::L1Only).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[0.5, 0.5]);
        let out = preprocess_map(&vec_map(&[-1.0, 3.0]), PreprocessMode::L1Only).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[-0.25, 0.75]);
    }

    #[test]
    fn none_is_identity() {
        let raw = vec_map(&[-1.0, 5.0]);
        assert_eq!(preprocess_map(&raw, PreprocessMode::None).unwrap(), raw);
    }

    #[test]
    fn model_tags_parse() {
        assert_eq!("ts".parse::<ModelTag>().unwrap(), ModelTag::TS);
        assert!("XX".parse::<ModelTag>().is_err());
    }

    proptest! {
        #[test]
        fn relu_l1_output_is_a_probability_vector(
            values in proptest::collection::vec(-10.0f64..10.0, 1..64)
        ) {
            prop_assume!(values.iter().any(|&v| v > 0.0));
            let raw = ArrayD::from_shape_vec(IxDyn(&[values.len()]), values).unwrap();
            let out = preprocess_map(&raw, PreprocessMode::ReluL1).unwrap();
            prop_assert!(out.iter().all(|&v| v >= 0.0));
            prop_assert!((out.sum() - 1.0).abs() <= 1e-9);
            // idempotent up to rounding
            let again = preprocess_map(&out, PreprocessMode::ReluL1).unwrap();
            for (a, b) in again.iter().zip(out.iter()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}
