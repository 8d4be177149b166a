//! The 107-feature radiomics vector.
//!
//! Families and counts, in canonical order: shape (14), first-order (18),
//! GLCM (24), GLRLM (16), GLSZM (16), GLDM (14), NGTDM (5). Feature names are
//! `<family>_<Feature>`, e.g. `glcm_Contrast`. Texture families share one
//! fixed-bin-count discretization of the ROI.

pub mod discretize;
pub mod firstorder;
pub mod glcm;
pub mod gldm;
pub mod glrlm;
pub mod glszm;
pub mod ngtdm;
mod scaler;
pub mod shape;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use discretize::{discretize, DiscretizedRoi, DEFAULT_BIN_COUNT};
pub use glcm::glcm_features;
pub use gldm::gldm_features;
pub use glrlm::glrlm_features;
pub use glszm::glszm_features;
pub use ngtdm::ngtdm_features;
pub use scaler::{signed_log1p, FeatureScaler};
pub use shape::shape_features;

use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

/// Total number of features per contrast.
pub const FEATURE_COUNT: usize = 107;

/// Family prefixes with their feature names, in canonical order.
pub const FAMILIES: [(&str, &[&str]); 7] = [
    ("shape", &shape::NAMES),
    ("firstorder", &firstorder::NAMES),
    ("glcm", &glcm::NAMES),
    ("glrlm", &glrlm::NAMES),
    ("glszm", &glszm::NAMES),
    ("gldm", &gldm::NAMES),
    ("ngtdm", &ngtdm::NAMES),
];

/// `a / b`, or 0 when `b` is 0.
#[inline]
pub(crate) fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// `p * log2(p)` with the `0 * log 0 = 0` convention.
#[inline]
pub(crate) fn xlog2x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Canonical `<family>_<Feature>` names, 107 entries.
pub fn feature_names() -> Vec<String> {
    FAMILIES
        .iter()
        .flat_map(|(fam, names)| names.iter().map(move |n| format!("{fam}_{n}")))
        .collect()
}

/// Image contrast a feature vector was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    T1,
    T2,
}

impl Contrast {
    pub fn prefix(self) -> &'static str {
        match self {
            Contrast::T1 => "t1",
            Contrast::T2 => "t2",
        }
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Contrast {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Contrast::T1),
            "t2" => Ok(Contrast::T2),
            other => Err(Error::InvalidInput(format!("unknown contrast {other:?}"))),
        }
    }
}

/// Named radiomics features of one ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub contrast: Option<Contrast>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn with_contrast(mut self, c: Contrast) -> Self {
        self.contrast = Some(c);
        self
    }
}

/// First-order statistics with the default bin count.
pub fn firstorder_features(v: &Volume, m: &Mask) -> Result<[f64; 18]> {
    let values = v.masked_values(m)?;
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(firstorder::firstorder_from_values(&values, DEFAULT_BIN_COUNT))
}

/// All 93 intensity and texture features of an already discretized ROI, in
/// canonical order (first-order, GLCM, GLRLM, GLSZM, GLDM, NGTDM).
pub fn intensity_texture_features(values: &[f64], d: &DiscretizedRoi) -> Vec<f64> {
    let mut out = Vec::with_capacity(93);
    out.extend(firstorder::firstorder_from_values(values, d.ng()));
    out.extend(glcm_features(d));
    out.extend(glrlm_features(d));
    out.extend(glszm_features(d));
    out.extend(gldm_features(d));
    out.extend(ngtdm_features(d));
    out
}

/// Compute the full 107-entry vector. The ROI is cropped to the mask's
/// bounding box first, which does not change any feature.
pub fn extract_feature_vector(v: &Volume, m: &Mask, ng: usize) -> Result<FeatureVector> {
    v.ensure_same_geometry(m)?;
    let roi = m.bounding_box(0)?;
    let v = v.crop(&roi)?;
    let m = m.crop(&roi)?;
    let values = v.masked_values(&m)?;
    let d = discretize(&v, &m, ng)?;
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    out.extend(shape_features(&m)?);
    out.extend(intensity_texture_features(&values, &d));
    debug_assert_eq!(out.len(), FEATURE_COUNT);
    if let Some(i) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "feature {} is not finite",
            feature_names()[i]
        )));
    }
    Ok(FeatureVector {
        names: feature_names(),
        values: out,
        contrast: None,
    })
}
