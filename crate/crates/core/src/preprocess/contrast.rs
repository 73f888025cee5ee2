//! Min-max contrast normalisation with optional outlier truncation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::quantize;
use crate::image::{GrayImage, HeightMap};
use crate::Error;

/// Which pixels take part in the min/max range.
///
/// `SigmaK` excludes everything further than `K` standard deviations from
/// the mean; excluded pixels are forced to 0 (below the mean) or 255
/// (above it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "String", into = "String")
)]
pub enum NormalizationPolicy {
    #[default]
    MinMax,
    Sigma1,
    Sigma2,
    Sigma3,
}

impl NormalizationPolicy {
    pub fn from_sigma(k: u8) -> Result<Self, Error> {
        match k {
            1 => Ok(Self::Sigma1),
            2 => Ok(Self::Sigma2),
            3 => Ok(Self::Sigma3),
            _ => Err(Error::param("sigma", "truncation must be none, 1, 2 or 3")),
        }
    }

    pub fn sigma(self) -> Option<f64> {
        match self {
            Self::MinMax => None,
            Self::Sigma1 => Some(1.0),
            Self::Sigma2 => Some(2.0),
            Self::Sigma3 => Some(3.0),
        }
    }
}

impl fmt::Display for NormalizationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sigma() {
            None => f.write_str("none"),
            Some(k) => write!(f, "{}", k as u8),
        }
    }
}

impl FromStr for NormalizationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "none" | "minmax" | "0" => Ok(Self::MinMax),
            other => other
                .parse::<u8>()
                .map_err(|_| Error::param("sigma", "truncation must be none, 1, 2 or 3"))
                .and_then(Self::from_sigma),
        }
    }
}

impl TryFrom<String> for NormalizationPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<NormalizationPolicy> for String {
    fn from(p: NormalizationPolicy) -> String {
        p.to_string()
    }
}

/// Maps heights onto 0..=255.
///
/// The retained range `[lo, hi]` maps linearly onto `[0, 255]` with halves
/// rounded up. A degenerate range (`lo == hi`) sends every retained pixel
/// to 0.
pub fn normalize_contrast(h: &HeightMap, policy: NormalizationPolicy) -> GrayImage {
    let data = h.data();
    let n = data.len().max(1) as f64;
    let (lower, upper) = match policy.sigma() {
        None => (f64::NEG_INFINITY, f64::INFINITY),
        Some(k) => {
            let mean = data.iter().sum::<f64>() / n;
            let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = libm::sqrt(var);
            (mean - k * s, mean + k * s)
        }
    };

    let (lo, hi) = data
        .iter()
        .filter(|&&v| v >= lower && v <= upper)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;

    let out: Vec<u8> = data
        .iter()
        .map(|&v| {
            if v < lower {
                0
            } else if v > upper {
                255
            } else if span > 0.0 {
                quantize((v - lo) / span * 255.0)
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(h.width(), h.height(), out).expect("same dimensions as input")
}
