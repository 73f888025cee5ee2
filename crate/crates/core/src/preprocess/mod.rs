//! Scan-artefact correction, contrast normalisation and the optional
//! pre-filters that may run before binarisation.

mod cluster;
mod contrast;
mod filter;
mod level;

pub use cluster::{kmeans_quantize, meanshift_quantize, KMeansConfig, KMeansReport, MeanShiftConfig, MeanShiftReport};
pub use contrast::{normalize_contrast, NormalizationPolicy};
pub use filter::{gaussian_filter, gaussian_kernel, histogram_equalize};
pub use level::{align_columns, align_rows, detrend_poly, polynomial_fit_coefficients, row_offset_medians};

/// Rounds to the nearest integer with halves going up, then clamps to the
/// 8-bit range.
pub(crate) fn quantize(v: f64) -> u8 {
    let r = libm::floor(v + 0.5);
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}
