//! Line alignment and background levelling.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::HeightMap;
use crate::{Error, Result};

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of `row(y) - row(y - 1)` for every consecutive row pair.
pub fn row_offset_medians(h: &HeightMap) -> Vec<f64> {
    let mut diff = vec![0.0; h.width()];
    (1..h.height())
        .map(|y| {
            for ((d, a), b) in diff.iter_mut().zip(h.row(y)).zip(h.row(y - 1)) {
                *d = a - b;
            }
            median_in_place(&mut diff)
        })
        .collect()
}

/// Shifts each scan line so that the median difference to the line above
/// is zero.
///
/// Row 0 is the reference. Corrections accumulate from top to bottom: row
/// `y` is compared against the already-corrected row `y - 1`.
pub fn align_rows(h: &HeightMap) -> Result<HeightMap> {
    if h.height() < 2 {
        return Err(Error::param("height", "row alignment needs at least two rows"));
    }
    let w = h.width();
    let mut out = h.data().to_vec();
    let mut diff = vec![0.0; w];
    for y in 1..h.height() {
        let (above, rest) = out.split_at_mut(y * w);
        let prev = &above[(y - 1) * w..];
        let cur = &mut rest[..w];
        for ((d, a), b) in diff.iter_mut().zip(cur.iter()).zip(prev) {
            *d = a - b;
        }
        let offset = median_in_place(&mut diff);
        for v in cur.iter_mut() {
            *v -= offset;
        }
    }
    Ok(HeightMap::from_parts_unchecked(w, h.height(), out))
}

/// [`align_rows`] for data whose fast-scan axis runs down the columns.
pub fn align_columns(h: &HeightMap) -> Result<HeightMap> {
    Ok(align_rows(&h.transpose())?.transpose())
}

/// Orthonormal basis (over the pixel grid) spanning the monomials
/// `x^a y^b` with `a + b <= degree`.
///
/// Coordinates are rescaled to `[-1, 1]` before building the monomials;
/// that changes nothing about the spanned space but keeps Gram-Schmidt well
/// conditioned. Columns that turn out linearly dependent (e.g. `x` on a
/// one-pixel-wide map) are dropped.
fn orthonormal_poly_basis(width: usize, height: usize, degree: usize) -> Vec<Vec<f64>> {
    let scale = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    let n = width * height;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for total in 0..=degree {
        for b in 0..=total {
            let a = total - b;
            let mut col = Vec::with_capacity(n);
            for y in 0..height {
                let yv = libm::pow(scale(y, height), b as f64);
                for x in 0..width {
                    col.push(libm::pow(scale(x, width), a as f64) * yv);
                }
            }
            let original_norm = norm(&col);
            // Two sweeps of modified Gram-Schmidt.
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &col);
                    for (v, qv) in col.iter_mut().zip(q) {
                        *v -= c * qv;
                    }
                }
            }
            let nrm = norm(&col);
            if nrm > 1e-10 * original_norm.max(1.0) {
                col.iter_mut().for_each(|v| *v /= nrm);
                basis.push(col);
            }
        }
    }
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Coefficients of the least-squares fit of `h` onto the orthonormal
/// polynomial basis of total degree `degree`.
pub fn polynomial_fit_coefficients(h: &HeightMap, degree: usize) -> Vec<f64> {
    orthonormal_poly_basis(h.width(), h.height(), degree)
        .iter()
        .map(|q| dot(q, h.data()))
        .collect()
}

/// Subtracts the least-squares polynomial background of total degree
/// `degree` (the default used elsewhere is 3).
pub fn detrend_poly(h: &HeightMap, degree: usize) -> Result<HeightMap> {
    if degree < 1 {
        return Err(Error::param("degree", "polynomial degree must be at least 1"));
    }
    let basis = orthonormal_poly_basis(h.width(), h.height(), degree);
    let mut out = h.data().to_vec();
    for q in &basis {
        let c = dot(q, &out);
        for (v, qv) in out.iter_mut().zip(q) {
            *v -= c * qv;
        }
    }
    Ok(HeightMap::from_parts_unchecked(h.width(), h.height(), out))
}
