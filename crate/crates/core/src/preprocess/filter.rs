//! Gaussian smoothing and histogram equalisation.

use alloc::vec;
use alloc::vec::Vec;

use super::quantize;
use crate::image::GrayImage;
use crate::{Error, Result};

/// Normalised 1-D Gaussian weights for offsets `-r..=r`, `r = size / 2`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::param("kernel_size", "must be odd and at least 3"));
    }
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    let r = (size / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    Ok(k)
}

/// Separable Gaussian blur with mirror-padded borders.
pub fn gaussian_filter(img: &GrayImage, kernel_size: usize, sigma: f64) -> Result<GrayImage> {
    let kernel = gaussian_kernel(kernel_size, sigma)?;
    let r = (kernel_size / 2) as isize;
    let (w, h) = img.dims();

    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                acc += wt * img.get_mirrored(x as isize + k as isize - r, y as isize) as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let out = GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for (k, wt) in kernel.iter().enumerate() {
            let yy = crate::image::mirror_index(y as isize + k as isize - r, h);
            acc += wt * tmp[yy * w + x];
        }
        quantize(acc)
    });
    Ok(out)
}

/// Classic CDF remapping:
/// `out = round(255 * (cdf(v) - cdf_min) / (N - cdf_min))`, where
/// `cdf_min` is the cumulative count at the darkest occupied level.
///
/// An image with a single intensity level has no spread to redistribute
/// and is returned unchanged.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let n = img.len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = match hist.iter().position(|&c| c > 0) {
        Some(i) => cdf[i],
        None => return img.clone(),
    };
    if n == cdf_min {
        return img.clone();
    }
    let denom = (n - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (l, &c) in lut.iter_mut().zip(cdf.iter()) {
        *l = quantize(255.0 * c.saturating_sub(cdf_min) as f64 / denom);
    }
    img.map(|v| lut[v as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn constant_image_survives_blur() {
        let g = GrayImage::filled(9, 7, 93);
        assert_eq!(gaussian_filter(&g, 5, 1.3).unwrap(), g);
    }

    #[test]
    fn impulse_centre_matches_analytic_weight() {
        let mut g = GrayImage::filled(7, 7, 0);
        g.set(3, 3, 255);
        let out = gaussian_filter(&g, 3, 1.0).unwrap();
        // Analytic normalised 3x3 kernel: the 1-D weights are
        // [e^-0.5, 1, e^-0.5] / (1 + 2 e^-0.5); the centre is its square.
        let e = (-0.5f64).exp();
        let centre = (1.0 / (1.0 + 2.0 * e)).powi(2);
        assert_eq!(out.get(3, 3), (255.0 * centre + 0.5).floor() as u8);
        let edge = centre * e;
        assert_eq!(out.get(2, 3), (255.0 * edge + 0.5).floor() as u8);
    }

    #[test]
    fn two_unit_blurs_approximate_one_root_two_blur() {
        let mut rng = Rng::new(21);
        let g = GrayImage::from_fn(40, 40, |_, _| rng.below(256) as u8);
        let twice = gaussian_filter(&gaussian_filter(&g, 9, 1.0).unwrap(), 9, 1.0).unwrap();
        let once = gaussian_filter(&g, 13, 2f64.sqrt()).unwrap();
        for (a, b) in twice.data().iter().zip(once.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 2, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_kernel() {
        let g = GrayImage::filled(4, 4, 0);
        assert!(gaussian_filter(&g, 4, 1.0).is_err());
        assert!(gaussian_filter(&g, 1, 1.0).is_err());
        assert!(gaussian_filter(&g, 3, 0.0).is_err());
    }

    #[test]
    fn two_level_image_equalizes_by_formula() {
        // cdf(10) = N/2 = cdf_min, cdf(20) = N, so the levels map to 0 and 255.
        let g = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 10 } else { 20 });
        let out = histogram_equalize(&g);
        let mut levels: Vec<u8> = out.data().to_vec();
        levels.sort();
        levels.dedup();
        assert_eq!(levels, vec![0, 255]);
    }

    #[test]
    fn uniform_ramp_is_fixed_point() {
        let g = GrayImage::from_fn(256, 4, |x, _| x as u8);
        let out = histogram_equalize(&g);
        for (a, b) in g.data().iter().zip(out.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn equalization_is_monotone() {
        let mut rng = Rng::new(4);
        let g = GrayImage::from_fn(30, 30, |_, _| (rng.below(120) + 40) as u8);
        let out = histogram_equalize(&g);
        for i in 0..g.len() {
            for j in 0..g.len() {
                if g.data()[i] < g.data()[j] {
                    assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }
}
