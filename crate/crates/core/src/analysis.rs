//! Minkowski functionals, pixel-change robustness and threshold sweeps.

use alloc::string::String;
use alloc::vec::Vec;

use crate::augment::{apply_noise, NoiseKind, NoiseSpec};
use crate::image::{ensure_same_dims, BinaryMask, GrayImage};
use crate::rng::derive_seed;
use crate::segment::{threshold_fixed, Segmenter};
use crate::{Error, Result};

/// Area, perimeter and Euler characteristic of a mask, with each true
/// pixel taken as a closed unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinkowskiTriple {
    pub area: u64,
    pub perimeter: u64,
    pub euler: i64,
    pub total_pixels: u64,
}

impl MinkowskiTriple {
    fn norm(&self, v: f64) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            v / self.total_pixels as f64
        }
    }

    pub fn area_normalized(&self) -> f64 {
        self.norm(self.area as f64)
    }

    pub fn perimeter_normalized(&self) -> f64 {
        self.norm(self.perimeter as f64)
    }

    pub fn euler_normalized(&self) -> f64 {
        self.norm(self.euler as f64)
    }
}

/// Counts `V - E + F` over the union of the true squares.
///
/// A lattice vertex is present if any of its four neighbouring pixels is
/// true, a unit edge if either of its two pixels is. The perimeter is the
/// number of edges with exactly one true pixel (pixels outside the image
/// count as false). The resulting Euler number equals 8-connected
/// components minus 4-connected holes.
pub fn minkowski(m: &BinaryMask) -> MinkowskiTriple {
    let (w, h) = m.dims();
    let at = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && m.get(x as usize, y as usize)
    };

    let mut vertices = 0i64;
    for j in 0..=h as isize {
        for i in 0..=w as isize {
            if at(i - 1, j - 1) || at(i, j - 1) || at(i - 1, j) || at(i, j) {
                vertices += 1;
            }
        }
    }

    let mut edges = 0i64;
    let mut perimeter = 0u64;
    // Horizontal edges: pixel above (i, j-1) and below (i, j).
    for j in 0..=h as isize {
        for i in 0..w as isize {
            let (a, b) = (at(i, j - 1), at(i, j));
            edges += (a || b) as i64;
            perimeter += (a != b) as u64;
        }
    }
    // Vertical edges: pixel left (i-1, j) and right (i, j).
    for j in 0..h as isize {
        for i in 0..=w as isize {
            let (a, b) = (at(i - 1, j), at(i, j));
            edges += (a || b) as i64;
            perimeter += (a != b) as u64;
        }
    }

    let area = m.count_true() as u64;
    MinkowskiTriple {
        area,
        perimeter,
        euler: vertices - edges + area as i64,
        total_pixels: (w * h) as u64,
    }
}

/// Hamming distance over pixel count.
pub fn pixel_change_fraction(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Splits an image into its four quadrants (top-left, top-right,
/// bottom-left, bottom-right) and scales each back to full size by pixel
/// doubling.
pub fn quadrant_rescale(img: &GrayImage) -> Result<[GrayImage; 4]> {
    let (w, h) = img.dims();
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(Error::param("image", "quadrant rescaling needs even, non-zero dimensions"));
    }
    let (hw, hh) = (w / 2, h / 2);
    let quad = |x0: usize, y0: usize| GrayImage::from_fn(w, h, |x, y| img.get(x0 + x / 2, y0 + y / 2));
    Ok([quad(0, 0), quad(hw, 0), quad(0, hh), quad(hw, hh)])
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensitivityRow {
    pub method: String,
    pub noise: NoiseKind,
    /// Mean of `|euler(noisy) - euler(clean)|`.
    pub euler_mean_abs_diff: f64,
    /// Mean `|area(noisy) - area(clean)|` over the mean clean area.
    pub area_relative_diff: f64,
    /// Same reading for the perimeter.
    pub perimeter_relative_diff: f64,
}

/// Note attached to sensitivity outputs: how "difference relative to the
/// mean" is read.
pub const SENSITIVITY_NOTE: &str =
    "area/perimeter: mean |noisy - clean| divided by the mean clean statistic; euler: mean |noisy - clean|";

fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Noise spec for image `i` of a study: same kind and strength, per-image
/// seed.
pub fn study_noise(spec: &NoiseSpec, image_index: usize) -> NoiseSpec {
    NoiseSpec {
        seed: derive_seed(spec.seed, image_index as u64),
        ..spec.clone()
    }
}

/// How much each noise kind perturbs the Minkowski numbers of each
/// method's segmentation.
pub fn noise_sensitivity_study(
    clean: &[GrayImage],
    methods: &[&dyn Segmenter],
    noises: &[NoiseSpec],
    streak_mask: Option<&GrayImage>,
) -> Result<Vec<SensitivityRow>> {
    let n = clean.len().max(1) as f64;
    let mut rows = Vec::new();
    for method in methods {
        let base: Vec<MinkowskiTriple> = clean
            .iter()
            .map(|img| method.segment(img).map(|m| minkowski(&m)))
            .collect::<Result<_>>()?;
        let mean_area = base.iter().map(|t| t.area as f64).sum::<f64>() / n;
        let mean_perim = base.iter().map(|t| t.perimeter as f64).sum::<f64>() / n;
        for spec in noises {
            let (mut de, mut da, mut dp) = (0.0, 0.0, 0.0);
            for (i, (img, b)) in clean.iter().zip(&base).enumerate() {
                let noisy = apply_noise(img, &study_noise(spec, i), streak_mask)?;
                let t = minkowski(&method.segment(&noisy)?);
                de += (t.euler - b.euler).unsigned_abs() as f64;
                da += t.area.abs_diff(b.area) as f64;
                dp += t.perimeter.abs_diff(b.perimeter) as f64;
            }
            rows.push(SensitivityRow {
                method: method.name(),
                noise: spec.kind,
                euler_mean_abs_diff: de / n,
                area_relative_diff: relative(da / n, mean_area),
                perimeter_relative_diff: relative(dp / n, mean_perim),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessReport {
    pub method: String,
    pub noise: NoiseKind,
    pub rescaled: bool,
    pub mean_fraction: f64,
    pub per_image: Vec<f64>,
}

/// Pixel-change fraction between the segmentation of one clean image and
/// of its noisy copy. With `rescale`, both are split into pixel-doubled
/// quadrants first and the four fractions averaged.
pub fn image_change_fraction(
    method: &dyn Segmenter,
    clean: &GrayImage,
    noisy: &GrayImage,
    rescale: bool,
) -> Result<f64> {
    if !rescale {
        return pixel_change_fraction(&method.segment(clean)?, &method.segment(noisy)?);
    }
    let qc = quadrant_rescale(clean)?;
    let qn = quadrant_rescale(noisy)?;
    let mut sum = 0.0;
    for (c, n) in qc.iter().zip(&qn) {
        sum += pixel_change_fraction(&method.segment(c)?, &method.segment(n)?)?;
    }
    Ok(sum / 4.0)
}

/// Mean pixel-change fraction per (method, noise) over an image set.
pub fn robustness_study(
    images: &[GrayImage],
    methods: &[&dyn Segmenter],
    noises: &[NoiseSpec],
    rescale: bool,
    streak_mask: Option<&GrayImage>,
) -> Result<Vec<RobustnessReport>> {
    let noisy: Vec<Vec<GrayImage>> = noises
        .iter()
        .map(|spec| {
            images
                .iter()
                .enumerate()
                .map(|(i, img)| apply_noise(img, &study_noise(spec, i), streak_mask))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for method in methods {
        for (spec, set) in noises.iter().zip(&noisy) {
            let per_image = images
                .iter()
                .zip(set)
                .map(|(c, n)| image_change_fraction(*method, c, n, rescale))
                .collect::<Result<Vec<f64>>>()?;
            let mean_fraction = if per_image.is_empty() {
                0.0
            } else {
                per_image.iter().sum::<f64>() / per_image.len() as f64
            };
            out.push(RobustnessReport {
                method: method.name(),
                noise: spec.kind,
                rescaled: rescale,
                mean_fraction,
                per_image,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepRow {
    pub threshold: u8,
    pub minkowski: MinkowskiTriple,
}

/// Fixed-threshold segmentation and Minkowski numbers at each threshold,
/// in the order given.
pub fn threshold_sweep(img: &GrayImage, thresholds: &[u8]) -> Vec<SweepRow> {
    thresholds
        .iter()
        .map(|&t| SweepRow {
            threshold: t,
            minkowski: minkowski(&threshold_fixed(img, t)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{Classical, LocalMeanConfig, Method};
    use crate::Rng;
    use alloc::vec;
    use std::collections::VecDeque;

    /// 8-connected components (union-find) minus 4-connected holes
    /// (background regions not reaching the border, found by BFS on a
    /// padded grid).
    fn euler_oracle(m: &BinaryMask) -> i64 {
        let (w, h) = m.dims();
        let mut parent: Vec<usize> = (0..w * h).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for y in 0..h {
            for x in 0..w {
                if !m.get(x, y) {
                    continue;
                }
                for (dx, dy) in [(1isize, 0isize), (0, 1), (1, 1), (-1, 1)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && (nx as usize) < w && (ny as usize) < h && m.get(nx as usize, ny as usize) {
                        let a = find(&mut parent, y * w + x);
                        let b = find(&mut parent, ny as usize * w + nx as usize);
                        parent[a] = b;
                    }
                }
            }
        }
        let mut comps = 0i64;
        for i in 0..w * h {
            if m.data()[i] && find(&mut parent, i) == i {
                comps += 1;
            }
        }

        let (pw, ph) = (w + 2, h + 2);
        let bg = |x: usize, y: usize| x == 0 || y == 0 || x == pw - 1 || y == ph - 1 || !m.get(x - 1, y - 1);
        let mut seen = vec![false; pw * ph];
        let mut regions = 0i64;
        for sy in 0..ph {
            for sx in 0..pw {
                if seen[sy * pw + sx] || !bg(sx, sy) {
                    continue;
                }
                regions += 1;
                seen[sy * pw + sx] = true;
                let mut q = VecDeque::from([(sx, sy)]);
                while let Some((x, y)) = q.pop_front() {
                    for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx as usize >= pw || ny as usize >= ph {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !seen[ny * pw + nx] && bg(nx, ny) {
                            seen[ny * pw + nx] = true;
                            q.push_back((nx, ny));
                        }
                    }
                }
            }
        }
        // The outer region is always present thanks to the padding.
        comps - (regions - 1)
    }

    fn random_mask(seed: u64, w: usize, h: usize, p: f64) -> BinaryMask {
        let mut rng = Rng::new(seed);
        BinaryMask::from_fn(w, h, |_, _| rng.next_f64() < p)
    }

    #[test]
    fn single_pixel() {
        let mut m = BinaryMask::filled(3, 3, false);
        m.set(1, 1, true);
        let t = minkowski(&m);
        assert_eq!((t.area, t.perimeter, t.euler), (1, 4, 1));
    }

    #[test]
    fn ring_has_no_euler() {
        let m = BinaryMask::from_fn(3, 3, |x, y| !(x == 1 && y == 1));
        let t = minkowski(&m);
        assert_eq!((t.area, t.perimeter, t.euler), (8, 16, 0));
    }

    #[test]
    fn empty_mask() {
        let t = minkowski(&BinaryMask::filled(5, 4, false));
        assert_eq!((t.area, t.perimeter, t.euler), (0, 0, 0));
    }

    #[test]
    fn diagonal_pixels_touch() {
        let m = BinaryMask::from_fn(2, 2, |x, y| x == y);
        assert_eq!(minkowski(&m).euler, 1);
        assert_eq!(euler_oracle(&m), 1);
    }

    #[test]
    fn exhaustive_4x4_against_oracle() {
        for bits in 0u32..1 << 16 {
            let m = BinaryMask::from_fn(4, 4, |x, y| bits >> (y * 4 + x) & 1 == 1);
            assert_eq!(minkowski(&m).euler, euler_oracle(&m), "bits {bits:#06x}");
        }
    }

    #[test]
    fn random_32x32_against_oracle() {
        for seed in 0..500 {
            let p = 0.2 + 0.6 * (seed % 7) as f64 / 6.0;
            let m = random_mask(seed, 32, 32, p);
            assert_eq!(minkowski(&m).euler, euler_oracle(&m), "seed {seed}");
        }
    }

    #[test]
    fn euler_is_additive_for_separated_masks() {
        let a = random_mask(1, 10, 10, 0.5);
        let b = random_mask(2, 10, 10, 0.5);
        let joined = BinaryMask::from_fn(22, 10, |x, y| match x {
            0..=9 => a.get(x, y),
            12..=21 => b.get(x - 12, y),
            _ => false,
        });
        assert_eq!(minkowski(&joined).euler, minkowski(&a).euler + minkowski(&b).euler);
    }

    #[test]
    fn complement_areas_sum() {
        let m = random_mask(3, 17, 11, 0.4);
        assert_eq!(minkowski(&m).area + minkowski(&m.complement()).area, 17 * 11);
    }

    #[test]
    fn change_fraction_metric() {
        let a = random_mask(4, 20, 20, 0.5);
        let b = random_mask(5, 20, 20, 0.5);
        let c = random_mask(6, 20, 20, 0.5);
        assert_eq!(pixel_change_fraction(&a, &a).unwrap(), 0.0);
        assert_eq!(pixel_change_fraction(&a, &a.complement()).unwrap(), 1.0);
        let ab = pixel_change_fraction(&a, &b).unwrap();
        assert_eq!(ab, pixel_change_fraction(&b, &a).unwrap());
        let bc = pixel_change_fraction(&b, &c).unwrap();
        assert!(pixel_change_fraction(&a, &c).unwrap() <= ab + bc + 1e-12);
        assert!(pixel_change_fraction(&a, &BinaryMask::filled(3, 3, true)).is_err());
    }

    #[test]
    fn quadrants() {
        let mut rng = Rng::new(7);
        let img = GrayImage::from_fn(8, 6, |_, _| rng.below(256) as u8);
        let q = quadrant_rescale(&img).unwrap();
        for (k, (x0, y0)) in [(0, 0), (4, 0), (0, 3), (4, 3)].into_iter().enumerate() {
            assert_eq!(q[k].dims(), (8, 6));
            for y in 0..3 {
                for x in 0..4 {
                    assert_eq!(q[k].get(2 * x, 2 * y), img.get(x0 + x, y0 + y));
                }
            }
        }
        let flat = quadrant_rescale(&GrayImage::filled(4, 4, 9)).unwrap();
        assert!(flat.iter().all(|g| *g == GrayImage::filled(4, 4, 9)));
        assert_eq!(quadrant_rescale(&GrayImage::filled(512, 512, 0)).unwrap()[3].dims(), (512, 512));
        assert!(quadrant_rescale(&GrayImage::filled(5, 4, 0)).is_err());
    }

    #[test]
    fn sweep_rows() {
        let mut rng = Rng::new(8);
        let img = GrayImage::from_fn(30, 30, |_, _| rng.below(256) as u8);
        let rows = threshold_sweep(&img, &[105, 115, 125, 135]);
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[0].minkowski.area >= w[1].minkowski.area));
        let full = threshold_sweep(&img, &[0, 0]);
        assert_eq!(full[0].minkowski.area, 900);
        assert_eq!(full[0].minkowski.euler, 1);
        assert_eq!(full[0], full[1]);
    }

    fn methods() -> (Classical, Classical, Classical) {
        (
            Classical::new(Method::GlobalMean),
            Classical::new(Method::LocalMean(LocalMeanConfig::default())),
            Classical::new(Method::Otsu),
        )
    }

    #[test]
    fn zero_noise_changes_nothing() {
        let imgs: Vec<GrayImage> = (0..3)
            .map(|s| {
                let mut rng = Rng::new(s);
                GrayImage::from_fn(16, 16, |_, _| rng.below(256) as u8)
            })
            .collect();
        let (g, l, o) = methods();
        let ms: [&dyn Segmenter; 3] = [&g, &l, &o];
        let noises = [
            NoiseSpec::new(NoiseKind::Stripes).with_amplitude(0.0),
            NoiseSpec::new(NoiseKind::Banding).with_amplitude(0.0),
        ];
        for r in robustness_study(&imgs, &ms, &noises, false, None).unwrap() {
            assert_eq!(r.mean_fraction, 0.0);
        }
        for r in robustness_study(&imgs, &ms, &noises, true, None).unwrap() {
            assert_eq!(r.mean_fraction, 0.0);
        }
        for r in noise_sensitivity_study(&imgs, &ms, &noises, None).unwrap() {
            assert_eq!(r.euler_mean_abs_diff, 0.0);
            assert_eq!(r.area_relative_diff, 0.0);
            assert_eq!(r.perimeter_relative_diff, 0.0);
        }
    }

    #[test]
    fn sensitivity_matches_recomputation() {
        let imgs: Vec<GrayImage> = (10..14)
            .map(|s| {
                let mut rng = Rng::new(s);
                GrayImage::from_fn(20, 20, |_, _| rng.below(256) as u8)
            })
            .collect();
        let otsu = Classical::new(Method::Otsu);
        let spec = NoiseSpec::new(NoiseKind::Stripes).with_amplitude(60.0).with_seed(3);
        let row = &noise_sensitivity_study(&imgs, &[&otsu], core::slice::from_ref(&spec), None).unwrap()[0];

        let clean: Vec<MinkowskiTriple> = imgs.iter().map(|i| minkowski(&otsu.segment(i).unwrap())).collect();
        let noisy: Vec<MinkowskiTriple> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| minkowski(&otsu.segment(&apply_noise(img, &study_noise(&spec, i), None).unwrap()).unwrap()))
            .collect();
        let n = imgs.len() as f64;
        let e: f64 = clean.iter().zip(&noisy).map(|(a, b)| (a.euler - b.euler).abs() as f64).sum::<f64>() / n;
        let a: f64 = clean.iter().zip(&noisy).map(|(a, b)| (a.area as f64 - b.area as f64).abs()).sum::<f64>() / n;
        let mean_a = clean.iter().map(|t| t.area as f64).sum::<f64>() / n;
        assert_eq!(row.euler_mean_abs_diff, e);
        assert!((row.area_relative_diff - a / mean_a).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rotation_and_flip_invariance(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
                let m = random_mask(seed, w, h, 0.5);
                let t = minkowski(&m);
                for r in [m.rotate90(), m.flip_horizontal(), m.flip_vertical()] {
                    let u = minkowski(&r);
                    prop_assert_eq!((t.area, t.perimeter, t.euler), (u.area, u.perimeter, u.euler));
                }
            }

            #[test]
            fn euler_matches_oracle(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, p in 0.0f64..1.0) {
                let m = random_mask(seed, w, h, p);
                prop_assert_eq!(minkowski(&m).euler, euler_oracle(&m));
            }
        }
    }
}
