//! Classical binarisation and despeckling.
//!
//! Every threshold uses the same boundary convention: a pixel at or above
//! the threshold is foreground.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{mirror_index, BinaryMask, GrayImage};
use crate::{Error, Result};

/// Anything that turns a gray image into a foreground mask.
pub trait Segmenter {
    /// Short identifier used in reports, e.g. `otsu+despeckle`.
    fn name(&self) -> String;
    fn segment(&self, img: &GrayImage) -> Result<BinaryMask>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalMeanConfig {
    /// Side of the square window, odd and at least 3.
    pub window: usize,
    /// Added to the local mean before comparing.
    pub offset_c: i32,
}

impl Default for LocalMeanConfig {
    fn default() -> Self {
        Self {
            window: 15,
            offset_c: 0,
        }
    }
}

impl LocalMeanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::param("window", "local-mean window must be odd and at least 3"));
        }
        Ok(())
    }
}

pub fn threshold_global_mean(img: &GrayImage) -> BinaryMask {
    let n = img.len() as u64;
    let sum: u64 = img.data().iter().map(|&v| v as u64).sum();
    let data = img.data().iter().map(|&v| v as u64 * n >= sum).collect();
    BinaryMask::new(img.width(), img.height(), data).expect("same dims")
}

/// Window sums along one axis of length `n` for every position, plus the
/// number of samples each sum covers.
///
/// Windows shorter than `2n + 1` read mirror-padded samples. A window of
/// `2n + 1` or more would wrap the reflection more than once; it is treated
/// as covering the whole axis instead.
fn axis_window_sums(line: &[u64], window: usize, out: &mut [u64]) -> u64 {
    let n = line.len();
    if window >= 2 * n + 1 {
        let total: u64 = line.iter().sum();
        out.iter_mut().for_each(|o| *o = total);
        return n as u64;
    }
    let r = (window / 2) as isize;
    let mut prefix = Vec::with_capacity(n + window + 1);
    prefix.push(0u64);
    let mut acc = 0;
    for i in -r..(n as isize + r) {
        acc += line[mirror_index(i, n)];
        prefix.push(acc);
    }
    for (x, o) in out.iter_mut().enumerate() {
        *o = prefix[x + window] - prefix[x];
    }
    window as u64
}

/// Adaptive threshold against the mean of a mirror-padded window.
pub fn threshold_local_mean(img: &GrayImage, cfg: &LocalMeanConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let mut rows = vec![0u64; w * h];
    let mut line = vec![0u64; w];
    let mut count_x = 1;
    for y in 0..h {
        for x in 0..w {
            line[x] = img.get(x, y) as u64;
        }
        count_x = axis_window_sums(&line, cfg.window, &mut rows[y * w..(y + 1) * w]);
    }
    let mut col = vec![0u64; h];
    let mut col_out = vec![0u64; h];
    let mut out = BinaryMask::filled(w, h, false);
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        let count_y = axis_window_sums(&col, cfg.window, &mut col_out);
        let area = (count_x * count_y) as i64;
        for y in 0..h {
            let v = img.get(x, y) as i64;
            out.set(x, y, v * area >= col_out[y] as i64 + cfg.offset_c as i64 * area);
        }
    }
    Ok(out)
}

/// 256x128-bit product as (high, low) halves.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & mask);
    let (b_hi, b_lo) = (b >> 64, b & mask);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & mask) + (hl & mask);
    let lo = (ll & mask) | (mid << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (hi, lo)
}

/// Between-class variance up to the constant factor `1 / N^2`, held as an
/// exact fraction `num / den`.
#[derive(Clone, Copy)]
struct Variance {
    num: u128,
    den: u128,
}

impl Variance {
    fn greater_than(&self, other: &Variance) -> bool {
        mul_wide(self.num, other.den) > mul_wide(other.num, self.den)
    }
}

/// Otsu's method on the 256-bin histogram.
///
/// Class 0 holds intensities below `t`, class 1 the rest, matching the
/// `pixel >= t` foreground rule. The between-class variance
/// `w0 * w1 * (mu0 - mu1)^2` is compared in exact integer arithmetic, so
/// ties are genuine and resolve to the smallest `t`. A constant image has no
/// separating threshold; it returns `t = 0` with everything foreground.
pub fn threshold_otsu(img: &GrayImage) -> (BinaryMask, u8) {
    let t = otsu_level(img);
    (threshold_fixed(img, t), t)
}

pub fn otsu_level(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let n: u64 = hist.iter().sum();
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    let mut best_t = 0u8;
    let mut best = Variance { num: 0, den: 1 };
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 1..256usize {
        n0 += hist[t - 1];
        s0 += (t as u64 - 1) * hist[t - 1];
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total - s0;
        // w0 w1 (mu0 - mu1)^2 = (n1 s0 - n0 s1)^2 / (N^2 n0 n1)
        let d = (n1 as i128 * s0 as i128 - n0 as i128 * s1 as i128).unsigned_abs();
        let cand = Variance {
            num: d * d,
            den: n0 as u128 * n1 as u128,
        };
        if cand.greater_than(&best) {
            best = cand;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn threshold_fixed(img: &GrayImage, t: u8) -> BinaryMask {
    let data = img.data().iter().map(|&v| v >= t).collect();
    BinaryMask::new(img.width(), img.height(), data).expect("same dims")
}

/// 3x3 majority filter (the median of a boolean neighbourhood) with
/// mirror-padded borders.
pub fn despeckle(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let mut count = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if m.get_mirrored(x as isize + dx, y as isize + dy) {
                    count += 1;
                }
            }
        }
        count >= 5
    })
}

/// The non-learned binarisation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GlobalMean,
    LocalMean(LocalMeanConfig),
    Otsu,
    Fixed(u8),
}

/// A classical method, optionally followed by despeckling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classical {
    pub method: Method,
    pub despeckle: bool,
}

impl Classical {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            despeckle: false,
        }
    }

    pub fn with_despeckle(mut self, on: bool) -> Self {
        self.despeckle = on;
        self
    }
}

impl Segmenter for Classical {
    fn name(&self) -> String {
        let base = match self.method {
            Method::GlobalMean => String::from("global-mean"),
            Method::LocalMean(c) => format!("local-mean(w={},c={})", c.window, c.offset_c),
            Method::Otsu => String::from("otsu"),
            Method::Fixed(t) => format!("fixed({t})"),
        };
        if self.despeckle {
            format!("{base}+despeckle")
        } else {
            base
        }
    }

    fn segment(&self, img: &GrayImage) -> Result<BinaryMask> {
        let m = match self.method {
            Method::GlobalMean => threshold_global_mean(img),
            Method::LocalMean(cfg) => threshold_local_mean(img, &cfg)?,
            Method::Otsu => threshold_otsu(img).0,
            Method::Fixed(t) => threshold_fixed(img, t),
        };
        Ok(if self.despeckle { despeckle(&m) } else { m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = Rng::new(seed);
        GrayImage::from_fn(w, h, |_, _| rng.below(256) as u8)
    }

    #[test]
    fn global_mean_cases() {
        assert!(threshold_global_mean(&GrayImage::filled(5, 5, 40)).data().iter().all(|&b| b));
        let img = GrayImage::from_fn(10, 4, |x, _| if x < 5 { 0 } else { 200 });
        let m = threshold_global_mean(&img);
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(m.get(x, y), x >= 5);
            }
        }
    }

    #[test]
    fn global_mean_matches_float_oracle() {
        for seed in 0..100 {
            let img = random_image(seed, 17, 13);
            let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
            let m = threshold_global_mean(&img);
            for (v, b) in img.data().iter().zip(m.data()) {
                assert_eq!(*v as f64 >= mean, *b);
            }
        }
    }

    #[test]
    fn local_mean_constant_is_all_foreground() {
        let m = threshold_local_mean(&GrayImage::filled(9, 9, 100), &LocalMeanConfig::default()).unwrap();
        assert!(m.data().iter().all(|&b| b));
    }

    #[test]
    fn huge_window_equals_global_mean() {
        for seed in 0..20 {
            let img = random_image(seed, 23, 17);
            let cfg = LocalMeanConfig {
                window: 2 * 23 + 1,
                offset_c: 0,
            };
            assert_eq!(threshold_local_mean(&img, &cfg).unwrap(), threshold_global_mean(&img));
        }
    }

    #[test]
    fn local_mean_matches_direct_window_oracle() {
        for seed in 0..10 {
            let img = random_image(100 + seed, 12, 9);
            let cfg = LocalMeanConfig { window: 5, offset_c: 3 };
            let m = threshold_local_mean(&img, &cfg).unwrap();
            for y in 0..9 {
                for x in 0..12 {
                    let mut s = 0.0;
                    for dy in -2..=2isize {
                        for dx in -2..=2isize {
                            s += img.get_mirrored(x as isize + dx, y as isize + dy) as f64;
                        }
                    }
                    let expected = img.get(x, y) as f64 >= s / 25.0 + 3.0;
                    assert_eq!(m.get(x, y), expected);
                }
            }
        }
    }

    #[test]
    fn bright_pixel_stands_alone() {
        // Every window of the 15x15 field contains the centre pixel, so all
        // black pixels see a positive local mean.
        let mut img = GrayImage::filled(15, 15, 0);
        img.set(7, 7, 255);
        let m = threshold_local_mean(&img, &LocalMeanConfig::default()).unwrap();
        assert!(m.get(7, 7));
        assert_eq!(m.count_true(), 1);
    }

    #[test]
    fn local_mean_rejects_even_window() {
        let img = GrayImage::filled(4, 4, 0);
        assert!(threshold_local_mean(&img, &LocalMeanConfig { window: 4, offset_c: 0 }).is_err());
    }

    #[test]
    fn otsu_bimodal_picks_smallest_tie() {
        let img = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0 } else { 200 });
        let (m, t) = threshold_otsu(&img);
        assert_eq!(t, 1);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(x, y), x >= 4);
            }
        }
    }

    #[test]
    fn otsu_constant_image() {
        let (m, t) = threshold_otsu(&GrayImage::filled(6, 6, 90));
        assert_eq!(t, 0);
        assert!(m.data().iter().all(|&b| b));
    }

    #[test]
    fn wide_product_is_exact() {
        let a = u128::MAX;
        let (hi, lo) = mul_wide(a, a);
        // (2^128 - 1)^2 = 2^256 - 2^129 + 1
        assert_eq!(lo, 1);
        assert_eq!(hi, u128::MAX - 1);
        assert_eq!(mul_wide(3, 5), (0, 15));
    }

    #[test]
    fn fixed_threshold_edges() {
        let img = random_image(3, 10, 10);
        assert!(threshold_fixed(&img, 0).data().iter().all(|&b| b));
        let areas: Vec<usize> = [105u8, 115, 125, 135].iter().map(|&t| threshold_fixed(&img, t).count_true()).collect();
        assert!(areas.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn despeckle_cases() {
        let mut m = BinaryMask::filled(7, 7, false);
        m.set(3, 3, true);
        assert_eq!(despeckle(&m).count_true(), 0);

        let half = BinaryMask::from_fn(8, 8, |x, _| x >= 4);
        assert_eq!(despeckle(&half), half);

        let full = BinaryMask::filled(5, 5, true);
        assert_eq!(despeckle(&full), full);
    }

    #[test]
    fn straight_edge_neighbourhoods_keep_their_majority() {
        // Enumerate every 3x3 window that can occur along a straight
        // vertical or horizontal edge: the centre always agrees with at
        // least 5 of the 9 cells.
        for edge_col in 0..=3 {
            for orient in 0..2 {
                let cell = |x: usize, y: usize| if orient == 0 { x >= edge_col } else { y >= edge_col };
                for cx in 1..3usize {
                    let centre = cell(cx, cx);
                    let same = (0..3)
                        .flat_map(|dy| (0..3).map(move |dx| (cx + dx - 1, cx + dy - 1)))
                        .filter(|&(x, y)| cell(x, y) == centre)
                        .count();
                    assert!(same >= 5);
                }
            }
        }
    }

    #[test]
    fn thresholds_commute_with_flips_and_rotations() {
        for seed in 0..10 {
            let img = random_image(50 + seed, 19, 14);
            let methods = [
                Classical::new(Method::GlobalMean),
                Classical::new(Method::Otsu),
                Classical::new(Method::LocalMean(LocalMeanConfig { window: 5, offset_c: 0 })),
                Classical::new(Method::Otsu).with_despeckle(true),
            ];
            for m in methods {
                let base = m.segment(&img).unwrap();
                assert_eq!(m.segment(&img.flip_horizontal()).unwrap(), base.flip_horizontal());
                assert_eq!(m.segment(&img.flip_vertical()).unwrap(), base.flip_vertical());
                assert_eq!(m.segment(&img.rotate90()).unwrap(), base.rotate90());
            }
        }
    }

    #[test]
    fn method_names() {
        assert_eq!(Classical::new(Method::Otsu).with_despeckle(true).name(), "otsu+despeckle");
        assert_eq!(
            Classical::new(Method::LocalMean(LocalMeanConfig::default())).name(),
            "local-mean(w=15,c=0)"
        );
    }
}
