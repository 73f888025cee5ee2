//! Synthetic scan artefacts and the augmentation processes built on them.
//!
//! Every generator is a pure function of `(image, spec)` and clamps its
//! output to 0..=255. Amplitudes are in intensity levels on the normalised
//! image.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::image::{ensure_same_dims, BinaryMask, GrayImage};
use crate::preprocess::{gaussian_filter, quantize};
use crate::rng::derive_seed;
use crate::{Error, Result, Rng};

/// Pixels below this count as dark for streak/contrast gating.
pub const GATE: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum NoiseKind {
    Stripes,
    Banding,
    StreakMask,
    BackgroundContrast,
    Inversion,
    Blur,
    Drift,
    BandingPlusStripes,
    HfHorizontalBanding,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 9] = [
        NoiseKind::Stripes,
        NoiseKind::Banding,
        NoiseKind::StreakMask,
        NoiseKind::BackgroundContrast,
        NoiseKind::Inversion,
        NoiseKind::Blur,
        NoiseKind::Drift,
        NoiseKind::BandingPlusStripes,
        NoiseKind::HfHorizontalBanding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Stripes => "stripes",
            NoiseKind::Banding => "banding",
            NoiseKind::StreakMask => "streak_mask",
            NoiseKind::BackgroundContrast => "background_contrast",
            NoiseKind::Inversion => "inversion",
            NoiseKind::Blur => "blur",
            NoiseKind::Drift => "drift",
            NoiseKind::BandingPlusStripes => "banding_plus_stripes",
            NoiseKind::HfHorizontalBanding => "hf_horizontal_banding",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        let alias = match norm.as_str() {
            "streak" | "streaking" => "streak_mask",
            "contrast" => "background_contrast",
            "invert" => "inversion",
            "blurring" => "blur",
            other => other,
        };
        NoiseKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| Error::param("noise", format!("unknown noise kind `{s}`")))
    }
}

/// One noise application: kind, strength, seed and kind-specific knobs.
///
/// The default strengths are desk choices, not published values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub seed: u64,
    pub stripe_count: usize,
    /// Banding period in pixels. `None` uses a quarter of the banding axis
    /// for ordinary banding and 4 for the high-frequency variant.
    pub band_period: Option<usize>,
    /// Half-open row range `[start, end)` affected by drift. `None` is the
    /// middle third of the image.
    pub drift_band: Option<(usize, usize)>,
    pub blur_sigma: f64,
    pub mask_flip_h: bool,
    pub mask_flip_v: bool,
    /// Draw the flips from `seed` instead of the two flags above.
    pub mask_random_flips: bool,
    /// Nearest-neighbour rescale the mask to the image size.
    pub mask_rescale: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::new(NoiseKind::Stripes)
    }
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            amplitude: 40.0,
            seed: 0,
            stripe_count: 3,
            band_period: None,
            drift_band: None,
            blur_sigma: 2.0,
            mask_flip_h: false,
            mask_flip_v: false,
            mask_random_flips: true,
            mask_rescale: true,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::param("amplitude", "must be finite and >= 0"));
        }
        if self.stripe_count < 1 {
            return Err(Error::param("stripe_count", "must be at least 1"));
        }
        if let Some(p) = self.band_period {
            if p < 2 {
                return Err(Error::param("band_period", "must be at least 2"));
            }
            if self.kind == NoiseKind::HfHorizontalBanding && p > 8 {
                return Err(Error::param("band_period", "high-frequency banding needs a period <= 8"));
            }
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::param("blur_sigma", "must be positive"));
        }
        if let Some((a, b)) = self.drift_band {
            if a >= b {
                return Err(Error::param("drift_band", "start must be below end"));
            }
        }
        Ok(())
    }

    fn expect_kind(&self, allowed: &[NoiseKind]) -> Result<()> {
        self.validate()?;
        if !allowed.contains(&self.kind) {
            return Err(Error::param("kind", format!("`{}` is not valid here", self.kind)));
        }
        Ok(())
    }
}

fn offset(v: u8, delta: f64) -> u8 {
    quantize(v as f64 + delta)
}

/// Shifts `stripe_count` distinct, randomly chosen rows by `+amplitude` or
/// `-amplitude` (sign drawn per row).
pub fn add_stripes(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[NoiseKind::Stripes, NoiseKind::BandingPlusStripes])?;
    let (w, h) = img.dims();
    let mut rng = Rng::new(spec.seed);
    let mut rows: Vec<usize> = (0..h).collect();
    rng.shuffle(&mut rows);
    rows.truncate(spec.stripe_count.min(h));
    let mut out = img.clone();
    for &y in &rows {
        let delta = if rng.coin() { spec.amplitude } else { -spec.amplitude };
        for x in 0..w {
            out.set(x, y, offset(img.get(x, y), delta));
        }
    }
    Ok(out)
}

fn banding_period(spec: &NoiseSpec, axis_len: usize) -> usize {
    match (spec.band_period, spec.kind) {
        (Some(p), _) => p,
        (None, NoiseKind::HfHorizontalBanding) => 4,
        (None, _) => (axis_len / 4).max(2),
    }
}

/// Adds `amplitude * sin(2 pi t / period)`, where `t` is the column index
/// for (vertical) banding and the row index for the high-frequency
/// horizontal variant.
pub fn add_banding(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[
        NoiseKind::Banding,
        NoiseKind::HfHorizontalBanding,
        NoiseKind::BandingPlusStripes,
    ])?;
    let (w, h) = img.dims();
    let horizontal = spec.kind == NoiseKind::HfHorizontalBanding;
    let period = banding_period(spec, if horizontal { h } else { w }) as f64;
    Ok(GrayImage::from_fn(w, h, |x, y| {
        let t = if horizontal { y } else { x } as f64;
        let d = spec.amplitude * libm::sin(core::f64::consts::TAU * t / period);
        offset(img.get(x, y), d)
    }))
}

/// Flips (fixed or seeded) and optional nearest-neighbour rescale applied
/// to a streak mask before use.
pub fn transform_mask(mask: &GrayImage, spec: &NoiseSpec, target: (usize, usize)) -> Result<GrayImage> {
    let (fh, fv) = if spec.mask_random_flips {
        let mut rng = Rng::new(derive_seed(spec.seed, 0x6d61_736b));
        (rng.coin(), rng.coin())
    } else {
        (spec.mask_flip_h, spec.mask_flip_v)
    };
    let mut m = mask.clone();
    if fh {
        m = m.flip_horizontal();
    }
    if fv {
        m = m.flip_vertical();
    }
    if spec.mask_rescale {
        m = m.resize_nearest(target.0, target.1);
    }
    ensure_same_dims(target, m.dims())?;
    Ok(m)
}

/// Seeded stand-in for a real streak mask: thin bright horizontal runs on
/// black, the signature of tip contamination along the fast-scan axis.
pub fn synth_streak_mask(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = Rng::new(seed);
    let mut m = GrayImage::filled(width, height, 0);
    if width == 0 || height == 0 {
        return m;
    }
    let streaks = (height / 10).max(1);
    for _ in 0..streaks {
        let y = rng.index(height);
        let len = width / 4 + rng.index(width - width / 4 + 1);
        let x0 = rng.index(width - len + 1);
        let thick = 1 + rng.index(2);
        let value = 180 + rng.below(76) as u8;
        for yy in y..(y + thick).min(height) {
            for x in x0..x0 + len {
                m.set(x, yy, m.get(x, yy).max(value));
            }
        }
    }
    m
}

/// `max(img, mask)` on dark pixels, leaving bright pixels alone.
pub fn apply_streak_mask(img: &GrayImage, mask: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[NoiseKind::StreakMask])?;
    let m = transform_mask(mask, spec, img.dims())?;
    let data = img
        .data()
        .iter()
        .zip(m.data())
        .map(|(&v, &s)| if v < GATE { v.max(s) } else { v })
        .collect();
    GrayImage::new(img.width(), img.height(), data)
}

/// With a mask: `min(img, 255 - mask)` on bright pixels. Without one: a
/// left-to-right ramp darkening the image by up to `amplitude`.
pub fn add_background_contrast(img: &GrayImage, mask: Option<&GrayImage>, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[NoiseKind::BackgroundContrast])?;
    let (w, h) = img.dims();
    match mask {
        Some(mask) => {
            let m = transform_mask(mask, spec, img.dims())?;
            let data = img
                .data()
                .iter()
                .zip(m.data())
                .map(|(&v, &s)| if v >= GATE { v.min(255 - s) } else { v })
                .collect();
            GrayImage::new(w, h, data)
        }
        None => {
            let denom = w.saturating_sub(1).max(1) as f64;
            Ok(GrayImage::from_fn(w, h, |x, y| {
                offset(img.get(x, y), -spec.amplitude * x as f64 / denom)
            }))
        }
    }
}

pub fn invert(img: &GrayImage) -> GrayImage {
    img.map(|v| 255 - v)
}

/// Gaussian blur with `spec.blur_sigma`; kernel spans +-3 sigma.
pub fn add_blur(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[NoiseKind::Blur])?;
    let r = libm::ceil(3.0 * spec.blur_sigma).max(1.0) as usize;
    gaussian_filter(img, 2 * r + 1, spec.blur_sigma)
}

/// Tent profile over the band: 0 at both ends, 1 in the middle.
fn drift_ramp(r: usize, start: usize, end: usize) -> f64 {
    let len = end - start;
    if len <= 1 {
        return 1.0;
    }
    let pos = (r - start) as f64 / (len - 1) as f64;
    1.0 - libm::fabs(2.0 * pos - 1.0)
}

/// Lateral displacement of a band of rows, rising linearly to
/// `amplitude` pixels at the band centre and back to zero. Vacated pixels
/// repeat the edge sample.
pub fn add_drift(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    spec.expect_kind(&[NoiseKind::Drift])?;
    let (w, h) = img.dims();
    let (start, end) = spec.drift_band.unwrap_or((h / 3, (2 * h / 3).max(h / 3 + 1)));
    if end > h {
        return Err(Error::param("drift_band", format!("band end {end} exceeds {h} rows")));
    }
    let mut out = img.clone();
    for y in start..end {
        let shift = libm::floor(spec.amplitude * drift_ramp(y, start, end) + 0.5) as isize;
        for x in 0..w {
            let src = (x as isize - shift).clamp(0, w as isize - 1) as usize;
            out.set(x, y, img.get(src, y));
        }
    }
    Ok(out)
}

/// Applies one noise spec. Mask-based kinds use `mask` when given;
/// streaking without a mask falls back to [`synth_streak_mask`] and
/// background contrast to its gradient mode.
pub fn apply_noise(img: &GrayImage, spec: &NoiseSpec, mask: Option<&GrayImage>) -> Result<GrayImage> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::Stripes => add_stripes(img, spec),
        NoiseKind::Banding | NoiseKind::HfHorizontalBanding => add_banding(img, spec),
        NoiseKind::BandingPlusStripes => add_stripes(&add_banding(img, spec)?, spec),
        NoiseKind::StreakMask => match mask {
            Some(m) => apply_streak_mask(img, m, spec),
            None => {
                let m = synth_streak_mask(img.width(), img.height(), derive_seed(spec.seed, 0x7374));
                apply_streak_mask(img, &m, spec)
            }
        },
        NoiseKind::BackgroundContrast => add_background_contrast(img, mask, spec),
        NoiseKind::Inversion => Ok(invert(img)),
        NoiseKind::Blur => add_blur(img, spec),
        NoiseKind::Drift => add_drift(img, spec),
    }
}

/// A numbered augmentation process: the list of noise variants each clean
/// image is expanded into.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationProcess {
    pub id: u8,
    pub variants: Vec<NoiseSpec>,
}

impl AugmentationProcess {
    /// Variant kinds of the three standard processes.
    ///
    /// Process 1 yields seven images per input: stripes, banding, streak
    /// mask, background contrast, inversion, blur and drift. Process 2 swaps
    /// the streak mask for high-frequency horizontal banding. Process 3
    /// keeps the common kinds only: stripes, banding, streak mask,
    /// background contrast and banding plus stripes.
    pub fn kinds(id: u8) -> Result<&'static [NoiseKind]> {
        use NoiseKind::*;
        match id {
            1 => Ok(&[Stripes, Banding, StreakMask, BackgroundContrast, Inversion, Blur, Drift]),
            2 => Ok(&[Stripes, Banding, HfHorizontalBanding, BackgroundContrast, Inversion, Blur, Drift]),
            3 => Ok(&[Stripes, Banding, StreakMask, BackgroundContrast, BandingPlusStripes]),
            _ => Err(Error::param("process", "augmentation process must be 1, 2 or 3")),
        }
    }

    /// Standard process with every variant built from `template` (its kind
    /// is overwritten per variant).
    pub fn standard(id: u8, template: &NoiseSpec) -> Result<Self> {
        let variants = Self::kinds(id)?
            .iter()
            .map(|&kind| NoiseSpec {
                kind,
                ..template.clone()
            })
            .collect();
        Ok(Self { id, variants })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub source_index: usize,
    pub kind: NoiseKind,
    pub image: GrayImage,
    /// The source label, reused unchanged.
    pub mask: BinaryMask,
    /// Set for drift, whose pixels move while the label does not.
    pub label_misaligned: bool,
}

/// Expands every `(image, mask)` pair into one noisy copy per process
/// variant, each paired with the untouched source mask.
///
/// Variant `v` of image `i` is seeded with `derive_seed(seed, i * 64 + v)`
/// mixed with the variant's own seed.
pub fn run_process(
    pairs: &[(GrayImage, BinaryMask)],
    process: &AugmentationProcess,
    streak_mask: Option<&GrayImage>,
    seed: u64,
) -> Result<Vec<AugmentedPair>> {
    let mut out = Vec::with_capacity(pairs.len() * process.variants.len());
    for (i, (img, mask)) in pairs.iter().enumerate() {
        ensure_same_dims(img.dims(), mask.dims())?;
        for (v, template) in process.variants.iter().enumerate() {
            let spec = NoiseSpec {
                seed: derive_seed(seed ^ template.seed, (i * 64 + v) as u64),
                ..template.clone()
            };
            let image = apply_noise(img, &spec, streak_mask)?;
            out.push(AugmentedPair {
                source_index: i,
                kind: spec.kind,
                image,
                mask: mask.clone(),
                label_misaligned: spec.kind == NoiseKind::Drift,
            });
        }
    }
    Ok(out)
}

/// Human-readable summary used in run manifests.
pub fn describe(spec: &NoiseSpec) -> String {
    format!("{}(amplitude={}, seed={})", spec.kind, spec.amplitude, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random_image(seed: u64) -> GrayImage {
        let mut rng = Rng::new(seed);
        GrayImage::from_fn(32, 24, |_, _| rng.below(256) as u8)
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let img = random_image(1);
        for kind in [NoiseKind::Stripes, NoiseKind::Banding, NoiseKind::Drift, NoiseKind::HfHorizontalBanding] {
            let spec = NoiseSpec::new(kind).with_amplitude(0.0);
            assert_eq!(apply_noise(&img, &spec, None).unwrap(), img, "{kind}");
        }
    }

    #[test]
    fn stripes_on_flat_image() {
        let img = GrayImage::filled(20, 30, 128);
        let spec = NoiseSpec::new(NoiseKind::Stripes).with_amplitude(50.0).with_seed(4);
        let out = add_stripes(&img, &spec).unwrap();
        let mut changed_rows = 0;
        for y in 0..30 {
            let row: Vec<u8> = (0..20).map(|x| out.get(x, y)).collect();
            if row[0] != 128 {
                changed_rows += 1;
                assert!(row[0] == 178 || row[0] == 78);
                assert!(row.iter().all(|&v| v == row[0]));
            } else {
                assert!(row.iter().all(|&v| v == 128));
            }
        }
        assert_eq!(changed_rows, 3);
    }

    #[test]
    fn banding_follows_the_sine_formula() {
        let img = GrayImage::filled(40, 5, 128);
        let spec = NoiseSpec {
            band_period: Some(40),
            ..NoiseSpec::new(NoiseKind::Banding).with_amplitude(30.0)
        };
        let out = add_banding(&img, &spec).unwrap();
        for c in 0..40 {
            let expected = (128.0 + 30.0 * (2.0 * core::f64::consts::PI * c as f64 / 40.0).sin() + 0.5).floor();
            assert_eq!(out.get(c, 2) as f64, expected.clamp(0.0, 255.0));
        }
    }

    #[test]
    fn banding_mean_change_is_small_over_whole_periods() {
        let img = GrayImage::filled(64, 8, 128);
        let spec = NoiseSpec::new(NoiseKind::Banding).with_amplitude(40.0);
        let out = add_banding(&img, &spec).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1.0);
    }

    #[test]
    fn hf_banding_rejects_long_period() {
        let spec = NoiseSpec {
            band_period: Some(16),
            ..NoiseSpec::new(NoiseKind::HfHorizontalBanding)
        };
        assert!(add_banding(&GrayImage::filled(8, 8, 0), &spec).is_err());
    }

    fn fixed_mask_spec(kind: NoiseKind) -> NoiseSpec {
        NoiseSpec {
            mask_random_flips: false,
            ..NoiseSpec::new(kind)
        }
    }

    #[test]
    fn streak_mask_rules() {
        let img = random_image(2);
        let zero = GrayImage::filled(32, 24, 0);
        let spec = fixed_mask_spec(NoiseKind::StreakMask);
        assert_eq!(apply_streak_mask(&img, &zero, &spec).unwrap(), img);

        let black = GrayImage::filled(32, 24, 0);
        let mut mask = GrayImage::filled(32, 24, 0);
        for x in 0..32 {
            mask.set(x, 5, 210);
        }
        let out = apply_streak_mask(&black, &mask, &spec).unwrap();
        for x in 0..32 {
            assert_eq!(out.get(x, 5), 210);
            assert_eq!(out.get(x, 6), 0);
        }

        let full = GrayImage::filled(32, 24, 255);
        let out = apply_streak_mask(&img, &full, &spec).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            if *a >= GATE {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn streak_mask_size_mismatch_without_rescale() {
        let spec = NoiseSpec {
            mask_rescale: false,
            ..fixed_mask_spec(NoiseKind::StreakMask)
        };
        let r = apply_streak_mask(&GrayImage::filled(8, 8, 0), &GrayImage::filled(4, 4, 0), &spec);
        assert!(matches!(r, Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn background_contrast_rules() {
        let img = random_image(3);
        let spec = fixed_mask_spec(NoiseKind::BackgroundContrast);
        let zero = GrayImage::filled(32, 24, 0);
        assert_eq!(add_background_contrast(&img, Some(&zero), &spec).unwrap(), img);

        let full = GrayImage::filled(32, 24, 255);
        let out = add_background_contrast(&img, Some(&full), &spec).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            if *a < GATE {
                assert_eq!(a, b);
            } else {
                assert_eq!(*b, 0);
            }
        }
    }

    #[test]
    fn gradient_mode_ramps_down() {
        let img = GrayImage::filled(41, 3, 200);
        let spec = NoiseSpec::new(NoiseKind::BackgroundContrast).with_amplitude(40.0);
        let out = add_background_contrast(&img, None, &spec).unwrap();
        for x in 0..41 {
            // 200 - 40 * x / 40
            assert_eq!(out.get(x, 1), 200 - x as u8);
        }
    }

    #[test]
    fn inversion_involution() {
        let img = random_image(4);
        assert_eq!(invert(&invert(&img)), img);
        assert_eq!(invert(&GrayImage::filled(1, 1, 0)).get(0, 0), 255);
        assert_eq!(invert(&GrayImage::filled(1, 1, 255)).get(0, 0), 0);
    }

    #[test]
    fn drift_moves_only_the_band() {
        let img = GrayImage::from_fn(20, 11, |x, _| if x == 8 { 255 } else { 0 });
        let spec = NoiseSpec {
            drift_band: Some((2, 9)),
            ..NoiseSpec::new(NoiseKind::Drift).with_amplitude(3.0)
        };
        let out = add_drift(&img, &spec).unwrap();
        for y in (0..2).chain(9..11) {
            for x in 0..20 {
                assert_eq!(out.get(x, y), img.get(x, y));
            }
        }
        // Band rows 2..=8, centre row 5 has ramp 1 -> shift 3.
        assert_eq!(out.get(11, 5), 255);
        assert_eq!(out.get(8, 5), 0);
        // Row 3 is a sixth of the way along the band: ramp 1/3, shift 1.
        assert_eq!(out.get(9, 3), 255);
    }

    #[test]
    fn outputs_are_seed_deterministic() {
        let img = random_image(5);
        for kind in NoiseKind::ALL {
            let spec = NoiseSpec::new(kind).with_seed(99);
            assert_eq!(apply_noise(&img, &spec, None).unwrap(), apply_noise(&img, &spec, None).unwrap());
        }
    }

    #[test]
    fn non_drift_kinds_keep_geometry_of_constant_columns() {
        // A column-constant image keeps its columns under every kind but
        // drift (banding/stripes/contrast are row- or column-wise offsets).
        let img = GrayImage::from_fn(16, 16, |x, _| (x * 10) as u8);
        let out = apply_noise(&img, &NoiseSpec::new(NoiseKind::Inversion), None).unwrap();
        assert_eq!(out.dims(), img.dims());
    }

    #[test]
    fn process_counts() {
        let template = NoiseSpec::default();
        let pair = (random_image(6), BinaryMask::filled(32, 24, true));
        let p3 = AugmentationProcess::standard(3, &template).unwrap();
        let out = run_process(core::slice::from_ref(&pair), &p3, None, 1).unwrap();
        assert_eq!(out.len(), 5);
        for a in &out {
            assert_eq!(a.mask, pair.1);
        }

        let pairs: Vec<_> = (0..80)
            .map(|i| (GrayImage::filled(8, 8, (i * 3) as u8), BinaryMask::filled(8, 8, i % 2 == 0)))
            .collect();
        assert_eq!(run_process(&pairs, &p3, None, 7).unwrap().len(), 400);
        let p1 = AugmentationProcess::standard(1, &template).unwrap();
        assert_eq!(run_process(&pairs, &p1, None, 7).unwrap().len(), 560);
        let p2 = AugmentationProcess::standard(2, &template).unwrap();
        assert_eq!(run_process(&pairs, &p2, None, 7).unwrap().len(), 560);
        assert!(AugmentationProcess::standard(4, &template).is_err());
    }

    #[test]
    fn drift_outputs_are_flagged() {
        let template = NoiseSpec::default();
        let p1 = AugmentationProcess::standard(1, &template).unwrap();
        let pairs = vec![(random_image(8), BinaryMask::filled(32, 24, false))];
        let out = run_process(&pairs, &p1, None, 0).unwrap();
        for a in out {
            assert_eq!(a.label_misaligned, a.kind == NoiseKind::Drift);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("streaking".parse::<NoiseKind>().unwrap(), NoiseKind::StreakMask);
        assert_eq!("banding-plus-stripes".parse::<NoiseKind>().unwrap(), NoiseKind::BandingPlusStripes);
        assert!("sparkles".parse::<NoiseKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn every_kind_is_deterministic_and_size_preserving(seed in any::<u64>(), amp in 0.0f64..300.0, k in 0usize..9) {
                let img = random_image(seed);
                let spec = NoiseSpec::new(NoiseKind::ALL[k]).with_amplitude(amp).with_seed(seed);
                let a = apply_noise(&img, &spec, None).unwrap();
                prop_assert_eq!(a.dims(), img.dims());
                prop_assert_eq!(a, apply_noise(&img, &spec, None).unwrap());
            }
        }
    }
}
