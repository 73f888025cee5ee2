//! Dataset records, curation, stratified splitting and synthetic patterns.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::image::{mirror_index, BinaryMask, GrayImage};
use crate::preprocess::{gaussian_kernel, quantize};
use crate::{Error, Result, Rng};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
        pub enum $name {
            $(#[cfg_attr(feature = "serde", serde(rename = $s))] $var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let s = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::param(stringify!($name), format!("unknown value `{s}`")))
            }
        }
    };
}

named_enum!(
    /// Qualitative pattern class of a dewetted film.
    Regime {
        Islands => "islands",
        WormLike => "worm-like",
        Cellular => "cellular",
        Labyrinthine => "labyrinthine",
        Pores => "pores",
        Fingering => "fingering",
        Rings => "rings",
        Trees => "trees",
        Streaks => "streaks",
        Cracks => "cracks",
        Mixed => "mixed",
    }
);

named_enum!(
    /// Manual noise label. `Excessive` marks images too noisy to use.
    NoiseTag {
        Stripes => "stripes",
        Banding => "banding",
        Streaks => "streaks",
        BackgroundContrast => "background-contrast",
        Inversion => "inversion",
        Blur => "blur",
        Drift => "drift",
        Excessive => "excessive",
    }
);

named_enum!(
    Split {
        Unassigned => "unassigned",
        Train => "train",
        Test => "test",
        Excluded => "excluded",
    }
);

impl Default for Split {
    fn default() -> Self {
        Split::Unassigned
    }
}

/// One image of a dataset. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetRecord {
    pub image: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub mask: Option<String>,
    /// `None` when no clear regime could be assigned.
    #[cfg_attr(feature = "serde", serde(default))]
    pub regime: Option<Regime>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise_tags: BTreeSet<NoiseTag>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub scale: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub multilayer: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub split: Split,
    pub random_u: f64,
}

impl DatasetRecord {
    pub fn new(image: impl Into<String>, regime: Option<Regime>, random_u: f64) -> Self {
        Self {
            image: image.into(),
            mask: None,
            regime,
            noise_tags: BTreeSet::new(),
            scale: None,
            multilayer: false,
            split: Split::Unassigned,
            random_u,
        }
    }

    /// Training records the U-Net may learn from: single-layer, in the
    /// training split.
    pub fn unet_trainable(&self) -> bool {
        self.split == Split::Train && !self.multilayer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurationRules {
    pub exclude_no_regime: bool,
    pub exclude_excessive_noise: bool,
}

impl Default for CurationRules {
    fn default() -> Self {
        Self {
            exclude_no_regime: true,
            exclude_excessive_noise: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurationReport {
    pub total: usize,
    pub retained: usize,
    pub excluded: usize,
    pub no_regime: usize,
    pub excessive_noise: usize,
}

/// Marks records matching the exclusion rules as excluded. A record can
/// count towards both reasons.
pub fn curate(records: &mut [DatasetRecord], rules: &CurationRules) -> CurationReport {
    let mut report = CurationReport {
        total: records.len(),
        ..Default::default()
    };
    for r in records.iter_mut() {
        let no_regime = r.regime.is_none();
        let excessive = r.noise_tags.contains(&NoiseTag::Excessive);
        report.no_regime += no_regime as usize;
        report.excessive_noise += excessive as usize;
        if (rules.exclude_no_regime && no_regime) || (rules.exclude_excessive_noise && excessive) {
            r.split = Split::Excluded;
        }
    }
    report.excluded = records.iter().filter(|r| r.split == Split::Excluded).count();
    report.retained = report.total - report.excluded;
    report
}

/// Number of test records drawn from a stratum of `n >= 2`.
pub fn stratum_test_count(n: usize, train_fraction: f64) -> usize {
    let raw = (1.0 - train_fraction) * n as f64;
    // Guard against 0.25 * 4 landing a hair above 1.
    (libm::ceil(raw - 1e-9).max(0.0) as usize).min(n)
}

/// Assigns train/test within each (regime, noise tags) stratum.
///
/// Records are ranked by `random_u`, largest first, and the first
/// `ceil((1 - train_fraction) * n)` go to test. A stratum of one goes to
/// test exactly when its `random_u` exceeds 0.5. Excluded records are left
/// alone.
pub fn stratified_split(records: &mut [DatasetRecord], train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::param("train_fraction", "must lie in (0, 1]"));
    }
    if let Some(r) = records.iter().find(|r| !(r.random_u >= 0.0 && r.random_u < 1.0)) {
        return Err(Error::InvalidData(format!("{}: random_u {} outside [0, 1)", r.image, r.random_u)));
    }
    let mut strata: BTreeMap<(Option<Regime>, Vec<NoiseTag>), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.split != Split::Excluded {
            let key = (r.regime, r.noise_tags.iter().copied().collect());
            strata.entry(key).or_default().push(i);
        }
    }
    for members in strata.values_mut() {
        members.sort_by(|&a, &b| records[b].random_u.total_cmp(&records[a].random_u).then(a.cmp(&b)));
        let n_test = if members.len() == 1 {
            (records[members[0]].random_u > 0.5) as usize
        } else {
            stratum_test_count(members.len(), train_fraction)
        };
        for (rank, &i) in members.iter().enumerate() {
            records[i].split = if rank < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(())
}

/// Recipe for one synthetic image/mask pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct PatternSpec {
    pub regime: Regime,
    /// Target foreground fraction in (0, 1). Exact for field-based
    /// regimes, approximate for islands.
    pub coverage: f64,
    pub correlation_length: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Disks for islands, cells for the cellular regime.
    pub feature_count: usize,
    /// Peak deviation of the background texture in intensity levels.
    pub texture: f64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            regime: Regime::WormLike,
            coverage: 0.5,
            correlation_length: 4.0,
            seed: 0,
            width: 128,
            height: 128,
            feature_count: 10,
            texture: 8.0,
        }
    }
}

pub const FOREGROUND_LEVEL: f64 = 180.0;
pub const BACKGROUND_LEVEL: f64 = 60.0;

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::param("coverage", "must lie strictly between 0 and 1"));
        }
        if !(self.correlation_length > 0.0) {
            return Err(Error::param("correlation_length", "must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("size", "width and height must be non-zero"));
        }
        if self.feature_count == 0 {
            return Err(Error::param("feature_count", "must be at least 1"));
        }
        if !(self.texture >= 0.0 && self.texture < 60.0) {
            return Err(Error::param("texture", "must lie in [0, 60)"));
        }
        Ok(())
    }
}

/// Separable Gaussian smoothing of a real field with mirrored borders.
fn smooth(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = libm::ceil(3.0 * sigma).max(1.0) as usize;
    let k = gaussian_kernel(2 * r + 1, sigma).expect("valid kernel");
    let r = r as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * field[y * w + mirror_index(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * tmp[mirror_index(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn gaussian_field(w: usize, h: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..w * h).map(|_| rng.normal()).collect();
    smooth(&white, w, h, sigma)
}

/// Marks exactly `k` pixels with the highest scores (lower index first on
/// ties).
fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![false; scores.len()];
    for &i in &order[..k] {
        out[i] = true;
    }
    out
}

fn island_mask(spec: &PatternSpec, rng: &mut Rng) -> Result<Vec<bool>> {
    let (w, h) = (spec.width, spec.height);
    let n = spec.feature_count;
    let r = libm::sqrt(spec.coverage * (w * h) as f64 / (core::f64::consts::PI * n as f64)).max(1.0);
    if 2.0 * r + 1.0 > w.min(h) as f64 {
        return Err(Error::param("coverage", "disks do not fit in the image"));
    }
    // Centres more than 2r + 2 apart leave at least one background pixel
    // between rasterised disks, so they never touch, even diagonally.
    let min_gap = 2.0 * r + 2.0;
    let mut centres: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0;
    while centres.len() < n {
        attempts += 1;
        if attempts > 20_000 {
            return Err(Error::param("feature_count", "could not place disjoint disks; lower coverage or count"));
        }
        let cx = rng.uniform(r, w as f64 - 1.0 - r);
        let cy = rng.uniform(r, h as f64 - 1.0 - r);
        if centres.iter().all(|&(x, y)| libm::hypot(x - cx, y - cy) > min_gap) {
            centres.push((cx, cy));
        }
    }
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = centres
                .iter()
                .any(|&(cx, cy)| libm::hypot(x as f64 - cx, y as f64 - cy) <= r);
        }
    }
    Ok(mask)
}

/// Cell walls: pixels nearly equidistant from their two closest seeds.
fn cellular_mask(spec: &PatternSpec, k: usize, rng: &mut Rng) -> Vec<bool> {
    let (w, h) = (spec.width, spec.height);
    let seeds: Vec<(f64, f64)> = (0..spec.feature_count.max(2))
        .map(|_| (rng.uniform(0.0, w as f64), rng.uniform(0.0, h as f64)))
        .collect();
    let mut score = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
            for &(sx, sy) in &seeds {
                let d = libm::hypot(x as f64 - sx, y as f64 - sy);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                } else if d < d2 {
                    d2 = d;
                }
            }
            score[y * w + x] = -(d2 - d1);
        }
    }
    top_k(&score, k)
}

/// Seeded synthetic image and exact ground-truth mask for a regime.
///
/// Islands stamp disjoint disks; the cellular regime keeps Voronoi walls;
/// every other regime thresholds a smoothed random field at the quantile
/// matching `coverage`. The image renders foreground at 180 and background
/// at 60 plus a smooth texture of at most `texture` levels.
pub fn synth_pattern(spec: &PatternSpec) -> Result<(GrayImage, BinaryMask)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let rng = Rng::new(spec.seed);
    let mut geometry = rng.fork(1);
    let k = libm::round(spec.coverage * (w * h) as f64) as usize;
    let mask = match spec.regime {
        Regime::Islands => island_mask(spec, &mut geometry)?,
        Regime::Cellular => cellular_mask(spec, k, &mut geometry),
        _ => top_k(&gaussian_field(w, h, spec.correlation_length, &mut geometry), k),
    };

    let mut texture_rng = rng.fork(2);
    let tex = gaussian_field(w, h, 3.0, &mut texture_rng);
    let peak = tex.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let scale = if peak > 0.0 { spec.texture / peak } else { 0.0 };
    let pixels: Vec<u8> = mask
        .iter()
        .zip(&tex)
        .map(|(&fg, t)| {
            let base = if fg { FOREGROUND_LEVEL } else { BACKGROUND_LEVEL };
            quantize(base + t * scale)
        })
        .collect();
    Ok((GrayImage::new(w, h, pixels)?, BinaryMask::new(w, h, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::minkowski;

    fn rec(regime: Option<Regime>, tags: &[NoiseTag], u: f64) -> DatasetRecord {
        let mut r = DatasetRecord::new("img.png", regime, u);
        r.noise_tags = tags.iter().copied().collect();
        r
    }

    #[test]
    fn stratum_of_four_sends_largest_to_test() {
        let mut rs: Vec<_> = [0.1, 0.9, 0.4, 0.6].iter().map(|&u| rec(Some(Regime::Islands), &[], u)).collect();
        stratified_split(&mut rs, 0.75).unwrap();
        let tests: Vec<f64> = rs.iter().filter(|r| r.split == Split::Test).map(|r| r.random_u).collect();
        assert_eq!(tests, vec![0.9]);
    }

    #[test]
    fn singleton_strata() {
        let mut rs = vec![
            rec(Some(Regime::Pores), &[], 0.7),
            rec(Some(Regime::Rings), &[], 0.3),
        ];
        stratified_split(&mut rs, 0.75).unwrap();
        assert_eq!(rs[0].split, Split::Test);
        assert_eq!(rs[1].split, Split::Train);
    }

    #[test]
    fn split_partitions_and_respects_exclusion() {
        let mut rng = Rng::new(5);
        let mut rs: Vec<_> = (0..200)
            .map(|i| {
                let regime = Regime::ALL[i % 4];
                let tags: &[NoiseTag] = if i % 3 == 0 { &[NoiseTag::Banding] } else { &[] };
                rec(Some(regime), tags, rng.next_f64())
            })
            .collect();
        rs[0].split = Split::Excluded;
        let again = {
            let mut c = rs.clone();
            stratified_split(&mut c, 0.75).unwrap();
            c
        };
        stratified_split(&mut rs, 0.75).unwrap();
        assert_eq!(rs, again);
        assert_eq!(rs[0].split, Split::Excluded);
        assert!(rs[1..].iter().all(|r| matches!(r.split, Split::Train | Split::Test)));

        let mut strata: BTreeMap<(Option<Regime>, Vec<NoiseTag>), (usize, usize)> = BTreeMap::new();
        for r in &rs[1..] {
            let e = strata.entry((r.regime, r.noise_tags.iter().copied().collect())).or_default();
            e.0 += 1;
            e.1 += (r.split == Split::Test) as usize;
        }
        for (n, t) in strata.values() {
            assert_eq!(*t, (*n as f64 * 0.25).ceil() as usize);
        }
    }

    #[test]
    fn test_count_rounds_up() {
        assert_eq!(stratum_test_count(4, 0.75), 1);
        assert_eq!(stratum_test_count(5, 0.75), 2);
        assert_eq!(stratum_test_count(8, 0.75), 2);
        assert_eq!(stratum_test_count(3, 1.0), 0);
    }

    #[test]
    fn curation_rules() {
        let mut rs = vec![
            rec(None, &[], 0.1),
            rec(Some(Regime::Cellular), &[NoiseTag::Banding], 0.2),
            rec(Some(Regime::Cellular), &[NoiseTag::Excessive], 0.3),
        ];
        let report = curate(&mut rs, &CurationRules::default());
        assert_eq!(rs[0].split, Split::Excluded);
        assert_eq!(rs[1].split, Split::Unassigned);
        assert_eq!(rs[2].split, Split::Excluded);
        assert_eq!((report.total, report.retained, report.excluded), (3, 1, 2));
    }

    #[test]
    fn curation_arithmetic() {
        let mut rs: Vec<_> = (0..2625)
            .map(|i| {
                if i < 1000 {
                    rec(None, &[], 0.5)
                } else if i < 1897 {
                    rec(Some(Regime::Mixed), &[NoiseTag::Excessive], 0.5)
                } else {
                    rec(Some(Regime::Islands), &[NoiseTag::Stripes], 0.5)
                }
            })
            .collect();
        assert_eq!(curate(&mut rs, &CurationRules::default()).retained, 728);
    }

    #[test]
    fn names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), *r);
        }
        assert_eq!("worm-like".parse::<Regime>().unwrap(), Regime::WormLike);
        assert!("blobs".parse::<Regime>().is_err());
    }

    #[test]
    fn field_coverage_is_exact() {
        for regime in [Regime::WormLike, Regime::Labyrinthine, Regime::Cellular] {
            let spec = PatternSpec {
                regime,
                coverage: 0.5,
                width: 64,
                height: 48,
                ..Default::default()
            };
            let (_, m) = synth_pattern(&spec).unwrap();
            assert_eq!(m.count_true(), 64 * 48 / 2, "{regime}");
        }
    }

    #[test]
    fn islands_are_disjoint() {
        let spec = PatternSpec {
            regime: Regime::Islands,
            coverage: 0.2,
            feature_count: 10,
            seed: 3,
            ..Default::default()
        };
        let (_, m) = synth_pattern(&spec).unwrap();
        assert_eq!(minkowski(&m).euler, 10);
    }

    #[test]
    fn rendering_is_bimodal_and_seeded() {
        let spec = PatternSpec {
            seed: 11,
            ..Default::default()
        };
        let (img, m) = synth_pattern(&spec).unwrap();
        for (v, fg) in img.data().iter().zip(m.data()) {
            if *fg {
                assert!((172..=188).contains(v));
            } else {
                assert!((52..=68).contains(v));
            }
        }
        assert_eq!(synth_pattern(&spec).unwrap(), (img, m));
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_pattern(&PatternSpec {
            coverage: 1.0,
            ..Default::default()
        })
        .is_err());
        assert!(synth_pattern(&PatternSpec {
            regime: Regime::Islands,
            coverage: 0.9,
            feature_count: 40,
            ..Default::default()
        })
        .is_err());
    }
}
