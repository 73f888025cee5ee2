//! Flat run parameters, resolved from built-in defaults, an optional TOML
//! file and command-line flags (in that order of precedence, lowest first).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spmseg_core::augment::{NoiseKind, NoiseSpec};
use spmseg_core::dataset::{PatternSpec, Regime};
use spmseg_core::preprocess::{KMeansConfig, MeanShiftConfig, NormalizationPolicy};
use spmseg_core::segment::{Classical, LocalMeanConfig, Method, Segmenter};
use spmseg_core::unet::{TrainConfig, UNetSegmenter, UNetSpec};

use crate::error::{CliError, CliResult};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Filter {
    #[default]
    None,
    Gaussian,
    Equalize,
    Kmeans,
    Meanshift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    GlobalMean,
    LocalMean,
    #[default]
    Otsu,
    Fixed,
    Unet,
}

impl std::str::FromStr for MethodName {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim() {
            "global-mean" | "mean" => Ok(MethodName::GlobalMean),
            "local-mean" | "local" => Ok(MethodName::LocalMean),
            "otsu" => Ok(MethodName::Otsu),
            "fixed" => Ok(MethodName::Fixed),
            "unet" => Ok(MethodName::Unet),
            other => Err(CliError::Usage(format!(
                "unknown method `{other}` (expected global-mean, local-mean, otsu, fixed or unet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentOrder {
    /// Inputs are already contrast-normalised; noise goes on top.
    #[default]
    NormalizeFirst,
    /// Noise goes onto raw images, which are normalised afterwards.
    AugmentFirst,
}

/// Named training recipes. Each sets a few keys underneath the config file
/// and flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Augmentation process 1 with 2-sigma truncation.
    Unet1,
    /// Augmentation process 3 with 2-sigma truncation.
    Unet2,
}

impl Preset {
    fn table(self) -> toml::Table {
        let mut t = toml::Table::new();
        let process = match self {
            Preset::Unet1 => 1,
            Preset::Unet2 => 3,
        };
        t.insert("process".into(), toml::Value::Integer(process));
        t.insert("normalization".into(), toml::Value::String("2".into()));
        t
    }
}

/// Every tunable of every command. Keys in config files and manifests use
/// these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,

    pub align_rows: bool,
    /// 0 disables polynomial background removal.
    pub detrend_degree: usize,
    pub normalization: NormalizationPolicy,
    pub filter: Filter,
    pub gaussian_size: usize,
    pub gaussian_sigma: f64,
    pub kmeans_k: usize,
    pub kmeans_iters: usize,
    pub coord_weight: f64,
    pub meanshift_bandwidth: f64,

    pub method: MethodName,
    pub window: usize,
    pub offset_c: i32,
    pub threshold: u8,
    pub despeckle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub prob_cut: f64,

    pub process: u8,
    /// Apply a single noise kind instead of a whole process.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    pub augment_order: AugmentOrder,
    pub amplitude: f64,
    pub stripe_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_period: Option<usize>,
    pub blur_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub streak_mask: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_dir: Option<PathBuf>,

    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,

    pub thresholds: Vec<u8>,

    pub methods: Vec<MethodName>,
    pub noises: Vec<NoiseKind>,
    pub rescale: bool,
    pub minkowski_study: bool,

    pub train_fraction: f64,

    pub regime: Regime,
    pub coverage: f64,
    pub correlation_length: f64,
    pub width: usize,
    pub height: usize,
    pub feature_count: usize,
    pub texture: f64,
    pub count: usize,
}

impl Default for Params {
    fn default() -> Self {
        let lm = LocalMeanConfig::default();
        let unet = UNetSpec::default();
        let train = TrainConfig::default();
        let noise = NoiseSpec::default();
        let pattern = PatternSpec::default();
        Self {
            seed: 0,
            threads: 1,
            preset: None,
            align_rows: true,
            detrend_degree: 1,
            normalization: NormalizationPolicy::MinMax,
            filter: Filter::None,
            gaussian_size: 5,
            gaussian_sigma: 1.0,
            kmeans_k: KMeansConfig::default().k,
            kmeans_iters: KMeansConfig::default().max_iters,
            coord_weight: 1.0,
            meanshift_bandwidth: MeanShiftConfig::default().bandwidth,
            method: MethodName::Otsu,
            window: lm.window,
            offset_c: lm.offset_c,
            threshold: 128,
            despeckle: false,
            weights: None,
            prob_cut: 0.5,
            process: 3,
            noise: None,
            augment_order: AugmentOrder::NormalizeFirst,
            amplitude: noise.amplitude,
            stripe_count: noise.stripe_count,
            band_period: None,
            blur_sigma: noise.blur_sigma,
            streak_mask: None,
            mask_dir: None,
            depth: unet.depth,
            base_channels: unet.base_channels,
            input_size: unet.input_size,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            thresholds: vec![105, 115, 125, 135],
            methods: vec![MethodName::GlobalMean, MethodName::LocalMean, MethodName::Otsu],
            noises: vec![
                NoiseKind::Stripes,
                NoiseKind::Banding,
                NoiseKind::StreakMask,
                NoiseKind::BackgroundContrast,
                NoiseKind::Blur,
            ],
            rescale: false,
            minkowski_study: false,
            train_fraction: 0.75,
            regime: pattern.regime,
            coverage: pattern.coverage,
            correlation_length: pattern.correlation_length,
            width: pattern.width,
            height: pattern.height,
            feature_count: pattern.feature_count,
            texture: pattern.texture,
            count: 16,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Defaults, then the preset's keys, then the config file's keys, then the
/// flag overrides.
pub fn resolve(config: Option<&Path>, overrides: toml::Table) -> CliResult<Params> {
    let mut table = match toml::Value::try_from(Params::default()).map_err(|e| CliError::Internal(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => unreachable!("params serialise to a table"),
    };
    let file = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some(p) = overrides.get("preset").or_else(|| file.get("preset")) {
        let preset: Preset = p.clone().try_into().map_err(usage)?;
        table.extend(preset.table());
    }
    table.extend(file);
    table.extend(overrides);
    let params: Params = toml::Value::Table(table).try_into().map_err(usage)?;
    params.validate()?;
    Ok(params)
}

impl Params {
    pub fn validate(&self) -> CliResult<()> {
        if self.threads == 0 {
            return Err(usage("threads must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prob_cut) {
            return Err(usage("prob_cut must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn local_mean(&self) -> LocalMeanConfig {
        LocalMeanConfig {
            window: self.window,
            offset_c: self.offset_c,
        }
    }

    pub fn unet_spec(&self) -> UNetSpec {
        UNetSpec {
            depth: self.depth,
            base_channels: self.base_channels,
            input_size: self.input_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.kmeans_k,
            max_iters: self.kmeans_iters,
            seed: self.seed,
            coord_weight: self.coord_weight,
        }
    }

    pub fn meanshift(&self) -> MeanShiftConfig {
        MeanShiftConfig {
            bandwidth: self.meanshift_bandwidth,
            seed: self.seed,
            coord_weight: self.coord_weight,
            ..MeanShiftConfig::default()
        }
    }

    pub fn noise_spec(&self, kind: NoiseKind) -> NoiseSpec {
        NoiseSpec {
            kind,
            amplitude: self.amplitude,
            seed: self.seed,
            stripe_count: self.stripe_count,
            band_period: self.band_period,
            blur_sigma: self.blur_sigma,
            ..NoiseSpec::new(kind)
        }
    }

    pub fn pattern(&self, seed: u64) -> PatternSpec {
        PatternSpec {
            regime: self.regime,
            coverage: self.coverage,
            correlation_length: self.correlation_length,
            seed,
            width: self.width,
            height: self.height,
            feature_count: self.feature_count,
            texture: self.texture,
        }
    }

    /// Builds a segmentation method; the U-Net needs `weights`.
    pub fn segmenter(&self, method: MethodName) -> CliResult<Box<dyn Segmenter + Send + Sync>> {
        let classical = |m: Method| -> CliResult<Box<dyn Segmenter + Send + Sync>> {
            Ok(Box::new(Classical::new(m).with_despeckle(self.despeckle)))
        };
        match method {
            MethodName::GlobalMean => classical(Method::GlobalMean),
            MethodName::LocalMean => {
                let cfg = self.local_mean();
                cfg.validate()?;
                classical(Method::LocalMean(cfg))
            }
            MethodName::Otsu => classical(Method::Otsu),
            MethodName::Fixed => classical(Method::Fixed(self.threshold)),
            MethodName::Unet => {
                let path = self
                    .weights
                    .as_deref()
                    .ok_or_else(|| usage("the unet method needs --weights"))?;
                let mut s = UNetSegmenter::new(io::load_weights(path, None)?);
                s.prob_cut = self.prob_cut;
                Ok(Box::new(s))
            }
        }
    }

    /// Notes flagging settings that are desk choices rather than
    /// published values.
    pub fn provenance_notes(&self, methods: &[MethodName]) -> Vec<String> {
        let mut notes = Vec::new();
        if let Some(p) = self.preset {
            notes.push(format!(
                "preset {p:?} is approximate: it fixes the augmentation process and 2-sigma truncation only"
            ));
        }
        if methods.contains(&MethodName::LocalMean) {
            notes.push(format!(
                "local-mean window={} offset_c={} are non-canonical defaults",
                self.window, self.offset_c
            ));
        }
        notes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        assert_eq!(resolve(None, toml::Table::new()).unwrap(), Params::default());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "window = 21\nmethod = \"local-mean\"\namplitude = 55\nnormalization = \"2\"\n").unwrap();
        let mut flags = toml::Table::new();
        flags.insert("window".into(), toml::Value::Integer(31));
        let params = resolve(Some(&p), flags).unwrap();
        assert_eq!(params.window, 31);
        assert_eq!(params.method, MethodName::LocalMean);
        assert_eq!(params.amplitude, 55.0);
        assert_eq!(params.normalization, NormalizationPolicy::Sigma2);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "windw = 3\n").unwrap();
        let err = resolve(Some(&p), toml::Table::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("windw"));
    }

    #[test]
    fn preset_sits_under_file_and_flags() {
        let mut flags = toml::Table::new();
        flags.insert("preset".into(), toml::Value::String("unet1".into()));
        let p = resolve(None, flags.clone()).unwrap();
        assert_eq!((p.process, p.normalization), (1, NormalizationPolicy::Sigma2));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "preset = \"unet2\"\nnormalization = \"3\"\n").unwrap();
        let p = resolve(Some(&path), toml::Table::new()).unwrap();
        assert_eq!((p.process, p.normalization), (3, NormalizationPolicy::Sigma3));

        flags.insert("process".into(), toml::Value::Integer(2));
        let p = resolve(Some(&path), flags).unwrap();
        assert_eq!((p.preset, p.process), (Some(Preset::Unet1), 2));
    }

    #[test]
    fn json_round_trip() {
        let p = Params {
            noise: Some(NoiseKind::Drift),
            weights: Some("w.bin".into()),
            ..Params::default()
        };
        let back: Params = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
