//! Argument parsing. Flags only ever override config keys of the same name;
//! every command resolves to an [`Invocation`] and goes through [`run::run`].

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{self, Params};
use crate::error::{CliError, CliResult};
use crate::run::{self, CommandName, Invocation};

#[derive(Debug, Parser)]
#[command(name = "spmseg", version, about = "Segmentation toolkit for scanning-probe microscope images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Level, normalise and optionally filter height maps into 8-bit images.
    Preprocess(PreprocessArgs),
    /// Generate noisy image/mask pairs from clean ones.
    Augment(AugmentArgs),
    /// Threshold images into foreground masks.
    Segment(SegmentArgs),
    /// Train a U-Net on image/mask pairs.
    Train(TrainArgs),
    /// Segment images with trained U-Net weights.
    Infer(InferArgs),
    /// Area, perimeter and Euler number of binary masks.
    Minkowski(MinkowskiArgs),
    /// Minkowski numbers across a range of fixed thresholds.
    Sweep(SweepArgs),
    /// Pixel-change robustness of segmentation methods under synthetic noise.
    Robustness(RobustnessArgs),
    /// Curate a JSONL dataset and assign stratified train/test splits.
    Split(SplitArgs),
    /// Generate synthetic patterns with ground-truth masks.
    Synth(SynthArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay(ReplayArgs),
}

/// Flags shared by every command that produces outputs.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// TOML file with parameter defaults; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// unet1 or unet2: augmentation process and truncation of a named recipe.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Height maps (.txt/.asc/.csv matrices or images) or directories.
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub align_rows: Option<bool>,
    /// Polynomial background degree; 0 disables levelling.
    #[arg(long)]
    pub detrend_degree: Option<usize>,
    /// minmax, 1, 2 or 3 (sigma clipping).
    #[arg(long)]
    pub normalization: Option<String>,
    /// none, gaussian, equalize, kmeans or meanshift.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub gaussian_size: Option<usize>,
    #[arg(long)]
    pub gaussian_sigma: Option<f64>,
    #[arg(long)]
    pub kmeans_k: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub coord_weight: Option<f64>,
    #[arg(long)]
    pub meanshift_bandwidth: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentFlags {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub offset_c: Option<i32>,
    #[arg(long)]
    pub threshold: Option<u8>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub despeckle: Option<bool>,
    /// U-Net weight file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub prob_cut: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct NoiseFlags {
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub stripe_count: Option<usize>,
    #[arg(long)]
    pub band_period: Option<usize>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Gray image whose bright pixels mark streak positions.
    #[arg(long)]
    pub streak_mask: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// global-mean, local-mean, otsu, fixed or unet.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub prob_cut: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub despeckle: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Directory holding `<stem>.png` or `<stem>_mask.png` masks.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    /// Augmentation process 1, 2 or 3.
    #[arg(long)]
    pub process: Option<u8>,
    /// Apply only this noise kind instead of a whole process.
    #[arg(long)]
    pub noise: Option<String>,
    /// normalize-first (inputs already normalised) or augment-first.
    #[arg(long)]
    pub augment_order: Option<String>,
    /// Contrast policy used by augment-first: minmax, 1, 2 or 3.
    #[arg(long)]
    pub normalization: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise_flags: NoiseFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Start from these weights instead of a fresh initialisation.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MinkowskiArgs {
    /// Binary mask images (pixels >= 128 are foreground).
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Comma-separated gray levels.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<u8>>,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustnessArgs {
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated noise kinds.
    #[arg(long, value_delimiter = ',')]
    pub noises: Option<Vec<String>>,
    /// Also score on quadrant-rescaled images.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub rescale: Option<bool>,
    /// Also write Minkowski sensitivity statistics.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub minkowski_study: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub seg: SegmentFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise_flags: NoiseFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// JSONL dataset records.
    #[serde(skip)]
    pub records: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub coverage: Option<f64>,
    #[arg(long)]
    pub correlation_length: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub feature_count: Option<usize>,
    #[arg(long)]
    pub texture: Option<f64>,
    /// Number of patterns.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write here instead of the recorded output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Fail unless every output hash matches the manifest.
    #[arg(long)]
    pub verify: bool,
}

/// Turns a flag struct into config overrides, dropping unset flags.
fn overrides(args: &impl Serialize) -> CliResult<toml::Table> {
    let internal = |e: &dyn std::fmt::Display| CliError::Internal(e.to_string());
    let serde_json::Value::Object(map) = serde_json::to_value(args).map_err(|e| internal(&e))? else {
        return Err(CliError::Internal("flags did not serialise to a map".into()));
    };
    let mut table = toml::Table::new();
    for (k, v) in map {
        if v.is_null() {
            continue;
        }
        table.insert(k, toml::Value::try_from(v).map_err(|e| internal(&e))?);
    }
    Ok(table)
}

fn invocation(
    command: CommandName,
    inputs: &[PathBuf],
    common: &Common,
    args: &impl Serialize,
) -> CliResult<(Invocation, PathBuf)> {
    let params: Params = config::resolve(common.config.as_deref(), overrides(args)?)?;
    let inputs = run::resolve_inputs(command, inputs)?;
    Ok((
        Invocation {
            command,
            inputs,
            params,
        },
        common.out.clone(),
    ))
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let manifest = run::read_manifest(&args.manifest)?;
    let out = args.out.clone().unwrap_or_else(|| manifest.output_dir.clone());
    let (_, mismatched) = run::replay(&manifest, &out)?;
    if args.verify && !mismatched.is_empty() {
        let list: Vec<String> = mismatched.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::Data(format!("replay differs from manifest: {}", list.join(", "))));
    }
    Ok(())
}

pub fn run_command(command: &Command) -> CliResult<()> {
    use CommandName as C;
    let (inv, out) = match command {
        Command::Preprocess(a) => invocation(C::Preprocess, &a.inputs, &a.common, a)?,
        Command::Augment(a) => invocation(C::Augment, &a.inputs, &a.common, a)?,
        Command::Segment(a) => invocation(C::Segment, &a.inputs, &a.common, a)?,
        Command::Train(a) => invocation(C::Train, &a.inputs, &a.common, a)?,
        Command::Infer(a) => invocation(C::Infer, &a.inputs, &a.common, a)?,
        Command::Minkowski(a) => invocation(C::Minkowski, &a.inputs, &a.common, a)?,
        Command::Sweep(a) => invocation(C::Sweep, &a.inputs, &a.common, a)?,
        Command::Robustness(a) => invocation(C::Robustness, &a.inputs, &a.common, a)?,
        Command::Split(a) => invocation(C::Split, std::slice::from_ref(&a.records), &a.common, a)?,
        Command::Synth(a) => invocation(C::Synth, &[], &a.common, a)?,
        Command::Replay(a) => return replay(a),
    };
    run::run(&inv, &out).map(|_| ())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = std::panic::catch_unwind(|| run_command(&cli.command));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            3
        }
    }
}
