//! Command execution. Every command computes its outputs in memory first;
//! files are only written once the whole run has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spmseg_core::analysis::{
    minkowski, noise_sensitivity_study, robustness_study, threshold_sweep, MinkowskiTriple, SENSITIVITY_NOTE,
};
use spmseg_core::augment::{run_process, AugmentationProcess, NoiseSpec};
use spmseg_core::dataset::{curate, stratified_split, synth_pattern, CurationRules, DatasetRecord, Split};
use spmseg_core::preprocess::{
    align_rows, detrend_poly, gaussian_filter, histogram_equalize, kmeans_quantize, meanshift_quantize,
    normalize_contrast,
};
use spmseg_core::rng::derive_seed;
use spmseg_core::segment::{otsu_level, Segmenter};
use spmseg_core::unet::{build_unet, train, TrainConfig};
use spmseg_core::{BinaryMask, GrayImage, HeightMap, Rng};

use crate::config::{AugmentOrder, Filter, MethodName, Params};
use crate::error::{CliError, CliResult};
use crate::io;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandName {
    Preprocess,
    Augment,
    Segment,
    Train,
    Infer,
    Minkowski,
    Sweep,
    Robustness,
    Split,
    Synth,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: CommandName,
    pub inputs: Vec<PathBuf>,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub input_hashes: Vec<FileHash>,
    pub output_dir: PathBuf,
    /// Paths relative to `output_dir`.
    pub outputs: Vec<FileHash>,
    pub notes: Vec<String>,
    pub results: Value,
}

/// Files and metadata produced by one run, not yet on disk.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub notes: Vec<String>,
    pub results: Value,
}

impl RunOutput {
    fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

fn pool(params: &Params) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(params.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// Runs `f` over `items` on the configured pool; results keep input order.
fn par_map<T: Sync, R: Send>(
    params: &Params,
    items: &[T],
    f: impl Fn(&T) -> CliResult<R> + Sync + Send,
) -> CliResult<Vec<R>> {
    pool(params)?.install(|| items.par_iter().map(&f).collect())
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let internal = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(header).map_err(internal)?;
    for r in rows {
        w.write_record(r).map_err(internal)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

fn minkowski_cells(t: &MinkowskiTriple) -> Vec<String> {
    vec![
        t.area.to_string(),
        t.perimeter.to_string(),
        t.euler.to_string(),
        t.area_normalized().to_string(),
        t.perimeter_normalized().to_string(),
        t.euler_normalized().to_string(),
    ]
}

const MINKOWSKI_COLUMNS: [&str; 6] = ["area", "perimeter", "euler", "area_norm", "perimeter_norm", "euler_norm"];

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads each image together with its mask from `mask_dir`.
fn read_pairs(params: &Params, inputs: &[PathBuf]) -> CliResult<Vec<(GrayImage, BinaryMask)>> {
    let dir = params
        .mask_dir
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --mask-dir".into()))?;
    par_map(params, inputs, |p| {
        let img = io::read_gray(p)?;
        let mask = io::read_mask(&io::find_mask(dir, p)?)?;
        if img.dims() != mask.dims() {
            return Err(CliError::Data(format!("{}: mask size differs from image size", p.display())));
        }
        Ok((img, mask))
    })
}

fn preprocess_one(params: &Params, path: &Path) -> CliResult<(GrayImage, Value)> {
    let mut h = io::read_height_map(path)?;
    if params.align_rows && h.height() >= 2 {
        h = align_rows(&h)?;
    }
    if params.detrend_degree > 0 {
        h = detrend_poly(&h, params.detrend_degree)?;
    }
    let g = normalize_contrast(&h, params.normalization);
    Ok(match params.filter {
        Filter::None => (g, Value::Null),
        Filter::Gaussian => (gaussian_filter(&g, params.gaussian_size, params.gaussian_sigma)?, Value::Null),
        Filter::Equalize => (histogram_equalize(&g), Value::Null),
        Filter::Kmeans => {
            let (out, r) = kmeans_quantize(&g, &params.kmeans())?;
            (
                out,
                json!({"clusters": r.clusters, "converged": r.converged, "reseeds": r.reseeds,
                       "objective": r.objective_history.last()}),
            )
        }
        Filter::Meanshift => {
            let (out, r) = meanshift_quantize(&g, &params.meanshift())?;
            (
                out,
                json!({"clusters": r.centres.len(), "unconverged_searches": r.unconverged_searches,
                       "notes": r.notes}),
            )
        }
    })
}

fn cmd_preprocess(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let done = par_map(params, inputs, |p| preprocess_one(params, p))?;
    let mut out = RunOutput::default();
    let mut results = Vec::new();
    for (p, (img, info)) in inputs.iter().zip(done) {
        let name = format!("{}.png", io::stem(p));
        out.add(&name, io::encode_png(&img)?);
        results.push(json!({"input": name_of(p), "output": name, "filter": info}));
    }
    out.results = Value::Array(results);
    Ok(out)
}

fn cmd_segment(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let method = params.method;
    let seg = params.segmenter(method)?;
    let done = par_map(params, inputs, |p| {
        let img = io::read_gray(p)?;
        let mask = seg.segment(&img)?;
        let threshold = match method {
            MethodName::Otsu => Some(otsu_level(&img)),
            MethodName::Fixed => Some(params.threshold),
            _ => None,
        };
        Ok((mask, threshold))
    })?;
    let mut out = RunOutput::default();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (p, (mask, t)) in inputs.iter().zip(done) {
        let name = format!("{}_mask.png", io::stem(p));
        out.add(&name, io::encode_png(&spmseg_core::image::mask_to_gray(&mask))?);
        let frac = mask.count_true() as f64 / mask.len().max(1) as f64;
        rows.push(vec![
            name_of(p),
            seg.name(),
            t.map(|v| v.to_string()).unwrap_or_default(),
            frac.to_string(),
        ]);
        results.push(json!({"input": name_of(p), "mask": name, "threshold": t}));
    }
    out.add("segment.csv", csv_bytes(&["image", "method", "threshold", "foreground_fraction"], &rows)?);
    out.notes = params.provenance_notes(&[method]);
    out.results = Value::Array(results);
    Ok(out)
}

fn read_streak_mask(params: &Params) -> CliResult<Option<GrayImage>> {
    params.streak_mask.as_deref().map(io::read_gray).transpose()
}

fn cmd_augment(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let pairs = read_pairs(params, inputs)?;
    let template = params.noise_spec(params.noise.unwrap_or(spmseg_core::augment::NoiseKind::Stripes));
    let process = match params.noise {
        Some(kind) => AugmentationProcess {
            id: 0,
            variants: vec![params.noise_spec(kind)],
        },
        None => AugmentationProcess::standard(params.process, &template)?,
    };
    let streak = read_streak_mask(params)?;
    let mut augmented = run_process(&pairs, &process, streak.as_ref(), params.seed)?;
    if params.augment_order == AugmentOrder::AugmentFirst {
        for a in &mut augmented {
            let raw = HeightMap::from_fn(a.image.width(), a.image.height(), |x, y| a.image.get(x, y) as f64)?;
            a.image = normalize_contrast(&raw, params.normalization);
        }
    }
    let mut out = RunOutput::default();
    let mut rows = Vec::new();
    for a in &augmented {
        let stem = io::stem(&inputs[a.source_index]);
        let img_name = format!("{stem}__{}.png", a.kind);
        let mask_name = format!("{stem}__{}_mask.png", a.kind);
        out.add(&img_name, io::encode_png(&a.image)?);
        out.add(&mask_name, io::encode_png(&spmseg_core::image::mask_to_gray(&a.mask))?);
        rows.push(vec![
            name_of(&inputs[a.source_index]),
            a.kind.to_string(),
            img_name,
            mask_name,
            a.label_misaligned.to_string(),
        ]);
    }
    out.add(
        "pairs.csv",
        csv_bytes(&["source", "noise", "image", "mask", "label_misaligned"], &rows)?,
    );
    out.notes.push(format!(
        "augmentation amplitude={} band_period={:?} are non-canonical defaults",
        params.amplitude, params.band_period
    ));
    if streak.is_none() && process.variants.iter().any(|v| v.kind == spmseg_core::augment::NoiseKind::StreakMask) {
        out.notes.push("no streak mask supplied; a seeded synthetic streak mask was used".into());
    }
    if params.augment_order == AugmentOrder::AugmentFirst {
        out.notes.push(format!(
            "contrast normalised after augmentation (policy {})",
            params.normalization
        ));
    }
    out.notes.extend(params.provenance_notes(&[]));
    out.results = json!({"pairs": augmented.len()});
    Ok(out)
}

fn cmd_train(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let pairs = read_pairs(params, inputs)?;
    let spec = params.unet_spec();
    let init = match params.weights.as_deref() {
        Some(p) => io::load_weights(p, Some(&spec))?,
        None => build_unet(&spec, params.seed)?,
    };
    let cfg: TrainConfig = params.train_config();
    let (weights, report) = train(&init, &pairs, &cfg)?;
    let mut out = RunOutput::default();
    out.add("weights.bin", spmseg_core::unet::weights::to_bytes(&weights, &cfg.optimizer_summary()));
    let mut rows = vec![vec!["0".to_string(), report.initial_loss.to_string()]];
    for (i, l) in report.epoch_losses.iter().enumerate() {
        rows.push(vec![(i + 1).to_string(), l.to_string()]);
    }
    out.add("loss.csv", csv_bytes(&["epoch", "mean_loss"], &rows)?);
    out.notes.extend(params.provenance_notes(&[]));
    out.notes.push(
        "U-Net hyperparameters are desk-scale choices; the optimizer is Adam (beta1=0.9, beta2=0.999, eps=1e-8)".into(),
    );
    out.results = json!({
        "initial_loss": report.initial_loss,
        "final_loss": report.epoch_losses.last(),
        "parameters": weights.parameter_count(),
    });
    Ok(out)
}

fn cmd_minkowski(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let triples = par_map(params, inputs, |p| Ok(minkowski(&io::read_mask(p)?)))?;
    let rows: Vec<Vec<String>> = inputs
        .iter()
        .zip(&triples)
        .map(|(p, t)| {
            let mut r = vec![name_of(p)];
            r.extend(minkowski_cells(t));
            r
        })
        .collect();
    let mut header = vec!["mask"];
    header.extend(MINKOWSKI_COLUMNS);
    let mut out = RunOutput::default();
    out.add("minkowski.csv", csv_bytes(&header, &rows)?);
    out.notes
        .push("foreground 8-connected, holes 4-connected; normalised values divide by the pixel count".into());
    Ok(out)
}

fn cmd_sweep(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let sweeps = par_map(params, inputs, |p| Ok(threshold_sweep(&io::read_gray(p)?, &params.thresholds)))?;
    let mut rows = Vec::new();
    for (p, sweep) in inputs.iter().zip(&sweeps) {
        for row in sweep {
            let mut r = vec![name_of(p), row.threshold.to_string()];
            r.extend(minkowski_cells(&row.minkowski));
            rows.push(r);
        }
    }
    let mut header = vec!["image", "threshold"];
    header.extend(MINKOWSKI_COLUMNS);
    let mut out = RunOutput::default();
    out.add("sweep.csv", csv_bytes(&header, &rows)?);
    Ok(out)
}

fn cmd_robustness(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let images = par_map(params, inputs, |p| io::read_gray(p))?;
    let segs = params
        .methods
        .iter()
        .map(|&m| params.segmenter(m))
        .collect::<CliResult<Vec<_>>>()?;
    let noises: Vec<NoiseSpec> = params.noises.iter().map(|&k| params.noise_spec(k)).collect();
    let streak = read_streak_mask(params)?;

    // One study per method, run in parallel; rows keep method order.
    let reports = par_map(params, &segs, |s| {
        let m: [&dyn Segmenter; 1] = [s.as_ref()];
        Ok(robustness_study(&images, &m, &noises, params.rescale, streak.as_ref())?)
    })?;
    let mut rows = Vec::new();
    let mut per_image = Vec::new();
    for r in reports.iter().flatten() {
        rows.push(vec![
            r.method.clone(),
            r.noise.to_string(),
            r.rescaled.to_string(),
            r.mean_fraction.to_string(),
            r.per_image.len().to_string(),
        ]);
        for (p, f) in inputs.iter().zip(&r.per_image) {
            per_image.push(vec![r.method.clone(), r.noise.to_string(), name_of(p), f.to_string()]);
        }
    }
    let mut out = RunOutput::default();
    out.add(
        "robustness.csv",
        csv_bytes(&["method", "noise", "rescaled", "mean_pixel_change", "images"], &rows)?,
    );
    out.add(
        "robustness_per_image.csv",
        csv_bytes(&["method", "noise", "image", "pixel_change"], &per_image)?,
    );
    if params.minkowski_study {
        let studies = par_map(params, &segs, |s| {
            let m: [&dyn Segmenter; 1] = [s.as_ref()];
            Ok(noise_sensitivity_study(&images, &m, &noises, streak.as_ref())?)
        })?;
        let rows: Vec<Vec<String>> = studies
            .iter()
            .flatten()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.noise.to_string(),
                    r.euler_mean_abs_diff.to_string(),
                    r.area_relative_diff.to_string(),
                    r.perimeter_relative_diff.to_string(),
                ]
            })
            .collect();
        out.add(
            "sensitivity.csv",
            csv_bytes(
                &["method", "noise", "euler_mean_abs_diff", "area_relative_diff", "perimeter_relative_diff"],
                &rows,
            )?,
        );
        out.notes.push(format!("sensitivity statistics: {SENSITIVITY_NOTE}"));
    }
    out.notes.extend(params.provenance_notes(&params.methods));
    if params.rescale {
        out.notes
            .push("rescale: each image split into quadrants, each pixel-doubled back to full size".into());
    }
    Ok(out)
}

fn cmd_split(params: &Params, inputs: &[PathBuf]) -> CliResult<RunOutput> {
    let [input] = inputs else {
        return Err(CliError::Usage("split takes exactly one records file".into()));
    };
    let mut records = io::read_records(input)?;
    let report = curate(&mut records, &CurationRules::default());
    stratified_split(&mut records, params.train_fraction)?;
    let count = |s: Split| records.iter().filter(|r| r.split == s).count();
    let mut out = RunOutput::default();
    out.add("records.jsonl", io::records_to_jsonl(&records)?);
    out.notes.push("strata with n >= 2 send ceil((1 - train_fraction) * n) records to test".into());
    out.results = json!({
        "curation": report,
        "train": count(Split::Train),
        "test": count(Split::Test),
        "excluded": count(Split::Excluded),
        "unet_trainable": records.iter().filter(|r| r.unet_trainable()).count(),
    });
    Ok(out)
}

fn cmd_synth(params: &Params) -> CliResult<RunOutput> {
    let seeds: Vec<u64> = (0..params.count as u64).map(|i| derive_seed(params.seed, i)).collect();
    let pairs = par_map(params, &seeds, |&s| Ok(synth_pattern(&params.pattern(s))?))?;
    let mut out = RunOutput::default();
    let mut records = Vec::new();
    for (i, ((img, mask), &s)) in pairs.iter().zip(&seeds).enumerate() {
        let img_name = format!("synth_{i:03}.png");
        let mask_name = format!("synth_{i:03}_mask.png");
        out.add(&img_name, io::encode_png(img)?);
        out.add(&mask_name, io::encode_png(&spmseg_core::image::mask_to_gray(mask))?);
        let mut r = DatasetRecord::new(img_name, Some(params.regime), Rng::new(s).next_f64());
        r.mask = Some(mask_name);
        records.push(r);
    }
    out.add("records.jsonl", io::records_to_jsonl(&records)?);
    out.results = json!({"pairs": pairs.len()});
    Ok(out)
}

/// Resolves input paths for a command (directories expanded, order fixed).
pub fn resolve_inputs(command: CommandName, inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    match command {
        CommandName::Synth => Ok(Vec::new()),
        CommandName::Split => io::expand_inputs(inputs, &["jsonl", "json"], false),
        CommandName::Preprocess => io::height_inputs(inputs),
        CommandName::Minkowski => io::mask_inputs(inputs),
        _ => io::image_inputs(inputs),
    }
}

pub fn execute(inv: &Invocation) -> CliResult<RunOutput> {
    let (p, i) = (&inv.params, inv.inputs.as_slice());
    match inv.command {
        CommandName::Preprocess => cmd_preprocess(p, i),
        CommandName::Augment => cmd_augment(p, i),
        CommandName::Segment => cmd_segment(p, i),
        CommandName::Infer => cmd_segment(
            &Params {
                method: MethodName::Unet,
                ..p.clone()
            },
            i,
        ),
        CommandName::Train => cmd_train(p, i),
        CommandName::Minkowski => cmd_minkowski(p, i),
        CommandName::Sweep => cmd_sweep(p, i),
        CommandName::Robustness => cmd_robustness(p, i),
        CommandName::Split => cmd_split(p, i),
        CommandName::Synth => cmd_synth(p),
    }
}

/// Writes every output plus the manifest. If any write fails, the files
/// written so far (and the directory, if this call created it) are removed.
pub fn write_outputs(inv: &Invocation, out_dir: &Path, output: RunOutput) -> CliResult<Manifest> {
    let created = !out_dir.exists();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        fs::create_dir_all(out_dir).map_err(|e| CliError::write(out_dir, e))?;
        let mut outputs = Vec::new();
        for (rel, bytes) in &output.files {
            let path = out_dir.join(rel);
            io::write_bytes(&path, bytes)?;
            written.push(path);
            outputs.push(FileHash {
                path: rel.clone(),
                sha256: io::sha256_hex(bytes),
            });
        }
        let input_hashes = inv
            .inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.clone(),
                    sha256: io::sha256_file(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            invocation: inv.clone(),
            input_hashes,
            output_dir: out_dir.to_path_buf(),
            outputs,
            notes: output.notes.clone(),
            results: output.results.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        let mpath = out_dir.join(MANIFEST_NAME);
        io::write_bytes(&mpath, format!("{text}\n").as_bytes())?;
        written.push(mpath);
        Ok(manifest)
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created {
            let _ = fs::remove_dir_all(out_dir);
        }
    }
    result
}

pub fn run(inv: &Invocation, out_dir: &Path) -> CliResult<Manifest> {
    let output = execute(inv)?;
    write_outputs(inv, out_dir, output)
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Re-runs a manifest's invocation into `out_dir` and returns the new
/// manifest plus the outputs whose hashes differ from the recorded ones.
pub fn replay(manifest: &Manifest, out_dir: &Path) -> CliResult<(Manifest, Vec<PathBuf>)> {
    let fresh = run(&manifest.invocation, out_dir)?;
    let mut mismatched: Vec<PathBuf> = Vec::new();
    for old in &manifest.outputs {
        match fresh.outputs.iter().find(|n| n.path == old.path) {
            Some(n) if n.sha256 == old.sha256 => {}
            _ => mismatched.push(old.path.clone()),
        }
    }
    for new in &fresh.outputs {
        if !manifest.outputs.iter().any(|o| o.path == new.path) {
            mismatched.push(new.path.clone());
        }
    }
    Ok((fresh, mismatched))
}
