//! Multi-class clustering used as a denoising pre-filter.
//!
//! Both methods cluster the per-pixel feature vector
//! `(v, v, v, w * x, w * y)`: the gray value repeated in three colour
//! channels followed by the pixel coordinates scaled by `coord_weight`.
//! Every pixel is then replaced by the intensity of its cluster centre.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::quantize;
use crate::image::GrayImage;
use crate::{Error, Result, Rng};

const DIM: usize = 5;
type Feature = [f64; DIM];

fn features(img: &GrayImage, coord_weight: f64) -> Vec<Feature> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y) as f64;
            out.push([v, v, v, coord_weight * x as f64, coord_weight * y as f64]);
        }
    }
    out
}

fn dist2(a: &Feature, b: &Feature) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub coord_weight: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            max_iters: 50,
            seed: 0,
            coord_weight: 1.0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::param("k", "k-means pre-filter needs k >= 3"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.coord_weight > 0.0) {
            return Err(Error::param("coord_weight", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    /// Sum of squared feature distances after each assignment step.
    pub objective_history: Vec<f64>,
    /// Number of clusters actually used; smaller than `k` only when the
    /// image has fewer distinct features than `k`.
    pub clusters: usize,
    pub converged: bool,
    /// Empty clusters re-seeded from the farthest point.
    pub reseeds: usize,
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn kmeans_pp(points: &[Feature], k: usize, rng: &mut Rng) -> Vec<Feature> {
    let mut centres = vec![points[rng.index(points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = points[pick.expect("total > 0 implies a positive weight")];
        for (dd, p) in d2.iter_mut().zip(points) {
            *dd = dd.min(dist2(p, &c));
        }
        centres.push(c);
    }
    centres
}

fn assign(points: &[Feature], centres: &[Feature], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut objective = 0.0;
    for ((p, l), d) in points.iter().zip(labels.iter_mut()).zip(dists.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centres.iter().enumerate() {
            let dd = dist2(p, c);
            if dd < best_d {
                best_d = dd;
                best = j;
            }
        }
        *l = best;
        *d = best_d;
        objective += best_d;
    }
    objective
}

/// Lloyd's k-means on colour + position features.
pub fn kmeans_quantize(img: &GrayImage, cfg: &KMeansConfig) -> Result<(GrayImage, KMeansReport)> {
    cfg.validate()?;
    if img.is_empty() {
        return Err(Error::param("image", "empty image"));
    }
    let points = features(img, cfg.coord_weight);
    let mut rng = Rng::new(cfg.seed);
    let mut centres = kmeans_pp(&points, cfg.k, &mut rng);
    let k = centres.len();

    let n = points.len();
    let mut labels = vec![usize::MAX; n];
    let mut prev = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut reseeds = 0;

    for _ in 0..cfg.max_iters {
        let objective = assign(&points, &centres, &mut labels, &mut dists);
        history.push(objective);
        if labels == prev {
            converged = true;
            break;
        }
        prev.copy_from_slice(&labels);

        let mut sums = vec![[0.0f64; DIM]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for i in 0..DIM {
                sums[l][i] += p[i];
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                for i in 0..DIM {
                    centres[j][i] = sums[j][i] / counts[j] as f64;
                }
            } else {
                // Empty cluster: move it onto the worst-served point.
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
                taken.push(far);
                centres[j] = points[far];
                reseeds += 1;
            }
        }
    }
    if !converged {
        // One last assignment so the output reflects the final centres.
        let objective = assign(&points, &centres, &mut labels, &mut dists);
        history.push(objective);
    }

    let lut: Vec<u8> = centres.iter().map(|c| quantize(c[0])).collect();
    let data = labels.iter().map(|&l| lut[l]).collect();
    let out = GrayImage::new(img.width(), img.height(), data)?;
    Ok((
        out,
        KMeansReport {
            objective_history: history,
            clusters: k,
            converged,
            reseeds,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanShiftConfig {
    /// Window radius `b` in feature space.
    pub bandwidth: f64,
    /// A mode search stops once the mean moves less than this.
    pub convergence_tol: f64,
    /// Cap on mean updates per mode search.
    pub max_iters: usize,
    pub seed: u64,
    /// Scale applied to pixel coordinates; 0 clusters on intensity alone.
    pub coord_weight: f64,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            bandwidth: 40.0,
            convergence_tol: 1e-3,
            max_iters: 100,
            seed: 0,
            coord_weight: 1.0,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::param("bandwidth", "must be positive"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::param("convergence_tol", "must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.coord_weight >= 0.0) {
            return Err(Error::param("coord_weight", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftReport {
    /// Final cluster centres in feature space.
    pub centres: Vec<[f64; 5]>,
    /// Mode searches that ran into `max_iters` before converging.
    pub unconverged_searches: usize,
    pub notes: Vec<String>,
}

struct Cluster {
    centre: Feature,
    votes: BTreeMap<u32, u32>,
}

/// Runs one mode search from `start`, marking every point that falls in a
/// window along the way. Returns the final mean, the per-point window
/// counts, and whether the search converged.
fn mode_search(
    points: &[Feature],
    start: Feature,
    cfg: &MeanShiftConfig,
    visited: &mut [bool],
) -> (Feature, BTreeMap<u32, u32>, bool) {
    let band2 = cfg.bandwidth * cfg.bandwidth;
    let mut mean = start;
    let mut votes = BTreeMap::new();
    for _ in 0..cfg.max_iters {
        let mut sum = [0.0f64; DIM];
        let mut count = 0usize;
        for (i, p) in points.iter().enumerate() {
            if dist2(p, &mean) < band2 {
                *votes.entry(i as u32).or_insert(0) += 1;
                visited[i] = true;
                count += 1;
                for d in 0..DIM {
                    sum[d] += p[d];
                }
            }
        }
        if count == 0 {
            return (mean, votes, true);
        }
        let mut next = [0.0; DIM];
        for d in 0..DIM {
            next[d] = sum[d] / count as f64;
        }
        let shift = libm::sqrt(dist2(&next, &mean));
        mean = next;
        if shift < cfg.convergence_tol {
            return (mean, votes, true);
        }
    }
    (mean, votes, false)
}

/// Mean-shift clustering in the style of the classic window-voting
/// procedure.
///
/// Mode searches start from random not-yet-visited points. A converged mode
/// further than `b / 2` from every existing centre opens a new cluster;
/// otherwise it is merged into the nearest one (centres averaged, votes
/// added). The first search always opens a cluster, and if only one cluster
/// exists once every point has been visited, one more search is forced to
/// open a second, so there are always at least two clusters. Each pixel
/// joins the cluster whose windows contained it most often; ties go to the
/// lower cluster index.
pub fn meanshift_quantize(img: &GrayImage, cfg: &MeanShiftConfig) -> Result<(GrayImage, MeanShiftReport)> {
    cfg.validate()?;
    if img.is_empty() {
        return Err(Error::param("image", "empty image"));
    }
    let points = features(img, cfg.coord_weight);
    let n = points.len();
    let mut rng = Rng::new(cfg.seed);
    let mut visited = vec![false; n];
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut unconverged = 0;

    let absorb = |clusters: &mut Vec<Cluster>, mode: Feature, votes: BTreeMap<u32, u32>, force_new: bool| {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, libm::sqrt(dist2(&c.centre, &mode))))
            .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                Some((_, bd)) if bd <= d => acc,
                _ => Some((i, d)),
            });
        match nearest {
            Some((i, d)) if !force_new && d <= cfg.bandwidth / 2.0 => {
                let c = &mut clusters[i];
                for k in 0..DIM {
                    c.centre[k] = 0.5 * (c.centre[k] + mode[k]);
                }
                for (idx, v) in votes {
                    *c.votes.entry(idx).or_insert(0) += v;
                }
            }
            _ => clusters.push(Cluster { centre: mode, votes }),
        }
    };

    loop {
        let unvisited: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
        if unvisited.is_empty() {
            break;
        }
        let start = points[unvisited[rng.index(unvisited.len())]];
        let (mode, votes, ok) = mode_search(&points, start, cfg, &mut visited);
        if !ok {
            unconverged += 1;
        }
        absorb(&mut clusters, mode, votes, false);
    }
    let mut notes = Vec::new();
    if clusters.len() < 2 {
        let start = points[rng.index(n)];
        let (mode, votes, ok) = mode_search(&points, start, cfg, &mut visited);
        if !ok {
            unconverged += 1;
        }
        absorb(&mut clusters, mode, votes, true);
        notes.push(String::from("second cluster forced by the at-least-two rule"));
    }
    if unconverged > 0 {
        notes.push(alloc::format!(
            "{unconverged} mode searches stopped at max_iters={} before converging",
            cfg.max_iters
        ));
    }

    let mut best = vec![(0u32, usize::MAX); n];
    for (ci, c) in clusters.iter().enumerate() {
        for (&idx, &v) in &c.votes {
            let slot = &mut best[idx as usize];
            if v > slot.0 {
                *slot = (v, ci);
            }
        }
    }
    let lut: Vec<u8> = clusters.iter().map(|c| quantize(c.centre[0])).collect();
    let data = best.iter().map(|&(_, ci)| lut[ci]).collect();
    let out = GrayImage::new(img.width(), img.height(), data)?;
    Ok((
        out,
        MeanShiftReport {
            centres: clusters.iter().map(|c| c.centre).collect(),
            unconverged_searches: unconverged,
            notes,
        },
    ))
}
