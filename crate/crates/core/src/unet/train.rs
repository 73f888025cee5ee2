use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::model::{backward, forward, ModelWeights};
use super::ops::{bce_with_logits, sigmoid};
use super::tensor::Tensor4;
use crate::image::{ensure_same_dims, BinaryMask, GrayImage};
use crate::segment::Segmenter;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("beta", "Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        Ok(())
    }

    /// One-line description recorded alongside trained weights.
    pub fn optimizer_summary(&self) -> String {
        format!(
            "adam lr={} beta1={} beta2={} eps={} batch={} epochs={} seed={}",
            self.learning_rate, self.beta1, self.beta2, self.epsilon, self.batch_size, self.epochs, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss over the whole training set before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Scales an image to `[0, 1]` at `size x size` (nearest neighbour).
pub fn image_tensor(img: &GrayImage, size: usize) -> Tensor4 {
    let r = if img.dims() == (size, size) {
        img.clone()
    } else {
        img.resize_nearest(size, size)
    };
    Tensor4::from_fn([1, 1, size, size], |i| r.data()[i] as f64 / 255.0)
}

pub fn mask_tensor(m: &BinaryMask, size: usize) -> Tensor4 {
    let r = if m.dims() == (size, size) {
        m.clone()
    } else {
        m.resize_nearest(size, size)
    };
    Tensor4::from_fn([1, 1, size, size], |i| r.data()[i] as u8 as f64)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(w: &ModelWeights) -> Self {
        let zeros = || w.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update; parameters are rounded to `f32` afterwards so the model
    /// is always exactly representable in the weight file.
    fn step(&mut self, w: &mut ModelWeights, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(cfg.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, self.t as f64);
        for (pi, p) in w.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (i, val) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grads[pi][i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *val = (*val - cfg.learning_rate * mh / (libm::sqrt(vh) + cfg.epsilon)) as f32 as f64;
            }
        }
    }
}

/// Mean per-pixel BCE of the model over a set of pairs.
pub fn mean_loss(w: &ModelWeights, pairs: &[(Tensor4, Tensor4)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in pairs {
        let (z, _) = forward(w, x)?;
        total += bce_with_logits(&z, t)?.0;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Minibatch Adam on mean BCE. Each epoch visits the pairs in a fresh
/// seeded order; a minibatch's loss is the mean of its per-image losses.
/// Single-threaded and bit-reproducible for a given seed.
pub fn train(
    model: &ModelWeights,
    pairs: &[(GrayImage, BinaryMask)],
    cfg: &TrainConfig,
) -> Result<(ModelWeights, TrainReport)> {
    cfg.validate()?;
    model.check_spec(&model.spec)?;
    if pairs.is_empty() {
        return Err(Error::param("pairs", "training needs at least one pair"));
    }
    let size = model.spec.input_size;
    let data: Vec<(Tensor4, Tensor4)> = pairs
        .iter()
        .map(|(img, m)| {
            ensure_same_dims(img.dims(), m.dims())?;
            Ok((image_tensor(img, size), mask_tensor(m, size)))
        })
        .collect::<Result<_>>()?;

    let mut w = model.clone();
    let initial_loss = mean_loss(&w, &data)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let mut adam = Adam::new(&w);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut batches = 0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = w.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            let mut loss = 0.0;
            for &i in batch {
                let (x, t) = &data[i];
                let (z, tape) = forward(&w, x)?;
                let (l, mut dz) = bce_with_logits(&z, t)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                loss += l * scale;
                dz.data_mut().iter_mut().for_each(|v| *v *= scale);
                for (acc, g) in grads.iter_mut().zip(backward(&w, tape, dz)?) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            adam.step(&mut w, &grads, cfg);
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok((
        w,
        TrainReport {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Per-pixel foreground probabilities at the network's input size.
pub fn predict_probabilities(model: &ModelWeights, img: &GrayImage) -> Result<Tensor4> {
    let (z, _) = forward(model, &image_tensor(img, model.spec.input_size))?;
    let mut p = z;
    p.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(p)
}

/// Segments `img` at its own size: resample to the network size, mark
/// pixels with probability `>= prob_cut`, resample the mask back.
pub fn infer(model: &ModelWeights, img: &GrayImage, prob_cut: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&prob_cut) {
        return Err(Error::param("prob_cut", "must lie in [0, 1]"));
    }
    let s = model.spec.input_size;
    let p = predict_probabilities(model, img)?;
    let m = BinaryMask::new(s, s, p.data().iter().map(|&v| v >= prob_cut).collect())?;
    Ok(if img.dims() == (s, s) {
        m
    } else {
        m.resize_nearest(img.width(), img.height())
    })
}

/// Fraction of pixels where the predicted mask agrees with the label.
pub fn pixel_accuracy(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(1.0 - crate::analysis::pixel_change_fraction(pred, truth)?)
}

/// A trained model used as a segmentation method.
#[derive(Debug, Clone)]
pub struct UNetSegmenter {
    pub model: ModelWeights,
    pub prob_cut: f64,
    pub label: String,
}

impl UNetSegmenter {
    pub fn new(model: ModelWeights) -> Self {
        Self {
            model,
            prob_cut: 0.5,
            label: String::from("unet"),
        }
    }
}

impl Segmenter for UNetSegmenter {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn segment(&self, img: &GrayImage) -> Result<BinaryMask> {
        infer(&self.model, img, self.prob_cut)
    }
}
