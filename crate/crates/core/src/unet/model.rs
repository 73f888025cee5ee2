use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ops::{
    concat_skip, concat_skip_backward, conv2d_backward, conv2d_forward, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, upconv2x2_backward, upconv2x2_forward,
};
use super::tensor::Tensor4;
use crate::{Error, Result, Rng};

/// Architecture of a U-Net: `depth` poolings, `base_channels` at the top
/// level doubling per level, same-padded convolutions, sigmoid output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            input_size: 128,
        }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::param("depth", "must be at least 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::param("base_channels", "must be at least 1"));
        }
        if self.depth >= usize::BITS as usize - 1 || self.input_size == 0 || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::param(
                "input_size",
                format!("must be a positive multiple of 2^depth = {}", 1usize << self.depth.min(60)),
            ));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Names and shapes of every parameter tensor, in storage order.
    ///
    /// Convolution weights are `(out, in, k, k)`; up-convolution weights are
    /// `(in, out, 2, 2)`; biases are `(channels, 1, 1, 1)`.
    pub fn parameter_layout(&self) -> Vec<(String, [usize; 4])> {
        fn conv(out: &mut Vec<(String, [usize; 4])>, name: String, cin: usize, cout: usize, k: usize) {
            out.push((format!("{name}.weight"), [cout, cin, k, k]));
            out.push((format!("{name}.bias"), [cout, 1, 1, 1]));
        }
        let mut out = Vec::new();
        let d = self.depth;
        for l in 0..d {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            conv(&mut out, format!("enc{l}.conv1"), cin, self.channels(l), 3);
            conv(&mut out, format!("enc{l}.conv2"), self.channels(l), self.channels(l), 3);
        }
        conv(&mut out, String::from("bottleneck.conv1"), self.channels(d - 1), self.channels(d), 3);
        conv(&mut out, String::from("bottleneck.conv2"), self.channels(d), self.channels(d), 3);
        for l in (0..d).rev() {
            let (cin, cout) = (self.channels(l + 1), self.channels(l));
            out.push((format!("dec{l}.up.weight"), [cin, cout, 2, 2]));
            out.push((format!("dec{l}.up.bias"), [cout, 1, 1, 1]));
            conv(&mut out, format!("dec{l}.conv1"), 2 * cout, cout, 3);
            conv(&mut out, format!("dec{l}.conv2"), cout, cout, 3);
        }
        conv(&mut out, String::from("head"), self.base_channels, 1, 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor4,
}

/// Network parameters in layout order, together with the spec they were
/// built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: UNetSpec,
    pub params: Vec<Param>,
}

/// Scale applied to the output layer's initial weights so that the first
/// predictions sit close to 0.5.
const HEAD_INIT_SCALE: f64 = 0.1;

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// He-normal initialised network; biases start at zero. Values are rounded
/// to `f32` so that saved weights reload bit-identically.
pub fn build_unet(spec: &UNetSpec, seed: u64) -> Result<ModelWeights> {
    spec.validate()?;
    let rng = Rng::new(seed);
    let params = spec
        .parameter_layout()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let tensor = if name.ends_with(".bias") {
                Tensor4::zeros(shape)
            } else {
                let fan_in = if name.contains(".up.") {
                    shape[0]
                } else {
                    shape[1] * shape[2] * shape[3]
                };
                let mut std = libm::sqrt(2.0 / fan_in as f64);
                if name.starts_with("head.") {
                    std *= HEAD_INIT_SCALE;
                }
                let mut r = rng.fork(i as u64);
                Tensor4::from_fn(shape, |_| round_f32(r.normal() * std))
            };
            Param { name, tensor }
        })
        .collect();
    Ok(ModelWeights { spec: *spec, params })
}

impl ModelWeights {
    /// All parameters set to zero.
    pub fn zeros(spec: &UNetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: *spec,
            params: spec
                .parameter_layout()
                .into_iter()
                .map(|(name, shape)| Param {
                    name,
                    tensor: Tensor4::zeros(shape),
                })
                .collect(),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Checks names and shapes against `spec`, naming the first tensor that
    /// disagrees.
    pub fn check_spec(&self, spec: &UNetSpec) -> Result<()> {
        let layout = spec.parameter_layout();
        for (i, (name, shape)) in layout.iter().enumerate() {
            match self.params.get(i) {
                None => return Err(Error::Shape(format!("missing tensor `{name}` {shape:?}"))),
                Some(p) if &p.name != name || p.tensor.shape() != *shape => {
                    return Err(Error::Shape(format!(
                        "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                        p.name,
                        p.tensor.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.params.get(layout.len()) {
            return Err(Error::Shape(format!("unexpected extra tensor `{}`", extra.name)));
        }
        Ok(())
    }

    fn bias(&self, i: usize) -> &[f64] {
        self.params[i].tensor.data()
    }
}

enum Node {
    /// Convolution (3x3 or 1x1) followed by ReLU when `relu`.
    Conv {
        param: usize,
        input: Tensor4,
        output: Option<Tensor4>,
    },
    Pool {
        input_shape: [usize; 4],
        argmax: Vec<usize>,
    },
    /// Stash the current activation's gradient slot for a skip connection.
    Skip(usize),
    Up {
        param: usize,
        input: Tensor4,
    },
    Concat {
        first_channels: usize,
        slot: usize,
    },
}

/// Activations recorded by [`forward`] for the backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    slots: usize,
}

struct Builder<'a> {
    w: &'a ModelWeights,
    next: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn conv(&mut self, x: Tensor4, relu: bool) -> Result<Tensor4> {
        let p = self.next;
        self.next += 2;
        let z = conv2d_forward(&x, &self.w.params[p].tensor, self.w.bias(p + 1))?;
        if relu {
            let y = relu_forward(&z);
            self.nodes.push(Node::Conv {
                param: p,
                input: x,
                output: Some(y.clone()),
            });
            Ok(y)
        } else {
            self.nodes.push(Node::Conv {
                param: p,
                input: x,
                output: None,
            });
            Ok(z)
        }
    }
}

/// Runs the network on `x` of shape `(n, 1, s, s)` and returns the
/// pre-sigmoid logits `(n, 1, s, s)` plus the tape for [`backward`].
pub fn forward(w: &ModelWeights, x: &Tensor4) -> Result<(Tensor4, Tape)> {
    let spec = &w.spec;
    let [_, c, h, wd] = x.shape();
    let m = 1usize << spec.depth;
    if c != 1 || h % m != 0 || wd % m != 0 || h == 0 || wd == 0 {
        return Err(Error::Shape(format!(
            "network input {:?} needs one channel and sides divisible by {m}",
            x.shape()
        )));
    }
    let mut b = Builder {
        w,
        next: 0,
        nodes: Vec::new(),
    };
    let mut skips = Vec::with_capacity(spec.depth);
    let mut h = x.clone();
    for l in 0..spec.depth {
        h = b.conv(h, true)?;
        h = b.conv(h, true)?;
        skips.push(h.clone());
        b.nodes.push(Node::Skip(l));
        let (p, argmax) = maxpool2x2_forward(&h)?;
        b.nodes.push(Node::Pool {
            input_shape: h.shape(),
            argmax,
        });
        h = p;
    }
    h = b.conv(h, true)?;
    h = b.conv(h, true)?;
    for l in (0..spec.depth).rev() {
        let p = b.next;
        b.next += 2;
        let up = upconv2x2_forward(&h, &w.params[p].tensor, w.bias(p + 1))?;
        b.nodes.push(Node::Up { param: p, input: h });
        b.nodes.push(Node::Concat {
            first_channels: up.channels(),
            slot: l,
        });
        h = concat_skip(&up, &skips[l])?;
        h = b.conv(h, true)?;
        h = b.conv(h, true)?;
    }
    let logits = b.conv(h, false)?;
    Ok((
        logits,
        Tape {
            nodes: b.nodes,
            slots: spec.depth,
        },
    ))
}

/// Gradients of a scalar loss with respect to every parameter, given its
/// gradient with respect to the logits. Returned in layout order.
pub fn backward(w: &ModelWeights, tape: Tape, dlogits: Tensor4) -> Result<Vec<Vec<f64>>> {
    let mut grads: Vec<Vec<f64>> = w.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
    let mut skip_grads: Vec<Option<Tensor4>> = (0..tape.slots).map(|_| None).collect();
    let mut g = dlogits;
    for node in tape.nodes.into_iter().rev() {
        match node {
            Node::Conv { param, input, output } => {
                if let Some(y) = output {
                    g = relu_backward(&y, &g)?;
                }
                let cg = conv2d_backward(&input, &w.params[param].tensor, &g)?;
                add_into(&mut grads[param], cg.dw.data());
                add_into(&mut grads[param + 1], &cg.db);
                g = cg.dx;
            }
            Node::Pool { input_shape, argmax } => {
                g = maxpool2x2_backward(input_shape, &argmax, &g)?;
            }
            Node::Skip(slot) => {
                let s = skip_grads[slot]
                    .take()
                    .ok_or_else(|| Error::Shape(format!("skip slot {slot} has no gradient")))?;
                s.same_shape(&g, "skip gradient")?;
                add_into_tensor(&mut g, &s);
            }
            Node::Up { param, input } => {
                let cg = upconv2x2_backward(&input, &w.params[param].tensor, &g)?;
                add_into(&mut grads[param], cg.dw.data());
                add_into(&mut grads[param + 1], &cg.db);
                g = cg.dx;
            }
            Node::Concat { first_channels, slot } => {
                let (main, skip) = concat_skip_backward(&g, first_channels)?;
                skip_grads[slot] = Some(skip);
                g = main;
            }
        }
    }
    Ok(grads)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn add_into_tensor(acc: &mut Tensor4, v: &Tensor4) {
    add_into(acc.data_mut(), v.data());
}
