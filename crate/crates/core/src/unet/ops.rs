//! Forward and backward kernels. Every backward function returns the exact
//! gradient of a scalar loss with respect to the forward inputs, given the
//! gradient `dy` with respect to the forward output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor4;
use crate::{Error, Result};

fn shape_err(msg: alloc::string::String) -> Error {
    Error::Shape(msg)
}

/// Same-padded (zero) stride-1 convolution with a square odd kernel.
/// `w` is `(out, in, k, k)`, `b` has one entry per output channel.
pub fn conv2d_forward(x: &Tensor4, w: &Tensor4, b: &[f64]) -> Result<Tensor4> {
    let [n, cin, h, wd] = x.shape();
    let [cout, wcin, k, k2] = w.shape();
    if wcin != cin || k != k2 || k % 2 == 0 || b.len() != cout {
        return Err(shape_err(format!(
            "conv2d: input {:?}, kernel {:?}, bias {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    let p = (k / 2) as isize;
    let mut y = Tensor4::zeros([n, cout, h, wd]);
    for bi in 0..n {
        for co in 0..cout {
            let out = y.plane_mut(bi, co);
            out.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..cin {
                let inp = x.plane(bi, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.at(co, ci, ky, kx);
                        let dy = ky as isize - p;
                        let dx = kx as isize - p;
                        let (x0, x1) = valid_range(wd, dx);
                        let (y0, y1) = valid_range(h, dy);
                        for yy in y0..y1 {
                            let sy = (yy as isize + dy) as usize;
                            let orow = &mut out[yy * wd + x0..yy * wd + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let irow = &inp[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Output positions `o` in `0..n` whose source `o + d` is inside `0..n`.
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

pub struct ConvGrads {
    pub dx: Tensor4,
    pub dw: Tensor4,
    pub db: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor4, w: &Tensor4, dy: &Tensor4) -> Result<ConvGrads> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, k, _] = w.shape();
    if dy.shape() != [n, cout, h, wd] || w.shape()[1] != cin {
        return Err(shape_err(format!(
            "conv2d backward: input {:?}, kernel {:?}, upstream {:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let p = (k / 2) as isize;
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut db = vec![0.0; cout];
    for bi in 0..n {
        for co in 0..cout {
            let g = dy.plane(bi, co);
            db[co] += g.iter().sum::<f64>();
            for ci in 0..cin {
                let inp = x.plane(bi, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.at(co, ci, ky, kx);
                        let oy = ky as isize - p;
                        let ox = kx as isize - p;
                        let (x0, x1) = valid_range(wd, ox);
                        let (y0, y1) = valid_range(h, oy);
                        let mut acc = 0.0;
                        let dxp = dx.plane_mut(bi, ci);
                        for yy in y0..y1 {
                            let sy = (yy as isize + oy) as usize;
                            let sx0 = (x0 as isize + ox) as usize;
                            let grow = &g[yy * wd + x0..yy * wd + x1];
                            let irow = &inp[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            for (gv, iv) in grow.iter().zip(irow) {
                                acc += gv * iv;
                            }
                            let drow = &mut dxp[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                        let i = dw.index(co, ci, ky, kx);
                        dw.data_mut()[i] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// 2x2 max pooling, stride 2. Returns the output and, for every output
/// element, the flat input index that won (first maximum in scan order).
pub fn maxpool2x2_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(format!("maxpool2x2: odd spatial size {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for bi in 0..n {
        for ch in 0..c {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut best = x.index(bi, ch, 2 * yy, 2 * xx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(bi, ch, 2 * yy + dy, 2 * xx + dx);
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    let o = y.index(bi, ch, yy, xx);
                    y.data_mut()[o] = x.data()[best];
                    arg.push(best);
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2x2_backward(input_shape: [usize; 4], argmax: &[usize], dy: &Tensor4) -> Result<Tensor4> {
    if argmax.len() != dy.len() {
        return Err(shape_err(format!(
            "maxpool2x2 backward: {} indices for {} gradients",
            argmax.len(),
            dy.len()
        )));
    }
    let mut dx = Tensor4::zeros(input_shape);
    for (&i, g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

/// Transposed 2x2 convolution with stride 2 (each input pixel paints a 2x2
/// output block). `w` is `(in, out, 2, 2)`.
pub fn upconv2x2_forward(x: &Tensor4, w: &Tensor4, b: &[f64]) -> Result<Tensor4> {
    let [n, cin, h, wd] = x.shape();
    let [wcin, cout, k1, k2] = w.shape();
    if wcin != cin || k1 != 2 || k2 != 2 || b.len() != cout {
        return Err(shape_err(format!(
            "upconv2x2: input {:?}, kernel {:?}, bias {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    let (oh, ow) = (2 * h, 2 * wd);
    let mut y = Tensor4::zeros([n, cout, oh, ow]);
    for bi in 0..n {
        for co in 0..cout {
            let out = y.plane_mut(bi, co);
            out.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..cin {
                let inp = x.plane(bi, ci);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let wv = w.at(ci, co, dy, dx);
                        for yy in 0..h {
                            let orow = &mut out[(2 * yy + dy) * ow..(2 * yy + dy + 1) * ow];
                            for (xx, iv) in inp[yy * wd..(yy + 1) * wd].iter().enumerate() {
                                orow[2 * xx + dx] += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn upconv2x2_backward(x: &Tensor4, w: &Tensor4, dy: &Tensor4) -> Result<ConvGrads> {
    let [n, cin, h, wd] = x.shape();
    let cout = w.shape()[1];
    if dy.shape() != [n, cout, 2 * h, 2 * wd] || w.shape()[0] != cin {
        return Err(shape_err(format!(
            "upconv2x2 backward: input {:?}, kernel {:?}, upstream {:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let ow = 2 * wd;
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut db = vec![0.0; cout];
    for bi in 0..n {
        for co in 0..cout {
            let g = dy.plane(bi, co);
            db[co] += g.iter().sum::<f64>();
            for ci in 0..cin {
                let inp = x.plane(bi, ci);
                for ddy in 0..2 {
                    for ddx in 0..2 {
                        let wv = w.at(ci, co, ddy, ddx);
                        let mut acc = 0.0;
                        let dxp = dx.plane_mut(bi, ci);
                        for yy in 0..h {
                            let grow = &g[(2 * yy + ddy) * ow..(2 * yy + ddy + 1) * ow];
                            for xx in 0..wd {
                                let gv = grow[2 * xx + ddx];
                                acc += gv * inp[yy * wd + xx];
                                dxp[yy * wd + xx] += wv * gv;
                            }
                        }
                        let i = dw.index(ci, co, ddy, ddx);
                        dw.data_mut()[i] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Uses the forward output: `y > 0` exactly where the input was positive.
pub fn relu_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    y.same_shape(dy, "relu backward")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    y
}

pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    y.same_shape(dy, "sigmoid backward")?;
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (1.0 - s);
    }
    Ok(dx)
}

/// Channel concatenation `[a, b]`.
pub fn concat_skip(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape_err(format!("concat: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut y = Tensor4::zeros([n, ca + cb, h, w]);
    for bi in 0..n {
        for c in 0..ca {
            y.plane_mut(bi, c).copy_from_slice(a.plane(bi, c));
        }
        for c in 0..cb {
            y.plane_mut(bi, ca + c).copy_from_slice(b.plane(bi, c));
        }
    }
    Ok(y)
}

/// Splits the gradient of a concatenation back into its two parts; `ca` is
/// the channel count of the first operand.
pub fn concat_skip_backward(dy: &Tensor4, ca: usize) -> Result<(Tensor4, Tensor4)> {
    let [n, c, h, w] = dy.shape();
    if ca > c {
        return Err(shape_err(format!("concat backward: {ca} channels of {c}")));
    }
    let mut da = Tensor4::zeros([n, ca, h, w]);
    let mut db = Tensor4::zeros([n, c - ca, h, w]);
    for bi in 0..n {
        for ch in 0..ca {
            da.plane_mut(bi, ch).copy_from_slice(dy.plane(bi, ch));
        }
        for ch in ca..c {
            db.plane_mut(bi, ch - ca).copy_from_slice(dy.plane(bi, ch));
        }
    }
    Ok((da, db))
}

/// Mean binary cross-entropy of probabilities `p` against targets `t`,
/// with probabilities clipped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: &Tensor4, t: &Tensor4) -> Result<f64> {
    p.same_shape(t, "bce")?;
    let eps = 1e-12;
    let sum: f64 = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p))
        })
        .sum();
    Ok(sum / p.len().max(1) as f64)
}

/// Gradient of [`bce_loss`] with respect to `p` (unclipped region).
pub fn bce_backward(p: &Tensor4, t: &Tensor4) -> Result<Tensor4> {
    p.same_shape(t, "bce backward")?;
    let n = p.len().max(1) as f64;
    let mut d = p.clone();
    for (g, (&p, &t)) in d.data_mut().iter_mut().zip(p.data().iter().zip(t.data())) {
        *g = (p - t) / (p * (1.0 - p)) / n;
    }
    Ok(d)
}

/// Mean BCE of `sigmoid(z)` computed stably from logits, and its gradient
/// with respect to `z`.
pub fn bce_with_logits(z: &Tensor4, t: &Tensor4) -> Result<(f64, Tensor4)> {
    z.same_shape(t, "bce with logits")?;
    let n = z.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d = z.clone();
    for (g, (&z, &t)) in d.data_mut().iter_mut().zip(z.data().iter().zip(t.data())) {
        loss += z.max(0.0) - z * t + libm::log1p(libm::exp(-libm::fabs(z)));
        *g = (sigmoid(z) - t) / n;
    }
    Ok((loss / n, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    const H: f64 = 1e-3;

    fn rand_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor4 {
        Tensor4::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    fn weighted_sum(y: &Tensor4, r: &Tensor4) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    /// Norm-based relative error between two gradient vectors.
    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / (na + nb).max(1e-300)
    }

    /// Central differences of `f` at every coordinate of `x`.
    fn numeric_grad(x: &Tensor4, mut f: impl FnMut(&Tensor4) -> f64) -> Vec<f64> {
        let mut probe = x.clone();
        (0..x.len())
            .map(|i| {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + H;
                let up = f(&probe);
                probe.data_mut()[i] = orig - H;
                let down = f(&probe);
                probe.data_mut()[i] = orig;
                (up - down) / (2.0 * H)
            })
            .collect()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(1);
        let x = rand_tensor([2, 1, 5, 4], &mut rng);
        let w = Tensor4::new([1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &[0.0]).unwrap(), x);
        let mut w3 = Tensor4::zeros([1, 1, 3, 3]);
        w3.data_mut()[4] = 1.0;
        assert_eq!(conv2d_forward(&x, &w3, &[0.0]).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = Rng::new(2);
        let x = rand_tensor([1, 2, 4, 5], &mut rng);
        let w = rand_tensor([3, 2, 3, 3], &mut rng);
        let b = [0.1, -0.2, 0.3];
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for co in 0..3 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let mut s = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    s += w.at(co, ci, ky, kx) * x.at(0, ci, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    assert!((y.at(0, co, yy, xx) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_constant() {
        let x = Tensor4::from_fn([1, 2, 4, 6], |_| 3.5);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.5));
        assert!(maxpool2x2_forward(&Tensor4::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn conv_gradients() {
        let mut rng = Rng::new(3);
        let x = rand_tensor([2, 2, 5, 4], &mut rng);
        let w = rand_tensor([3, 2, 3, 3], &mut rng);
        let b: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let r = rand_tensor([2, 3, 5, 4], &mut rng);
        let g = conv2d_backward(&x, &w, &r).unwrap();
        let nx = numeric_grad(&x, |x| weighted_sum(&conv2d_forward(x, &w, &b).unwrap(), &r));
        let nw = numeric_grad(&w, |w| weighted_sum(&conv2d_forward(&x, w, &b).unwrap(), &r));
        let bt = Tensor4::new([1, 1, 1, 3], b.clone()).unwrap();
        let nb = numeric_grad(&bt, |b| weighted_sum(&conv2d_forward(&x, &w, b.data()).unwrap(), &r));
        assert!(rel_err(g.dx.data(), &nx) < 1e-5);
        assert!(rel_err(g.dw.data(), &nw) < 1e-5);
        assert!(rel_err(&g.db, &nb) < 1e-5);
    }

    #[test]
    fn upconv_gradients() {
        let mut rng = Rng::new(4);
        let x = rand_tensor([2, 3, 3, 2], &mut rng);
        let w = rand_tensor([3, 2, 2, 2], &mut rng);
        let b = [0.5, -0.25];
        let r = rand_tensor([2, 2, 6, 4], &mut rng);
        let g = upconv2x2_backward(&x, &w, &r).unwrap();
        let nx = numeric_grad(&x, |x| weighted_sum(&upconv2x2_forward(x, &w, &b).unwrap(), &r));
        let nw = numeric_grad(&w, |w| weighted_sum(&upconv2x2_forward(&x, w, &b).unwrap(), &r));
        let bt = Tensor4::new([1, 1, 1, 2], b.to_vec()).unwrap();
        let nb = numeric_grad(&bt, |b| weighted_sum(&upconv2x2_forward(&x, &w, b.data()).unwrap(), &r));
        assert!(rel_err(g.dx.data(), &nx) < 1e-5);
        assert!(rel_err(g.dw.data(), &nw) < 1e-5);
        assert!(rel_err(&g.db, &nb) < 1e-5);
    }

    #[test]
    fn pool_relu_sigmoid_concat_gradients() {
        let mut rng = Rng::new(5);
        let x = rand_tensor([2, 2, 4, 6], &mut rng);

        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        let r = rand_tensor(y.shape(), &mut rng);
        let g = maxpool2x2_backward(x.shape(), &arg, &r).unwrap();
        let n = numeric_grad(&x, |x| weighted_sum(&maxpool2x2_forward(x).unwrap().0, &r));
        assert!(rel_err(g.data(), &n) < 1e-5);

        let r = rand_tensor(x.shape(), &mut rng);
        let g = relu_backward(&relu_forward(&x), &r).unwrap();
        let n = numeric_grad(&x, |x| weighted_sum(&relu_forward(x), &r));
        assert!(rel_err(g.data(), &n) < 1e-5);

        let g = sigmoid_backward(&sigmoid_forward(&x), &r).unwrap();
        let n = numeric_grad(&x, |x| weighted_sum(&sigmoid_forward(x), &r));
        assert!(rel_err(g.data(), &n) < 1e-5);

        let other = rand_tensor([2, 3, 4, 6], &mut rng);
        let r = rand_tensor([2, 5, 4, 6], &mut rng);
        let (ga, gb) = concat_skip_backward(&r, 2).unwrap();
        let na = numeric_grad(&x, |x| weighted_sum(&concat_skip(x, &other).unwrap(), &r));
        let nb = numeric_grad(&other, |o| weighted_sum(&concat_skip(&x, o).unwrap(), &r));
        assert!(rel_err(ga.data(), &na) < 1e-5);
        assert!(rel_err(gb.data(), &nb) < 1e-5);
    }

    #[test]
    fn bce_gradients_and_values() {
        let mut rng = Rng::new(6);
        let z = rand_tensor([1, 1, 4, 4], &mut rng);
        let t = Tensor4::from_fn([1, 1, 4, 4], |i| (i % 3 == 0) as u8 as f64);
        let (loss, g) = bce_with_logits(&z, &t).unwrap();
        let p = sigmoid_forward(&z);
        assert!((loss - bce_loss(&p, &t).unwrap()).abs() < 1e-12);
        let n = numeric_grad(&z, |z| bce_with_logits(z, &t).unwrap().0);
        assert!(rel_err(g.data(), &n) < 1e-5);

        let pg = bce_backward(&p, &t).unwrap();
        let n = numeric_grad(&p, |p| bce_loss(p, &t).unwrap());
        assert!(rel_err(pg.data(), &n) < 1e-5);

        let half = Tensor4::from_fn([1, 1, 4, 4], |_| 0.5);
        assert!((bce_loss(&half, &t).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let zero = Tensor4::zeros([1, 1, 4, 4]);
        assert!((bce_with_logits(&zero, &t).unwrap().0 - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_name_dims() {
        let x = Tensor4::zeros([1, 2, 4, 4]);
        let w = Tensor4::zeros([1, 3, 3, 3]);
        match conv2d_forward(&x, &w, &[0.0]) {
            Err(Error::Shape(msg)) => assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]")),
            other => panic!("{other:?}"),
        }
    }
}
