use rand::Rng;

use super::linalg::{self, ConvGeom};
use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability clamp used by binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Training vs inference behaviour for dropout and batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
        }
    }
}

pub const BN_EPS: f64 = 1e-5;

/// `(outer, len, inner)` sizes around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = self.with_values(&[a, b], |v| {
            if v[0].shape() != v[1].shape() {
                return Err(Error::dim(name, v[0].shape(), v[1].shape()));
            }
            let data = v[0].data().iter().zip(v[1].data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(v[0].shape().to_vec(), data)
        })?;
        Ok(self.push(out, op))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.with_values(&[a], |v| v[0].map(f));
        self.push(out, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Max(a, b))
    }

    /// Elementwise `atan2(y, x)`; defined as 0 with zero gradient at the origin.
    pub fn atan2(&self, y: Var, x: Var) -> Result<Var> {
        self.binary("atan2", y, x, |y, x| if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) }, Op::Atan2(y, x))
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::arg(format!("leaky_relu slope {slope} outside (0,1)")));
        }
        Ok(self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope)))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log of `max(x, floor)`; gradient is zero where the floor is active.
    pub fn log_clamped(&self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor).ln(), Op::Log { x: a, floor })
    }

    pub fn log(&self, a: Var) -> Var {
        self.log_clamped(a, f64::MIN_POSITIVE)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, a: Var) -> Var {
        let out = self.with_values(&[a], |v| Tensor::scalar(v[0].data().iter().sum()));
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let out = self.with_values(&[a], |v| {
            Tensor::scalar(v[0].data().iter().sum::<f64>() / v[0].numel() as f64)
        });
        self.push(out, Op::Mean(a))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.with_values(&[a], |v| v[0].reshape(shape))?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Collapses everything after the batch dimension.
    pub fn flatten(&self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let rest: usize = s[1..].iter().product();
        self.reshape(a, &[s[0], rest.max(1)])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.with_values(&[a], |v| {
            let s = v[0].shape();
            if s.len() != 2 {
                return Err(Error::dim("transpose", s, &[0, 0]));
            }
            Tensor::new(vec![s[1], s[0]], linalg::transpose(v[0].data(), s[0], s[1]))
        })?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.with_values(&[a, b], |v| {
            let (sa, sb) = (v[0].shape(), v[1].shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::dim("matmul", sa, sb));
            }
            let mut c = vec![0.0; sa[0] * sb[1]];
            linalg::gemm_acc(v[0].data(), v[1].data(), &mut c, sa[0], sa[1], sb[1]);
            Tensor::new(vec![sa[0], sb[1]], c)
        })?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Fully connected layer: `x·w + b` for `x:[B,I]`, `w:[I,O]`, `b:[O]`.
    pub fn dense(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = self.with_values(&[x, w, b], |v| {
            let (sx, sw, sb) = (v[0].shape(), v[1].shape(), v[2].shape());
            if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
                return Err(Error::dim("dense", sx, sw));
            }
            if sb != [sw[1]] {
                return Err(Error::dim("dense bias", sw, sb));
            }
            let (bs, i, o) = (sx[0], sx[1], sw[1]);
            let mut c = Vec::with_capacity(bs * o);
            for _ in 0..bs {
                c.extend_from_slice(v[2].data());
            }
            linalg::gemm_acc(v[0].data(), v[1].data(), &mut c, bs, i, o);
            Tensor::new(vec![bs, o], c)
        })?;
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    /// 2-D cross-correlation, `x:[B,C,H,W]`, `k:[F,C,Kh,Kw]`, zero padding.
    pub fn conv2d(&self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::arg("conv2d stride must be >= 1"));
        }
        let out = self.with_values(&[x, k], |v| {
            let (sx, sk) = (v[0].shape(), v[1].shape());
            let g = conv_geom(sx, sk, stride, pad)?;
            let (b, f) = (sx[0], sk[0]);
            let img = g.c * g.h * g.w;
            let mut out = vec![0.0; b * f * g.col_cols()];
            for bi in 0..b {
                let cols = linalg::im2col(&v[0].data()[bi * img..(bi + 1) * img], &g);
                let dst = &mut out[bi * f * g.col_cols()..(bi + 1) * f * g.col_cols()];
                linalg::gemm_acc(v[1].data(), &cols, dst, f, g.col_rows(), g.col_cols());
            }
            Tensor::new(vec![b, f, g.oh, g.ow], out)
        })?;
        Ok(self.push(out, Op::Conv2d { x, k, stride, pad }))
    }

    /// Adds a per-channel bias `b:[C]` to `x:[B,C,H,W]`.
    pub fn channel_bias(&self, x: Var, b: Var) -> Result<Var> {
        let out = self.with_values(&[x, b], |v| {
            let s = v[0].shape();
            if s.len() != 4 || v[1].shape() != [s[1]] {
                return Err(Error::dim("channel_bias", s, v[1].shape()));
            }
            let hw = s[2] * s[3];
            let mut data = v[0].data().to_vec();
            for (idx, chunk) in data.chunks_mut(hw).enumerate() {
                let bias = v[1].data()[idx % s[1]];
                chunk.iter_mut().for_each(|x| *x += bias);
            }
            Tensor::new(s.to_vec(), data)
        })?;
        Ok(self.push(out, Op::ChannelBias { x, b }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample2d_nearest(&self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::arg("upsample factor must be >= 1"));
        }
        let out = self.with_values(&[x], |v| {
            let s = v[0].shape();
            if s.len() != 4 {
                return Err(Error::dim("upsample2d", s, &[0, 0, 0, 0]));
            }
            let (h, w) = (s[2], s[3]);
            let (oh, ow) = (h * factor, w * factor);
            let planes = s[0] * s[1];
            let src = v[0].data();
            let mut data = vec![0.0; planes * oh * ow];
            for p in 0..planes {
                for i in 0..oh {
                    for j in 0..ow {
                        data[(p * oh + i) * ow + j] = src[(p * h + i / factor) * w + j / factor];
                    }
                }
            }
            Tensor::new(vec![s[0], s[1], oh, ow], data)
        })?;
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    /// Batch normalization over `(B,H,W)` per channel.
    ///
    /// In train mode the batch statistics normalize the input and are folded
    /// into `stats` with its momentum (unbiased variance); eval mode reads
    /// `stats` only.
    pub fn batchnorm2d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: Mode,
        stats: &mut RunningStats,
    ) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::arg("batchnorm eps must be positive"));
        }
        let (out, op) = self.with_values(&[x, gamma, beta], |v| {
            let s = v[0].shape();
            if s.len() != 4 {
                return Err(Error::dim("batchnorm2d", s, &[0, 0, 0, 0]));
            }
            let (c, hw) = (s[1], s[2] * s[3]);
            if v[1].shape() != [c] || v[2].shape() != [c] {
                return Err(Error::dim("batchnorm2d affine", s, v[1].shape()));
            }
            if stats.mean.len() != c || stats.var.len() != c {
                return Err(Error::dim("batchnorm2d stats", s, &[stats.mean.len()]));
            }
            let xd = v[0].data();
            let count = (s[0] * hw) as f64;
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; c];
                    for (idx, chunk) in xd.chunks(hw).enumerate() {
                        mean[idx % c] += chunk.iter().sum::<f64>();
                    }
                    mean.iter_mut().for_each(|m| *m /= count);
                    let mut var = vec![0.0; c];
                    for (idx, chunk) in xd.chunks(hw).enumerate() {
                        let m = mean[idx % c];
                        var[idx % c] += chunk.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
                    }
                    var.iter_mut().for_each(|s| *s /= count);
                    (mean, var)
                }
                Mode::Eval => (stats.mean.clone(), stats.var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; xd.len()];
            let mut y = vec![0.0; xd.len()];
            for (idx, chunk) in xd.chunks(hw).enumerate() {
                let ch = idx % c;
                for (t, xv) in chunk.iter().enumerate() {
                    let xh = (xv - mean[ch]) * inv_std[ch];
                    xhat[idx * hw + t] = xh;
                    y[idx * hw + t] = v[1].data()[ch] * xh + v[2].data()[ch];
                }
            }
            if mode == Mode::Train {
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = stats.momentum;
                for ch in 0..c {
                    stats.mean[ch] = (1.0 - m) * stats.mean[ch] + m * mean[ch];
                    stats.var[ch] = (1.0 - m) * stats.var[ch] + m * var[ch] * unbias;
                }
            }
            let op = match mode {
                Mode::Train => Op::BatchNormTrain { x, gamma, beta, xhat, inv_std },
                Mode::Eval => Op::BatchNormEval { x, gamma, beta, xhat, inv_std },
            };
            Ok((Tensor::new(s.to_vec(), y)?, op))
        })?;
        Ok(self.push(out, op))
    }

    /// Inverted dropout. Survivors are scaled by `1/(1-rate)`; eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate {rate} outside [0,1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let (out, mask) = self.with_values(&[x], |v| {
            let mask: Vec<f64> = (0..v[0].numel())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
                .collect();
            let data = v[0].data().iter().zip(&mask).map(|(a, m)| a * m).collect();
            (Tensor::new(v[0].shape().to_vec(), data).expect("same shape"), mask)
        });
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let out = self.with_values(&[x], |v| {
            let s = v[0].shape();
            if axis >= s.len() {
                return Err(Error::arg(format!("softmax axis {axis} for rank {}", s.len())));
            }
            let (outer, len, inner) = axis_split(s, axis);
            let src = v[0].data();
            let mut y = vec![0.0; src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let m = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for k in 0..len {
                        let e = (src[idx(k)] - m).exp();
                        y[idx(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        y[idx(k)] /= z;
                    }
                }
            }
            Tensor::new(s.to_vec(), y)
        })?;
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let out = self.with_values(&[x], |v| {
            let len = *v[0].shape().last().expect("rank >= 1");
            let mut y = v[0].data().to_vec();
            for row in y.chunks_mut(len) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|r| (r - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|r| *r -= lse);
            }
            Tensor::new(v[0].shape().to_vec(), y).expect("same shape")
        });
        self.push(out, Op::LogSoftmax(x))
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    ///
    /// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&self, p: Var, target: &Tensor) -> Result<Var> {
        let out = self.with_values(&[p], |v| {
            if v[0].shape() != target.shape() {
                return Err(Error::dim("bce_loss", v[0].shape(), target.shape()));
            }
            Ok(Tensor::scalar(bce_value(v[0].data(), target.data())))
        })?;
        Ok(self.push(
            out,
            Op::Bce {
                p,
                target: target.data().to_vec(),
            },
        ))
    }

    /// Picks elements by flat index into a rank-1 result.
    pub fn gather(&self, x: Var, index: &[usize]) -> Result<Var> {
        if index.is_empty() {
            return Err(Error::arg("gather with empty index"));
        }
        let out = self.with_values(&[x], |v| {
            let src = v[0].data();
            if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
                return Err(Error::arg(format!("gather index {bad} out of {}", src.len())));
            }
            Ok(Tensor::from_vec(index.iter().map(|&i| src[i]).collect()))
        })?;
        Ok(self.push(
            out,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Row `r` of a 2-D node as a rank-1 node.
    pub fn row(&self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || r >= s[0] {
            return Err(Error::arg(format!("row {r} of shape {s:?}")));
        }
        let idx: Vec<usize> = (r * s[1]..(r + 1) * s[1]).collect();
        self.gather(x, &idx)
    }
}

/// Mean clamped binary cross-entropy on raw slices.
pub fn bce_value(p: &[f64], y: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / p.len() as f64
}

fn conv_geom(sx: &[usize], sk: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
        return Err(Error::dim("conv2d", sx, sk));
    }
    let (h, w, kh, kw) = (sx[2], sx[3], sk[2], sk[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::dim("conv2d", sx, sk));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvGeom {
        c: sx[1],
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
    })
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
    g: &[f64],
) -> Vec<Vec<f64>> {
    let geom = conv_geom(x.shape(), k.shape(), stride, pad).expect("validated in forward");
    let (b, f) = (x.shape()[0], k.shape()[0]);
    debug_assert_eq!(out_shape, [b, f, geom.oh, geom.ow]);
    let img = geom.c * geom.h * geom.w;
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let mut gx = vec![0.0; x.numel()];
    let mut gk = vec![0.0; k.numel()];
    let mut dcols = vec![0.0; rows * ncols];
    for bi in 0..b {
        let cols = linalg::im2col(&x.data()[bi * img..(bi + 1) * img], &geom);
        let gb = &g[bi * f * ncols..(bi + 1) * f * ncols];
        linalg::gemm_nt_acc(gb, &cols, &mut gk, f, ncols, rows);
        dcols.iter_mut().for_each(|v| *v = 0.0);
        linalg::gemm_tn_acc(k.data(), gb, &mut dcols, rows, f, ncols);
        linalg::col2im_acc(&dcols, &geom, &mut gx[bi * img..(bi + 1) * img]);
    }
    vec![gx, gk]
}

pub(crate) fn batchnorm_train_backward(
    shape: &[usize],
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    g: &[f64],
) -> Vec<Vec<f64>> {
    let (c, hw) = (shape[1], shape[2] * shape[3]);
    let count = (shape[0] * hw) as f64;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (idx, (gc, xc)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
        let ch = idx % c;
        sum_g[ch] += gc.iter().sum::<f64>();
        sum_gx[ch] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
    }
    let mut gx = vec![0.0; g.len()];
    for (idx, (gc, xc)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
        let ch = idx % c;
        let scale = gamma[ch] * inv_std[ch] / count;
        for (t, (gv, xh)) in gc.iter().zip(xc).enumerate() {
            gx[idx * hw + t] = scale * (count * gv - sum_g[ch] - xh * sum_gx[ch]);
        }
    }
    vec![gx, sum_gx, sum_g]
}
