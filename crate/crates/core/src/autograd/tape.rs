use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Recorded operation with its parents and whatever the backward pass needs.
///
/// Parents always carry smaller ids than the node itself, so iterating ids in
/// decreasing order is a valid reverse topological order.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Atan2(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    ChannelBias { x: Var, b: Var },
    Upsample { x: Var, factor: usize },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Softmax { x: Var, axis: usize },
    LogSoftmax(Var),
    Bce { p: Var, target: Vec<f64> },
    Gather { x: Var, index: Vec<usize> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of one forward pass.
///
/// A tape is built fresh for every forward pass and is single-threaded; ops take
/// `&self` so calls can nest freely.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Each node is visited once, in decreasing id order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (parent, pg) in node.op.backward(&nodes, &node.value, &g) {
                if !nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(pg),
                }
            }
            // interior gradients are not kept; leaves hold on to theirs
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) if n.requires_grad => {
                    Some(Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    pub(crate) fn with_values<R>(&self, vars: &[Var], f: impl FnOnce(&[&Tensor]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let vals: Vec<&Tensor> = vars.iter().map(|v| nodes[v.0].value.as_ref()).collect();
        f(&vals)
    }
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Min(a, b) | Max(a, b)
            | Atan2(a, b) | MatMul(a, b) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | Relu(a) | LeakyRelu(a, _) | Sigmoid(a) | Exp(a)
            | Sum(a) | Mean(a) | Reshape(a) | Transpose(a) | LogSoftmax(a) => vec![*a],
            Log { x, .. }
            | Upsample { x, .. }
            | Dropout { x, .. }
            | Softmax { x, .. }
            | Gather { x, .. } => vec![*x],
            Bce { p, .. } => vec![*p],
            Dense { x, w, b } => vec![*x, *w, *b],
            Conv2d { x, k, .. } => vec![*x, *k],
            ChannelBias { x, b } => vec![*x, *b],
            BatchNormTrain { x, gamma, beta, .. } | BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }

    fn backward(&self, nodes: &[Node], out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        use Op::*;
        let val = |v: &Var| nodes[v.0].value.as_ref();
        match self {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Div(a, b) => {
                let bv = val(b).data();
                let ga = g.iter().zip(bv).map(|(g, b)| g / b).collect();
                let gb = g
                    .iter()
                    .zip(out.data())
                    .zip(bv)
                    .map(|((g, o), b)| -g * o / b)
                    .collect();
                vec![(*a, ga), (*b, gb)]
            }
            Min(a, b) | Max(a, b) => {
                let is_min = matches!(self, Min(..));
                let (av, bv) = (val(a).data(), val(b).data());
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..g.len() {
                    // ties route to the first operand
                    let pick_a = if is_min { av[i] <= bv[i] } else { av[i] >= bv[i] };
                    if pick_a {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Atan2(y, x) => {
                let (yv, xv) = (val(y).data(), val(x).data());
                let mut gy = vec![0.0; g.len()];
                let mut gx = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let r2 = xv[i] * xv[i] + yv[i] * yv[i];
                    if r2 > 0.0 {
                        gy[i] = g[i] * xv[i] / r2;
                        gx[i] = -g[i] * yv[i] / r2;
                    }
                }
                vec![(*y, gy), (*x, gx)]
            }
            AddScalar(a) => vec![(*a, g.to_vec())],
            MulScalar(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Relu(a) => {
                let av = val(a).data();
                vec![(*a, g.iter().zip(av).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect())]
            }
            LeakyRelu(a, slope) => {
                let av = val(a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(av)
                        .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                        .collect(),
                )]
            }
            Sigmoid(a) => vec![(
                *a,
                g.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect(),
            )],
            Exp(a) => vec![(*a, g.iter().zip(out.data()).map(|(g, e)| g * e).collect())],
            Log { x, floor } => {
                let xv = val(x).data();
                vec![(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, x)| if *x >= *floor { g / x } else { 0.0 })
                        .collect(),
                )]
            }
            Sum(a) => vec![(*a, vec![g[0]; val(a).numel()])],
            Mean(a) => {
                let n = val(a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Reshape(a) => vec![(*a, g.to_vec())],
            Transpose(a) => {
                let s = out.shape();
                vec![(*a, super::linalg::transpose(g, s[0], s[1]))]
            }
            MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                super::linalg::gemm_nt_acc(g, bv.data(), &mut ga, m, n, k);
                super::linalg::gemm_tn_acc(av.data(), g, &mut gb, k, m, n);
                vec![(*a, ga), (*b, gb)]
            }
            Dense { x, w, b } => {
                let (xv, wv) = (val(x), val(w));
                let (bs, i, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                let mut gx = vec![0.0; bs * i];
                let mut gw = vec![0.0; i * o];
                super::linalg::gemm_nt_acc(g, wv.data(), &mut gx, bs, o, i);
                super::linalg::gemm_tn_acc(xv.data(), g, &mut gw, i, bs, o);
                let mut gb = vec![0.0; o];
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Conv2d { x, k, stride, pad } => {
                let (xv, kv) = (val(x), val(k));
                super::ops::conv2d_backward(xv, kv, *stride, *pad, out.shape(), g)
                    .into_iter()
                    .zip([*x, *k])
                    .map(|(gr, v)| (v, gr))
                    .collect()
            }
            ChannelBias { x, b } => {
                let s = out.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let mut gb = vec![0.0; c];
                for (idx, chunk) in g.chunks(hw).enumerate() {
                    gb[idx % c] += chunk.iter().sum::<f64>();
                }
                vec![(*x, g.to_vec()), (*b, gb)]
            }
            Upsample { x, factor } => {
                let s = val(x).shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h * factor, w * factor);
                let planes = s[0] * s[1];
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for i in 0..oh {
                        for j in 0..ow {
                            gx[(p * h + i / factor) * w + j / factor] += g[(p * oh + i) * ow + j];
                        }
                    }
                }
                vec![(*x, gx)]
            }
            BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => super::ops::batchnorm_train_backward(val(x).shape(), val(gamma).data(), xhat, inv_std, g)
                .into_iter()
                .zip([*x, *gamma, *beta])
                .map(|(gr, v)| (v, gr))
                .collect(),
            BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = val(x).shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let gm = val(gamma).data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for (idx, (gc, xc)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = idx % c;
                    for (t, (gv, xh)) in gc.iter().zip(xc).enumerate() {
                        gx[idx * hw + t] = gv * gm[ch] * inv_std[ch];
                        gg[ch] += gv * xh;
                        gbeta[ch] += gv;
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gbeta)]
            }
            Dropout { x, mask } => vec![(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect())],
            Softmax { x, axis } => {
                let (outer, len, inner) = super::ops::axis_split(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            LogSoftmax(x) => {
                let len = *out.shape().last().expect("rank >= 1");
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(len).zip(out.data().chunks(len)).zip(gx.chunks_mut(len)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = gv - yv.exp() * total;
                    }
                }
                vec![(*x, gx)]
            }
            Bce { p, target } => {
                let pv = val(p).data();
                let n = pv.len() as f64;
                let gp = pv
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        if !(super::ops::BCE_EPS..=1.0 - super::ops::BCE_EPS).contains(&p) {
                            0.0
                        } else {
                            g[0] / n * (-y / p + (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                vec![(*p, gp)]
            }
            Gather { x, index } => {
                let mut gx = vec![0.0; val(x).numel()];
                for (gv, &i) in g.iter().zip(index) {
                    gx[i] += gv;
                }
                vec![(*x, gx)]
            }
        }
    }
}
