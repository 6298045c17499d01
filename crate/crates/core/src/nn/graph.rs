//! Reverse-mode automatic differentiation over a flat tape of NCHW tensors.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep
//! visits every consumer before its inputs. Only nodes downstream of a
//! trainable leaf carry gradients.

use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use super::losses::{self, DepthBinSpec};
use super::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    UpsampleBilinear {
        x: Var,
        factor: usize,
    },
    AvgPool {
        x: Var,
        factor: usize,
    },
    Softmax {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Entropy {
        x: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Ln {
        x: Var,
    },
    MulBroadcast {
        x: Var,
        m: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    DepthDecode {
        x: Var,
        spec: Arc<DepthBinSpec>,
    },
    CrossEntropy {
        x: Var,
        labels: Arc<[u8]>,
        ignore: u8,
    },
    BerHu {
        x: Var,
        target: Arc<Tensor>,
    },
    Bce {
        x: Var,
        target: Arc<Tensor>,
    },
    NegLogMean {
        x: Var,
    },
    NegLog1mMean {
        x: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients of one scalar with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), geom);
        self.push(out, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    /// Which side of the kink every (leaky) ReLU input lies on, in tape
    /// order. Two parameter points with equal patterns share one linear
    /// region of every rectifier, so finite differences between them are
    /// well defined.
    pub fn rectifier_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x, .. } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        if factor == 1 {
            return x;
        }
        let out = kernels::upsample_bilinear_forward(self.value(x), factor);
        self.push(out, Op::UpsampleBilinear { x, factor }, &[x])
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Var {
        if factor == 1 {
            return x;
        }
        let out = kernels::avg_pool_forward(self.value(x), factor);
        self.push(out, Op::AvgPool { x, factor }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = losses::softmax_raw(self.value(x));
        self.push(out, Op::Softmax { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = losses::sigmoid_tensor(self.value(x));
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    pub fn entropy(&mut self, x: Var) -> Var {
        let out = losses::entropy_raw(self.value(x));
        self.push(out, Op::Entropy { x }, &[x])
    }

    /// `x * scale + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| v * scale + shift);
        self.push(out, Op::Affine { x, scale }, &[x])
    }

    /// Natural log with the input clamped below at the log epsilon.
    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(losses::LOG_EPS).ln());
        self.push(out, Op::Ln { x }, &[x])
    }

    /// Multiplies every channel of `x` by the single-channel map `m`.
    pub fn mul_broadcast(&mut self, x: Var, m: Var) -> Var {
        let out = losses::mul_channel_broadcast(self.value(x), self.value(m));
        self.push(out, Op::MulBroadcast { x, m }, &[x, m])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = losses::concat_channels(&refs);
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        )
    }

    pub fn depth_decode(&mut self, probs: Var, spec: Arc<DepthBinSpec>) -> Var {
        let out = losses::depth_decode_raw(self.value(probs), &spec);
        self.push(out, Op::DepthDecode { x: probs, spec }, &[probs])
    }

    /// Mean cross entropy of a probability map; the caller guarantees at
    /// least one counted pixel.
    pub fn cross_entropy(&mut self, probs: Var, labels: Arc<[u8]>, ignore: u8) -> crate::Result<Var> {
        let loss = losses::cross_entropy_raw(self.value(probs), &labels, ignore)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                x: probs,
                labels,
                ignore,
            },
            &[probs],
        ))
    }

    pub fn berhu(&mut self, pred: Var, target: Arc<Tensor>) -> crate::Result<Var> {
        let loss = losses::berhu_loss(self.value(pred), &target)?;
        Ok(self.push(Tensor::scalar(loss), Op::BerHu { x: pred, target }, &[pred]))
    }

    /// Binary cross entropy against a `{0, 1}` target of the same shape.
    pub fn bce(&mut self, pred: Var, target: Arc<Tensor>) -> Var {
        let loss = losses::bce_raw(self.value(pred), &target);
        self.push(Tensor::scalar(loss), Op::Bce { x: pred, target }, &[pred])
    }

    /// `mean(-ln x)`.
    pub fn neg_log_mean(&mut self, x: Var) -> Var {
        let loss = losses::neg_log_mean(self.value(x));
        self.push(Tensor::scalar(loss), Op::NegLogMean { x }, &[x])
    }

    /// `mean(-ln(1 - x))`.
    pub fn neg_log1m_mean(&mut self, x: Var) -> Var {
        let loss = losses::neg_log1m_mean(self.value(x));
        self.push(Tensor::scalar(loss), Op::NegLog1mMean { x }, &[x])
    }

    /// Weighted sum of scalar nodes. Zero-weight terms contribute no gradient.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let live: Vec<Var> = terms.iter().filter(|t| t.1 != 0.0).map(|t| t.0).collect();
        let terms = terms.iter().copied().filter(|t| t.1 != 0.0).collect();
        self.push(Tensor::scalar(total), Op::WeightedSum { terms }, &live)
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let scale_scalar = |t: Tensor| {
            let mut t = t;
            t.scale(dy.data()[0]);
            t
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *geom,
                    self.tracked(*x),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::LeakyRelu { x, slope } => {
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if v <= 0.0 {
                        *d *= slope;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::UpsampleBilinear { x, factor } => {
                let dx = kernels::upsample_bilinear_backward(dy, self.shape(*x), *factor);
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, factor } => {
                let dx = kernels::avg_pool_backward(dy, self.shape(*x), *factor);
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax { x } => {
                let dx = losses::softmax_grad(&node.value, dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let mut dx = dy.clone();
                for (d, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= s * (1.0 - s);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Entropy { x } => {
                let dx = losses::entropy_grad(self.value(*x), dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Affine { x, scale } => {
                let mut dx = dy.clone();
                dx.scale(*scale);
                self.accumulate(grads, *x, dx);
            }
            Op::Ln { x } => {
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *d = if v > losses::LOG_EPS { *d / v } else { 0.0 };
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MulBroadcast { x, m } => {
                let xv = self.value(*x);
                let mv = self.value(*m);
                if self.tracked(*x) {
                    let dx = losses::mul_channel_broadcast(dy, mv);
                    self.accumulate(grads, *x, dx);
                }
                if self.tracked(*m) {
                    let s = xv.shape();
                    let mut dm = Tensor::zeros(mv.shape());
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let a = xv.channel(n, c);
                            let g = dy.channel(n, c);
                            let dst = dm.sample_mut(n);
                            for i in 0..s.plane() {
                                dst[i] += a[i] * g[i];
                            }
                        }
                    }
                    self.accumulate(grads, *m, dm);
                }
            }
            Op::Concat { parts } => {
                let s = dy.shape();
                let mut off = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    if self.tracked(p) {
                        let mut dp = Tensor::zeros(ps);
                        let len = ps.c * ps.plane();
                        for n in 0..s.n {
                            dp.sample_mut(n).copy_from_slice(&dy.sample(n)[off..off + len]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    off += ps.c * ps.plane();
                }
            }
            Op::DepthDecode { x, spec } => {
                let dx = losses::depth_decode_grad(self.value(*x), &node.value, spec, dy);
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { x, labels, ignore } => {
                let dx = losses::cross_entropy_grad(self.value(*x), labels, *ignore);
                self.accumulate(grads, *x, scale_scalar(dx));
            }
            Op::BerHu { x, target } => {
                let dx = losses::berhu_grad(self.value(*x), target);
                self.accumulate(grads, *x, scale_scalar(dx));
            }
            Op::Bce { x, target } => {
                let dx = losses::bce_grad(self.value(*x), target);
                self.accumulate(grads, *x, scale_scalar(dx));
            }
            Op::NegLogMean { x } => {
                let dx = losses::neg_log_mean_grad(self.value(*x));
                self.accumulate(grads, *x, scale_scalar(dx));
            }
            Op::NegLog1mMean { x } => {
                let dx = losses::neg_log1m_mean_grad(self.value(*x));
                self.accumulate(grads, *x, scale_scalar(dx));
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, Tensor::scalar(w * dy.data()[0]));
                }
            }
        }
    }
}
