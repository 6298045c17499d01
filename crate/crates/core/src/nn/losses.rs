//! Per-pixel probability transforms and the training objectives.
//!
//! Every function here works on NCHW tensors and reduces by the mean over
//! counted pixels. Logs are natural and clamped below at [`LOG_EPS`]. The
//! `*_grad` companions return the gradient of the scalar loss with respect to
//! the first argument and back the autograd ops in [`super::graph`].

use serde::{Deserialize, Serialize};

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

pub const LOG_EPS: f64 = 1e-12;
pub const IGNORE_LABEL: u8 = 255;

/// Fraction of the largest absolute residual at which berHu turns quadratic.
pub const BERHU_CUTOFF: f64 = 0.2;

#[inline]
fn safe_ln(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}

/// Per-pixel class distribution: channel sums are 1 within `1e-5`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap(Tensor);

impl ProbMap {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        for n in 0..s.n {
            for i in 0..s.plane() {
                let mut sum = 0.0;
                for c in 0..s.c {
                    let v = t.data()[(n * s.c + c) * s.plane() + i];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Domain(format!("probability {v} outside [0, 1]")));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-5 {
                    return Err(Error::Domain(format!("channel sum {sum} is not 1")));
                }
            }
        }
        Ok(ProbMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape().c
    }
}

/// Per-channel weighted self-information `-p ln p`; every entry in `[0, 1/e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap(Tensor);

impl EntropyMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Sum over channels, one value per pixel.
    pub fn total(&self) -> Tensor {
        let s = self.0.shape();
        let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.0.channel(n, c);
                let dst = &mut out.sample_mut(n)[..];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out
    }
}

pub(crate) fn softmax_raw(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let src = logits.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut max = f64::NEG_INFINITY;
            for c in 0..s.c {
                max = max.max(src[base + c * p + i]);
            }
            let mut sum = 0.0;
            for c in 0..s.c {
                let e = (src[base + c * p + i] - max).exp();
                dst[base + c * p + i] = e;
                sum += e;
            }
            for c in 0..s.c {
                dst[base + c * p + i] /= sum;
            }
        }
    }
    out
}

pub(crate) fn softmax_grad(probs: &Tensor, dy: &Tensor) -> Tensor {
    let s = probs.shape();
    let p = s.plane();
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let dot: f64 = (0..s.c)
                .map(|c| probs.data()[base + c * p + i] * dy.data()[base + c * p + i])
                .sum();
            for c in 0..s.c {
                let j = base + c * p + i;
                dx.data_mut()[j] = probs.data()[j] * (dy.data()[j] - dot);
            }
        }
    }
    dx
}

/// Max-subtracted channel softmax.
pub fn softmax(logits: &Tensor) -> Result<ProbMap> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    Ok(ProbMap(softmax_raw(logits)))
}

pub(crate) fn entropy_raw(p: &Tensor) -> Tensor {
    p.map(|v| if v <= 0.0 { 0.0 } else { -v * v.ln() })
}

pub(crate) fn entropy_grad(p: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(p.shape());
    for ((d, &v), &g) in dx.data_mut().iter_mut().zip(p.data()).zip(dy.data()) {
        *d = -(safe_ln(v) + 1.0) * g;
    }
    dx
}

pub fn entropy_map(p: &ProbMap) -> EntropyMap {
    EntropyMap(entropy_raw(&p.0))
}

fn check_labels(probs: &Tensor, labels: &[u8], ignore: u8) -> Result<usize> {
    let s = probs.shape();
    if labels.len() != s.n * s.plane() {
        return Err(Error::Shape(format!(
            "{} labels for probability map {s}",
            labels.len()
        )));
    }
    let mut counted = 0;
    for &l in labels {
        if l == ignore {
            continue;
        }
        if l as usize >= s.c {
            return Err(Error::Domain(format!("label {l} with {} classes", s.c)));
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(counted)
}

pub(crate) fn cross_entropy_raw(probs: &Tensor, labels: &[u8], ignore: u8) -> Result<f64> {
    let counted = check_labels(probs, labels, ignore)?;
    let s = probs.shape();
    let p = s.plane();
    let mut total = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        if l == ignore {
            continue;
        }
        let (n, i) = (j / p, j % p);
        total -= safe_ln(probs.data()[(n * s.c + l as usize) * p + i]);
    }
    Ok(total / counted as f64)
}

pub(crate) fn cross_entropy_grad(probs: &Tensor, labels: &[u8], ignore: u8) -> Tensor {
    let s = probs.shape();
    let p = s.plane();
    let counted = labels.iter().filter(|&&l| l != ignore).count().max(1) as f64;
    let mut dx = Tensor::zeros(s);
    for (j, &l) in labels.iter().enumerate() {
        if l == ignore {
            continue;
        }
        let (n, i) = (j / p, j % p);
        let k = (n * s.c + l as usize) * p + i;
        let v = probs.data()[k];
        if v > LOG_EPS {
            dx.data_mut()[k] = -1.0 / (v * counted);
        }
    }
    dx
}

/// Mean negative log-likelihood of the labelled class over non-ignored pixels.
/// `labels` is indexed like a single-channel NCHW tensor.
pub fn cross_entropy_loss(p: &ProbMap, labels: &[u8], ignore: u8) -> Result<f64> {
    cross_entropy_raw(&p.0, labels, ignore)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Returns `(cutoff, index of the largest residual)`.
fn berhu_cutoff(pred: &Tensor, gt: &Tensor) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (i, (a, b)) in pred.data().iter().zip(gt.data()).enumerate() {
        let r = (a - b).abs();
        if r > best.0 {
            best = (r, i);
        }
    }
    (BERHU_CUTOFF * best.0, best.1)
}

/// Reverse Huber loss with an adaptive cutoff at 20% of the largest residual.
pub fn berhu_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_same(pred, gt)?;
    let (c, _) = berhu_cutoff(pred, gt);
    if c == 0.0 {
        return Ok(0.0);
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| {
            let r = (a - b).abs();
            if r <= c {
                r
            } else {
                (r * r + c * c) / (2.0 * c)
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Gradient with respect to `pred`, including the path through the cutoff.
pub(crate) fn berhu_grad(pred: &Tensor, gt: &Tensor) -> Tensor {
    let (c, arg) = berhu_cutoff(pred, gt);
    let mut dx = Tensor::zeros(pred.shape());
    if c == 0.0 {
        return dx;
    }
    let n = pred.len() as f64;
    let mut d_cutoff = 0.0;
    for (i, (a, b)) in pred.data().iter().zip(gt.data()).enumerate() {
        let r = a - b;
        if r.abs() <= c {
            dx.data_mut()[i] = r.signum() / n;
        } else {
            dx.data_mut()[i] = r / (c * n);
            d_cutoff += (c * c - r * r) / (2.0 * c * c * n);
        }
    }
    let r_max = pred.data()[arg] - gt.data()[arg];
    dx.data_mut()[arg] += d_cutoff * BERHU_CUTOFF * r_max.signum();
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

pub(crate) fn bce_raw(pred: &Tensor, target01: &Tensor) -> f64 {
    let total: f64 = pred
        .data()
        .iter()
        .zip(target01.data())
        .map(|(&p, &e)| -(e * safe_ln(p) + (1.0 - e) * safe_ln(1.0 - p)))
        .sum();
    total / pred.len() as f64
}

pub(crate) fn bce_grad(pred: &Tensor, target01: &Tensor) -> Tensor {
    let n = pred.len() as f64;
    let mut dx = Tensor::zeros(pred.shape());
    for ((d, &p), &e) in dx.data_mut().iter_mut().zip(pred.data()).zip(target01.data()) {
        let pc = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
        *d = (-(e / pc) + (1.0 - e) / (1.0 - pc)) / n;
    }
    dx
}

/// Binary cross entropy between post-sigmoid edge probabilities and a
/// `{0, 255}` ground truth map.
pub fn bce_edge_loss(pred: &Tensor, gt: &[u8]) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} edge labels for prediction {}",
            gt.len(),
            pred.shape()
        )));
    }
    if let Some(v) = pred.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain(format!("edge probability {v} outside (0, 1)")));
    }
    let target = edge_target(pred.shape(), gt)?;
    Ok(bce_raw(pred, &target))
}

/// `{0, 255}` ground truth as a `{0, 1}` tensor of the given shape.
pub fn edge_target(shape: Shape, gt: &[u8]) -> Result<Tensor> {
    let data = gt
        .iter()
        .map(|&v| match v {
            0 => Ok(0.0),
            255 => Ok(1.0),
            other => Err(Error::Domain(format!("edge label {other} is not 0 or 255"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(shape, data)
}

/// Log-spaced depth discretisation.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBinSpec {
    pub thresholds: Vec<f64>,
    pub centers: Vec<f64>,
}

impl DepthBinSpec {
    pub fn bins(&self) -> usize {
        self.centers.len()
    }

    pub fn z_min(&self) -> f64 {
        self.thresholds[0]
    }

    pub fn z_max(&self) -> f64 {
        self.thresholds[self.thresholds.len() - 1]
    }

    /// Bin index holding `z`, clamped to the valid range.
    pub fn bin_of(&self, z: f64) -> usize {
        let k = self.bins();
        self.thresholds[1..k].partition_point(|&t| t <= z).min(k - 1)
    }
}

/// Spacing-increasing discretisation of `[z_min, z_max]` into `k` bins.
pub fn sid_bins(z_min: f64, z_max: f64, k: usize) -> Result<DepthBinSpec> {
    if !(z_min > 0.0 && z_max > z_min && z_max.is_finite()) {
        return Err(Error::Config(format!(
            "depth range requires 0 < z_min < z_max, got [{z_min}, {z_max}]"
        )));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 depth bins, got {k}")));
    }
    let log_span = (z_max / z_min).ln();
    let mut thresholds: Vec<f64> = (0..=k)
        .map(|i| (z_min.ln() + (i as f64 / k as f64) * log_span).exp())
        .collect();
    thresholds[0] = z_min;
    thresholds[k] = z_max;
    let centers = thresholds.windows(2).map(|t| (t[0] * t[1]).sqrt()).collect();
    Ok(DepthBinSpec {
        thresholds,
        centers,
    })
}

pub(crate) fn depth_decode_raw(probs: &Tensor, spec: &DepthBinSpec) -> Tensor {
    let s = probs.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    for n in 0..s.n {
        let dst = out.sample_mut(n);
        for (k, &center) in spec.centers.iter().enumerate() {
            for (d, v) in dst.iter_mut().zip(probs.channel(n, k)) {
                *d += v * center;
            }
        }
        for d in dst.iter_mut().take(p) {
            *d = d.clamp(spec.z_min(), spec.z_max());
        }
    }
    out
}

pub(crate) fn depth_decode_grad(
    probs: &Tensor,
    decoded: &Tensor,
    spec: &DepthBinSpec,
    dy: &Tensor,
) -> Tensor {
    let s = probs.shape();
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for (k, &center) in spec.centers.iter().enumerate() {
            for i in 0..s.plane() {
                let z = decoded.sample(n)[i];
                if z > spec.z_min() && z < spec.z_max() {
                    let j = (n * s.c + k) * s.plane() + i;
                    dx.data_mut()[j] = dy.sample(n)[i] * center;
                }
            }
        }
    }
    dx
}

/// Probability-weighted bin centres, clamped to the bin range.
pub fn depth_decode(bin_probs: &ProbMap, spec: &DepthBinSpec) -> Result<Tensor> {
    if bin_probs.channels() != spec.bins() {
        return Err(Error::Shape(format!(
            "{} bin probabilities for {} bins",
            bin_probs.channels(),
            spec.bins()
        )));
    }
    Ok(depth_decode_raw(&bin_probs.0, spec))
}

pub(crate) fn neg_log_mean(s: &Tensor) -> f64 {
    s.data().iter().map(|&v| -safe_ln(v)).sum::<f64>() / s.len() as f64
}

pub(crate) fn neg_log_mean_grad(s: &Tensor) -> Tensor {
    let n = s.len() as f64;
    s.map(|v| if v > LOG_EPS { -1.0 / (v * n) } else { 0.0 })
}

pub(crate) fn neg_log1m_mean(s: &Tensor) -> f64 {
    s.data().iter().map(|&v| -safe_ln(1.0 - v)).sum::<f64>() / s.len() as f64
}

pub(crate) fn neg_log1m_mean_grad(s: &Tensor) -> Tensor {
    let n = s.len() as f64;
    s.map(|v| if 1.0 - v > LOG_EPS { 1.0 / ((1.0 - v) * n) } else { 0.0 })
}

/// Discriminator objective: source maps labelled 1, target maps labelled 0.
pub fn adversarial_d_loss(score_src: &Tensor, score_tgt: &Tensor) -> f64 {
    neg_log_mean(score_src) + neg_log1m_mean(score_tgt)
}

/// Non-saturating generator objective on target maps.
pub fn adversarial_g_loss(score_tgt: &Tensor) -> f64 {
    neg_log_mean(score_tgt)
}

/// How the edge probability is combined with the entropy blocks before the
/// discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Entropy blocks only, no edge channel.
    EntropyOnly,
    /// Every entropy channel multiplied by the edge probability.
    Fusion,
    /// Edge channel appended after each entropy block.
    EdgeToEach,
    /// Edge channel appended once after all entropy blocks.
    #[default]
    Concat,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::EntropyOnly,
        AblationVariant::Fusion,
        AblationVariant::EdgeToEach,
        AblationVariant::Concat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::EntropyOnly => "entropy_only",
            AblationVariant::Fusion => "fusion",
            AblationVariant::EdgeToEach => "edge_to_each",
            AblationVariant::Concat => "concat",
        }
    }

    /// Channel count of the discriminator input for `classes` semantic
    /// classes and `bins` depth bins.
    pub fn channels(&self, classes: usize, bins: usize) -> usize {
        let entropy = 2 * classes + bins;
        match self {
            AblationVariant::EntropyOnly | AblationVariant::Fusion => entropy,
            AblationVariant::EdgeToEach => entropy + 3,
            AblationVariant::Concat => entropy + 1,
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds the discriminator input from the semantic, depth and refined
/// entropy maps and the edge probability map.
pub fn concat_unified_map(
    e_sem: &Tensor,
    e_depth: &Tensor,
    e_ref: &Tensor,
    edge: &Tensor,
    variant: AblationVariant,
) -> Result<Tensor> {
    let s = e_sem.shape();
    for t in [e_depth, e_ref, edge] {
        let o = t.shape();
        if (o.n, o.h, o.w) != (s.n, s.h, s.w) {
            return Err(Error::Shape(format!("unified map parts {s} vs {o}")));
        }
    }
    if edge.shape().c != 1 {
        return Err(Error::Shape("edge map must have one channel".into()));
    }
    let parts: Vec<Tensor> = match variant {
        AblationVariant::EntropyOnly => vec![e_sem.clone(), e_depth.clone(), e_ref.clone()],
        AblationVariant::Concat => vec![e_sem.clone(), e_depth.clone(), e_ref.clone(), edge.clone()],
        AblationVariant::EdgeToEach => vec![
            e_sem.clone(),
            edge.clone(),
            e_depth.clone(),
            edge.clone(),
            e_ref.clone(),
            edge.clone(),
        ],
        AblationVariant::Fusion => [e_sem, e_depth, e_ref]
            .into_iter()
            .map(|t| mul_channel_broadcast(t, edge))
            .collect(),
    };
    Ok(concat_channels(&parts.iter().collect::<Vec<_>>()))
}

pub(crate) fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let s = parts[0].shape();
    let c: usize = parts.iter().map(|t| t.shape().c).sum();
    let mut out = Tensor::zeros(Shape::new(s.n, c, s.h, s.w));
    for n in 0..s.n {
        let dst = out.sample_mut(n);
        let mut off = 0;
        for t in parts {
            let src = t.sample(n);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    out
}

/// `x * m` with a single-channel `m` broadcast over the channels of `x`.
pub(crate) fn mul_channel_broadcast(x: &Tensor, m: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = x.clone();
    for n in 0..s.n {
        let mask = m.sample(n);
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for (v, k) in out.data_mut()[start..start + s.plane()].iter_mut().zip(mask) {
                *v *= k;
            }
        }
    }
    out
}
