//! Multi-head segmentation network: a strided convolutional encoder, a
//! one-step upsampling decoder, and semantic / depth / edge / refined heads.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::losses::{sid_bins, DepthBinSpec};
use super::params::{apply_conv, ConvSpec, ParamSet};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Architecture of the segmenter and the discriminator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Output width of each stride-2 encoder stage.
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: usize,
    /// Hidden width of every head.
    pub head_channels: usize,
    pub num_classes: usize,
    pub depth_bins: usize,
    /// Widths of the three hidden discriminator layers.
    pub disc_channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            encoder_channels: vec![16, 32, 64, 128],
            decoder_channels: 32,
            head_channels: 16,
            num_classes: 5,
            depth_bins: 8,
            disc_channels: vec![16, 32, 64],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() < 2 {
            return Err(Error::Config("encoder needs at least two stages".into()));
        }
        if self.disc_channels.len() != 3 {
            return Err(Error::Config("discriminator needs exactly three hidden widths".into()));
        }
        if self.num_classes < 2 || self.num_classes >= 255 {
            return Err(Error::Config(format!("num_classes {} outside [2, 254]", self.num_classes)));
        }
        if self.depth_bins < 2 {
            return Err(Error::Config("depth_bins must be at least 2".into()));
        }
        let widths = self
            .encoder_channels
            .iter()
            .chain(&self.disc_channels)
            .chain([&self.decoder_channels, &self.head_channels]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn total_stride(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    /// Downsampling factor of the shared features.
    pub fn feature_stride(&self) -> usize {
        1 << (self.encoder_channels.len() - 1)
    }
}

const HEADS: [&str; 4] = ["head_sem", "head_depth", "head_edge", "head_ref"];

fn layout(arch: &ArchConfig) -> Vec<ConvSpec> {
    let enc = &arch.encoder_channels;
    let mut layers = Vec::new();
    let mut cin = 3;
    for (i, &c) in enc.iter().enumerate() {
        layers.push(ConvSpec::new(format!("backbone.enc{i}"), cin, c, 3, 2));
        cin = c;
    }
    let skip = enc[enc.len() - 2];
    let d = arch.decoder_channels;
    layers.push(ConvSpec::new("backbone.dec0", cin + skip, d, 3, 1));
    layers.push(ConvSpec::new("backbone.dec1", d, d, 3, 1));
    let outs = [arch.num_classes, arch.depth_bins, 1, arch.num_classes];
    for (name, out) in HEADS.iter().zip(outs) {
        layers.push(ConvSpec::new(format!("{name}.hidden"), d, arch.head_channels, 3, 1));
        let fan_in = arch.head_channels as f64;
        layers.push(ConvSpec::new(format!("{name}.out"), arch.head_channels, out, 1, 1).with_init_std((1.0 / fan_in).sqrt()));
    }
    layers
}

/// Tape handles of one forward pass; all maps at input resolution.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub sem_logits: Var,
    pub ref_logits: Var,
    pub depth_logits: Var,
    pub edge_logit: Var,
    pub sem_prob: Var,
    pub ref_prob: Var,
    pub depth_prob: Var,
    /// Continuous depth decoded from the bin distribution, in metres.
    pub depth: Var,
    pub edge_prob: Var,
}

/// Raw head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadLogits {
    pub sem_logits: Tensor,
    pub ref_logits: Tensor,
    pub depth_logits: Tensor,
    pub edge_logit: Tensor,
}

/// Post-activation head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sem_prob: Tensor,
    pub ref_prob: Tensor,
    pub depth_prob: Tensor,
    pub depth: Tensor,
    pub edge_prob: Tensor,
}

impl Prediction {
    /// Arg-max of the refined head per pixel, one label plane per sample.
    pub fn labels(&self) -> Vec<u8> {
        argmax_channels(&self.ref_prob).0
    }
}

/// Per-pixel arg-max and maximum over channels.
pub fn argmax_channels(t: &Tensor) -> (Vec<u8>, Vec<f64>) {
    let s = t.shape();
    let p = s.plane();
    let mut labels = vec![0u8; s.n * p];
    let mut best = vec![f64::NEG_INFINITY; s.n * p];
    for n in 0..s.n {
        for c in 0..s.c {
            for (i, &v) in t.channel(n, c).iter().enumerate() {
                if v > best[n * p + i] {
                    best[n * p + i] = v;
                    labels[n * p + i] = c as u8;
                }
            }
        }
    }
    (labels, best)
}

/// The segmenter: architecture, depth discretisation and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    arch: ArchConfig,
    bins: Arc<DepthBinSpec>,
    layout: Vec<ConvSpec>,
    pub params: ParamSet,
}

impl SegModel {
    pub fn new(arch: ArchConfig, z_min: f64, z_max: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let bins = Arc::new(sid_bins(z_min, z_max, arch.depth_bins)?);
        let layout = layout(&arch);
        let params = ParamSet::init(&layout, seed);
        Ok(SegModel {
            arch,
            bins,
            layout,
            params,
        })
    }

    /// Rebuilds a model around existing weights.
    pub fn from_params(arch: ArchConfig, z_min: f64, z_max: f64, params: ParamSet) -> Result<Self> {
        let mut model = SegModel::new(arch, z_min, z_max, 0)?;
        if !params.matches_layout(&model.layout) {
            return Err(Error::Checkpoint("parameters do not match the architecture".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn bins(&self) -> &DepthBinSpec {
        &self.bins
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Zeroes the final 1×1 layer of every head.
    pub fn zero_head_outputs(&mut self) {
        for head in HEADS {
            for suffix in ["weight", "bias"] {
                if let Some(t) = self.params.get_mut(&format!("{head}.out.{suffix}")) {
                    t.data_mut().fill(0.0);
                }
            }
        }
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let stride = self.arch.total_stride();
        if shape.c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {}", shape.c)));
        }
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(stride) || !shape.w.is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "input {}x{} is not divisible by the backbone stride {stride}",
                shape.h, shape.w
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`. `vars` come from binding `self.params`.
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> HeadVars {
        let n_enc = self.arch.encoder_channels.len();
        let mut h = x;
        let mut stages = Vec::with_capacity(n_enc);
        for i in 0..n_enc {
            let y = apply_conv(g, vars, &self.layout, i, h);
            h = g.relu(y);
            stages.push(h);
        }
        let up = g.upsample(h, 2);
        let merged = g.concat(&[up, stages[n_enc - 2]]);
        let y = apply_conv(g, vars, &self.layout, n_enc, merged);
        let y = g.relu(y);
        let y = apply_conv(g, vars, &self.layout, n_enc + 1, y);
        let features = g.relu(y);

        let stride = self.arch.feature_stride();
        let head = |g: &mut Graph, k: usize, input: Var| {
            let base = n_enc + 2 + 2 * k;
            let y = apply_conv(g, vars, &self.layout, base, input);
            let y = g.relu(y);
            let y = apply_conv(g, vars, &self.layout, base + 1, y);
            g.upsample(y, stride)
        };
        let sem_logits = head(g, 0, features);
        let depth_logits = head(g, 1, features);
        let edge_logit = head(g, 2, features);

        let depth_prob = g.softmax(depth_logits);
        let depth = g.depth_decode(depth_prob, self.bins.clone());
        // Depth modulation: log-depth min-max normalised to [0, 1] at feature
        // resolution, broadcast over feature channels.
        let coarse = g.avg_pool(depth, stride);
        let log_depth = g.ln(coarse);
        let (lo, hi) = (self.bins.z_min().ln(), self.bins.z_max().ln());
        let norm = g.affine(log_depth, 1.0 / (hi - lo), -lo / (hi - lo));
        let modulated = g.mul_broadcast(features, norm);
        let ref_logits = head(g, 3, modulated);

        let sem_prob = g.softmax(sem_logits);
        let ref_prob = g.softmax(ref_logits);
        let edge_prob = g.sigmoid(edge_logit);
        HeadVars {
            sem_logits,
            ref_logits,
            depth_logits,
            edge_logit,
            sem_prob,
            ref_prob,
            depth_prob,
            depth,
            edge_prob,
        }
    }

    fn run(&self, x: &Tensor) -> Result<(Graph, HeadVars)> {
        self.check_input(x.shape())?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let input = g.constant(x.clone());
        let heads = self.forward_graph(&mut g, &vars, input);
        Ok((g, heads))
    }

    /// Raw logits of all four heads.
    pub fn forward(&self, x: &Tensor) -> Result<HeadLogits> {
        let (g, h) = self.run(x)?;
        Ok(HeadLogits {
            sem_logits: g.value(h.sem_logits).clone(),
            ref_logits: g.value(h.ref_logits).clone(),
            depth_logits: g.value(h.depth_logits).clone(),
            edge_logit: g.value(h.edge_logit).clone(),
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let (g, h) = self.run(x)?;
        Ok(Prediction {
            sem_prob: g.value(h.sem_prob).clone(),
            ref_prob: g.value(h.ref_prob).clone(),
            depth_prob: g.value(h.depth_prob).clone(),
            depth: g.value(h.depth).clone(),
            edge_prob: g.value(h.edge_prob).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::losses::{entropy_map, softmax};

    fn image(h: usize, w: usize) -> Tensor {
        let shape = Shape::new(1, 3, h, w);
        let data = (0..shape.len()).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn output_shapes() {
        let model = SegModel::new(ArchConfig::default(), 1.0, 666.36, 1).unwrap();
        let out = model.forward(&image(64, 128)).unwrap();
        assert_eq!(out.sem_logits.shape(), Shape::new(1, 5, 64, 128));
        assert_eq!(out.ref_logits.shape(), Shape::new(1, 5, 64, 128));
        assert_eq!(out.depth_logits.shape(), Shape::new(1, 8, 64, 128));
        assert_eq!(out.edge_logit.shape(), Shape::new(1, 1, 64, 128));
        let wide = model.forward(&image(64, 256)).unwrap();
        assert_eq!(wide.sem_logits.shape(), Shape::new(1, 5, 64, 256));
        assert!(matches!(model.forward(&image(60, 128)), Err(Error::Shape(_))));
    }

    #[test]
    fn zeroed_heads_give_uniform_entropy() {
        let mut model = SegModel::new(ArchConfig::default(), 1.0, 666.36, 2).unwrap();
        model.zero_head_outputs();
        let out = model.forward(&image(32, 32)).unwrap();
        assert!(out.sem_logits.data().iter().all(|&v| v == 0.0));
        let e = entropy_map(&softmax(&out.sem_logits).unwrap());
        let expected = -(1.0 / 5.0f64) * (1.0 / 5.0f64).ln();
        assert!(e.tensor().data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn depth_within_range() {
        let model = SegModel::new(ArchConfig::default(), 1.0, 666.36, 3).unwrap();
        let p = model.predict(&image(32, 64)).unwrap();
        assert!(p.depth.data().iter().all(|&z| (1.0..=666.36).contains(&z)));
        assert!(p.edge_prob.data().iter().all(|&e| e > 0.0 && e < 1.0));
    }

    #[test]
    fn rejects_bad_arch() {
        let arch = ArchConfig {
            encoder_channels: vec![8],
            ..ArchConfig::default()
        };
        assert!(SegModel::new(arch, 1.0, 10.0, 0).is_err());
        assert!(SegModel::new(ArchConfig::default(), 0.0, 10.0, 0).is_err());
    }
}
