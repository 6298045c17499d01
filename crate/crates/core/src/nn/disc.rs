//! Patch discriminator over unified entropy/edge maps.

use super::graph::{Graph, Var};
use super::params::{apply_conv, ConvSpec, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DISC_LEAKY_SLOPE: f64 = 0.2;
/// Spatial downsampling of the four stride-2 layers.
pub const DISC_STRIDE: usize = 16;
const DISC_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    in_channels: usize,
    layout: Vec<ConvSpec>,
    pub params: ParamSet,
}

fn layout(in_channels: usize, hidden: &[usize]) -> Vec<ConvSpec> {
    let widths = [hidden[0], hidden[1], hidden[2], 1];
    let mut cin = in_channels;
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let spec = ConvSpec::new(format!("disc.conv{i}"), cin, w, 4, 2).with_init_std(DISC_INIT_STD);
            cin = w;
            spec
        })
        .collect()
}

impl Discriminator {
    pub fn new(in_channels: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.len() != 3 || hidden.contains(&0) || in_channels == 0 {
            return Err(Error::Config("discriminator needs three positive hidden widths".into()));
        }
        let layout = layout(in_channels, hidden);
        let params = ParamSet::init(&layout, seed);
        Ok(Discriminator {
            in_channels,
            layout,
            params,
        })
    }

    pub fn from_params(in_channels: usize, hidden: &[usize], params: ParamSet) -> Result<Self> {
        let mut d = Discriminator::new(in_channels, hidden, 0)?;
        if !params.matches_layout(&d.layout) {
            return Err(Error::Checkpoint("parameters do not match the discriminator".into()));
        }
        d.params = params;
        Ok(d)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn check_input(&self, shape: super::tensor::Shape) -> Result<()> {
        if shape.c != self.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.in_channels, shape.c
            )));
        }
        if !shape.h.is_multiple_of(DISC_STRIDE) || !shape.w.is_multiple_of(DISC_STRIDE) || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!(
                "discriminator input {}x{} is not divisible by {DISC_STRIDE}",
                shape.h, shape.w
            )));
        }
        Ok(())
    }

    /// Records the forward pass; returns patch scores in (0, 1).
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let mut h = x;
        for i in 0..self.layout.len() {
            h = apply_conv(g, vars, &self.layout, i, h);
            if i + 1 < self.layout.len() {
                h = g.leaky_relu(h, DISC_LEAKY_SLOPE);
            }
        }
        g.sigmoid(h)
    }

    /// Scores a batch of unified maps; output is `N × 1 × H/16 × W/16`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.shape())?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = g.constant(input.clone());
        let out = self.forward_graph(&mut g, &vars, x);
        Ok(g.value(out).clone())
    }
}
