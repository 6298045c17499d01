use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::kernels::ConvGeometry;
use super::tensor::{Shape, Tensor};

/// One convolution in a fixed layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeometry,
    /// Standard deviation of the normal weight initialiser.
    pub init_std: f64,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let pad = if kernel % 2 == 1 {
            kernel / 2
        } else {
            kernel.saturating_sub(stride) / 2
        };
        let fan_in = (cin * kernel * kernel) as f64;
        ConvSpec {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            geom: ConvGeometry { kernel, stride, pad },
            init_std: (2.0 / fan_in).sqrt(),
        }
    }

    pub fn with_init_std(mut self, std: f64) -> Self {
        self.init_std = std;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        let k = self.geom.kernel;
        Shape::new(self.out_channels, self.in_channels, k, k)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }
}

/// Named parameter tensors in a stable order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    /// Normal-initialised weights and zero biases for every layer, drawn in
    /// layout order from a seeded stream.
    pub fn init(layout: &[ConvSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::default();
        for spec in layout {
            let shape = spec.weight_shape();
            let dist = Normal::new(0.0, spec.init_std).expect("finite std");
            let data = (0..shape.len()).map(|_| dist.sample(&mut rng)).collect();
            set.push(format!("{}.weight", spec.name), Tensor::from_vec(shape, data).expect("sized"));
            set.push(format!("{}.bias", spec.name), Tensor::zeros(spec.bias_shape()));
        }
        set
    }

    pub fn push(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Places every tensor on the tape, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Checks that names and shapes agree with `layout`.
    pub fn matches_layout(&self, layout: &[ConvSpec]) -> bool {
        self.len() == 2 * layout.len()
            && layout.iter().enumerate().all(|(i, spec)| {
                self.names[2 * i] == format!("{}.weight", spec.name)
                    && self.tensors[2 * i].shape() == spec.weight_shape()
                    && self.names[2 * i + 1] == format!("{}.bias", spec.name)
                    && self.tensors[2 * i + 1].shape() == spec.bias_shape()
            })
    }
}

/// Runs layer `index` of a bound layout.
pub(crate) fn apply_conv(g: &mut Graph, vars: &[Var], layout: &[ConvSpec], index: usize, x: Var) -> Var {
    g.conv2d(x, vars[2 * index], vars[2 * index + 1], layout[index].geom)
}
