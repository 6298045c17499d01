//! Tensors, automatic differentiation, the segmentation and discriminator
//! networks, and every training objective.

pub mod checkpoint;
pub mod disc;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod params;
pub mod tensor;

pub use disc::Discriminator;
pub use graph::{Graph, Var};
pub use losses::{
    adversarial_d_loss, adversarial_g_loss, bce_edge_loss, berhu_loss, concat_unified_map,
    cross_entropy_loss, depth_decode, entropy_map, sid_bins, sigmoid, softmax, AblationVariant,
    DepthBinSpec, EntropyMap, ProbMap, IGNORE_LABEL,
};
pub use model::{ArchConfig, HeadLogits, Prediction, SegModel};
pub use params::ParamSet;
pub use tensor::{Shape, Tensor};
