//! Supervised source training, adversarial alignment of unified
//! entropy/edge maps, and confidence-thresholded self-training.
//!
//! Gradients are computed by [`supervised_step`] and [`adversarial_step`]
//! without touching the parameters; [`Trainer`] owns the optimiser state
//! and applies them.

mod fit;
mod optim;
mod selftrain;

pub use fit::{evaluate, fit, load_eval_set, load_source_set, load_target_images, CheckpointMeta, FitReport, SourceSample, METRICS_HEADER};
pub use optim::{poly_lr, Adam, OptimSpec, Sgd};
pub use selftrain::{generate_pseudo_labels, run_self_training, self_train_round, PseudoLabels, SelfTrainReport, SelfTrainSummary};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::model::HeadVars;
use crate::nn::{AblationVariant, Discriminator, SegModel, Tensor, IGNORE_LABEL};

/// Weights of the generator objective terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_seg: f64,
    pub w_ref: f64,
    pub w_dep: f64,
    pub w_edge: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_seg: 1.0,
            w_ref: 1.0,
            w_dep: 1.0,
            w_edge: 1.0,
            w_adv: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_seg, self.w_ref, self.w_dep, self.w_edge, self.w_adv];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub lambda_conf: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            lambda_conf: 0.8,
            rounds: 1,
            epochs_per_round: 2,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_conf > 0.0 && self.lambda_conf < 1.0) {
            return Err(Error::Config(format!("lambda_conf must lie in (0, 1), got {}", self.lambda_conf)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("self-training needs at least one round".into()));
        }
        Ok(())
    }
}

/// A stacked mini-batch. Supervision is optional so the same type carries
/// unlabelled target images.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    /// One label plane per sample, ignore index allowed.
    pub labels: Option<Arc<[u8]>>,
    /// Metres, `N×1×H×W`.
    pub depth: Option<Arc<Tensor>>,
    /// `{0, 1}` edge target, `N×1×H×W`.
    pub edges: Option<Arc<Tensor>>,
}

impl Batch {
    pub fn unlabeled(images: Tensor) -> Self {
        Batch {
            images,
            labels: None,
            depth: None,
            edges: None,
        }
    }

    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss values of one step. Terms that were not evaluated are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub seg: Option<f64>,
    pub refined: Option<f64>,
    pub depth: Option<f64>,
    pub edge: Option<f64>,
    pub adv_g: Option<f64>,
    pub adv_d: Option<f64>,
    /// Weighted generator objective.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    pub gen_grads: Vec<Tensor>,
    /// Empty for purely supervised steps.
    pub disc_grads: Vec<Tensor>,
}

struct SupervisedTerms {
    seg: Var,
    refined: Var,
    depth: Var,
    edge: Var,
}

fn supervised_terms(g: &mut Graph, heads: &HeadVars, batch: &Batch) -> Result<SupervisedTerms> {
    let missing = |what: &str| Error::Protocol(format!("supervised step needs {what}"));
    let labels = batch.labels.clone().ok_or_else(|| missing("labels"))?;
    let depth = batch.depth.clone().ok_or_else(|| missing("depth"))?;
    let edges = batch.edges.clone().ok_or_else(|| missing("edge ground truth"))?;
    Ok(SupervisedTerms {
        seg: g.cross_entropy(heads.sem_prob, labels.clone(), IGNORE_LABEL)?,
        refined: g.cross_entropy(heads.ref_prob, labels, IGNORE_LABEL)?,
        depth: g.berhu(heads.depth, depth)?,
        edge: g.bce(heads.edge_prob, edges),
    })
}

fn collect(g: &Graph, grads: &mut crate::nn::graph::Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect()
}

/// Unified map recorded on the tape so gradients reach the generator.
pub fn unified_map_graph(g: &mut Graph, heads: &HeadVars, variant: AblationVariant) -> Var {
    let es = g.entropy(heads.sem_prob);
    let ez = g.entropy(heads.depth_prob);
    let er = g.entropy(heads.ref_prob);
    let edge = heads.edge_prob;
    match variant {
        AblationVariant::EntropyOnly => g.concat(&[es, ez, er]),
        AblationVariant::Concat => g.concat(&[es, ez, er, edge]),
        AblationVariant::EdgeToEach => g.concat(&[es, edge, ez, edge, er, edge]),
        AblationVariant::Fusion => {
            let parts: Vec<Var> = [es, ez, er].into_iter().map(|e| g.mul_broadcast(e, edge)).collect();
            g.concat(&parts)
        }
    }
}

/// Gradients of the weighted supervised objective on a labelled batch.
pub fn supervised_step(model: &SegModel, batch: &Batch, weights: &LossWeights) -> Result<StepOutput> {
    model.check_input(batch.images.shape())?;
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g, true);
    let x = g.constant(batch.images.clone());
    let heads = model.forward_graph(&mut g, &vars, x);
    let t = supervised_terms(&mut g, &heads, batch)?;
    let total = g.weighted_sum(&[
        (t.seg, weights.w_seg),
        (t.refined, weights.w_ref),
        (t.depth, weights.w_dep),
        (t.edge, weights.w_edge),
    ]);
    let mut grads = g.backward(total);
    Ok(StepOutput {
        losses: LossBreakdown {
            seg: Some(g.scalar(t.seg)),
            refined: Some(g.scalar(t.refined)),
            depth: Some(g.scalar(t.depth)),
            edge: Some(g.scalar(t.edge)),
            total: g.scalar(total),
            ..LossBreakdown::default()
        },
        gen_grads: collect(&g, &mut grads, &vars),
        disc_grads: Vec::new(),
    })
}

/// One alternating iteration. The generator phase scores the target
/// unified map with a frozen discriminator; the discriminator phase sees
/// both maps detached, source labelled 1 and target 0.
pub fn adversarial_step(
    model: &SegModel,
    disc: &Discriminator,
    src: &Batch,
    tgt: &Batch,
    weights: &LossWeights,
    variant: AblationVariant,
) -> Result<StepOutput> {
    if tgt.labels.is_some() || tgt.depth.is_some() || tgt.edges.is_some() {
        return Err(Error::Protocol("target batches must be unlabelled".into()));
    }
    let expected = variant.channels(model.num_classes(), model.bins().bins());
    if disc.in_channels() != expected {
        return Err(Error::Shape(format!(
            "variant {variant} produces {expected} channels, discriminator takes {}",
            disc.in_channels()
        )));
    }
    model.check_input(src.images.shape())?;
    model.check_input(tgt.images.shape())?;

    let mut g = Graph::new();
    let vars = model.params.bind(&mut g, true);
    let xs = g.constant(src.images.clone());
    let src_heads = model.forward_graph(&mut g, &vars, xs);
    let t = supervised_terms(&mut g, &src_heads, src)?;
    let xt = g.constant(tgt.images.clone());
    let tgt_heads = model.forward_graph(&mut g, &vars, xt);
    let src_map = unified_map_graph(&mut g, &src_heads, variant);
    let tgt_map = unified_map_graph(&mut g, &tgt_heads, variant);
    disc.check_input(g.shape(tgt_map))?;
    let frozen = disc.params.bind(&mut g, false);
    let score = disc.forward_graph(&mut g, &frozen, tgt_map);
    let adv_g = g.neg_log_mean(score);
    let total = g.weighted_sum(&[
        (t.seg, weights.w_seg),
        (t.refined, weights.w_ref),
        (t.depth, weights.w_dep),
        (t.edge, weights.w_edge),
        (adv_g, weights.w_adv),
    ]);
    let mut grads = g.backward(total);
    let gen_grads = collect(&g, &mut grads, &vars);

    let mut d = Graph::new();
    let dvars = disc.params.bind(&mut d, true);
    let s_in = d.constant(g.value(src_map).clone());
    let t_in = d.constant(g.value(tgt_map).clone());
    let s_score = disc.forward_graph(&mut d, &dvars, s_in);
    let t_score = disc.forward_graph(&mut d, &dvars, t_in);
    let real = d.neg_log_mean(s_score);
    let fake = d.neg_log1m_mean(t_score);
    let adv_d = d.weighted_sum(&[(real, 1.0), (fake, 1.0)]);
    let mut dgrads = d.backward(adv_d);

    Ok(StepOutput {
        losses: LossBreakdown {
            seg: Some(g.scalar(t.seg)),
            refined: Some(g.scalar(t.refined)),
            depth: Some(g.scalar(t.depth)),
            edge: Some(g.scalar(t.edge)),
            adv_g: Some(g.scalar(adv_g)),
            adv_d: Some(d.scalar(adv_d)),
            total: g.scalar(total),
        },
        gen_grads,
        disc_grads: collect(&d, &mut dgrads, &dvars),
    })
}

/// Owns the networks and optimiser state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SegModel,
    pub disc: Discriminator,
    pub optim: OptimSpec,
    gen_opt: Sgd,
    disc_opt: Adam,
}

impl Trainer {
    pub fn new(model: SegModel, disc: Discriminator, optim: OptimSpec) -> Result<Self> {
        optim.validate()?;
        let gen_opt = Sgd::new(&model.params, optim.gen_momentum, optim.gen_weight_decay);
        let disc_opt = Adam::new(&disc.params, optim.disc_betas, optim.disc_eps);
        Ok(Trainer {
            model,
            disc,
            optim,
            gen_opt,
            disc_opt,
        })
    }

    pub fn supervised(&mut self, batch: &Batch, weights: &LossWeights, lr: f64) -> Result<LossBreakdown> {
        let out = supervised_step(&self.model, batch, weights)?;
        self.gen_opt.step(&mut self.model.params, &out.gen_grads, lr)?;
        Ok(out.losses)
    }

    pub fn adversarial(
        &mut self,
        src: &Batch,
        tgt: &Batch,
        weights: &LossWeights,
        variant: AblationVariant,
        lr: f64,
    ) -> Result<LossBreakdown> {
        let out = adversarial_step(&self.model, &self.disc, src, tgt, weights, variant)?;
        self.gen_opt.step(&mut self.model.params, &out.gen_grads, lr)?;
        self.disc_opt.step(&mut self.disc.params, &out.disc_grads, self.optim.disc_lr)?;
        Ok(out.losses)
    }
}
