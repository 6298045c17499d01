//! Iterative self-learning on confidence-thresholded pseudo-labels.

use std::path::Path;

use super::fit::{derive_seed, evaluate, load_eval_set, load_target_images, shuffled, CheckpointMeta};
use super::{poly_lr, LossWeights, OptimSpec, SelfTrainConfig, Sgd};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::graph::Graph;
use crate::nn::model::argmax_channels;
use crate::nn::{checkpoint, SegModel, Tensor, IGNORE_LABEL};
use crate::scenegen::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    /// One label plane per image, ignore index where unconfident.
    pub labels: Vec<Vec<u8>>,
    pub per_image_coverage: Vec<f64>,
    /// Kept pixels over all pixels.
    pub coverage: f64,
}

/// Refined-head arg-max where its probability reaches `lambda_conf`.
pub fn generate_pseudo_labels(model: &SegModel, images: &[Tensor], lambda_conf: f64) -> Result<PseudoLabels> {
    if !(lambda_conf > 0.0 && lambda_conf < 1.0) {
        return Err(Error::Config(format!("lambda_conf must lie in (0, 1), got {lambda_conf}")));
    }
    let mut labels = Vec::with_capacity(images.len());
    let mut per_image_coverage = Vec::with_capacity(images.len());
    let (mut kept, mut total) = (0usize, 0usize);
    for img in images {
        let pred = model.predict(img)?;
        let (arg, conf) = argmax_channels(&pred.ref_prob);
        let plane: Vec<u8> = arg
            .iter()
            .zip(&conf)
            .map(|(&l, &p)| if p >= lambda_conf { l } else { IGNORE_LABEL })
            .collect();
        let k = plane.iter().filter(|&&l| l != IGNORE_LABEL).count();
        per_image_coverage.push(k as f64 / plane.len() as f64);
        kept += k;
        total += plane.len();
        labels.push(plane);
    }
    Ok(PseudoLabels {
        labels,
        per_image_coverage,
        coverage: if total == 0 { 0.0 } else { kept as f64 / total as f64 },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTrainReport {
    /// Pseudo-label coverage at the start of each round.
    pub coverage: Vec<f64>,
    pub steps: usize,
}

fn semantic_step(model: &SegModel, images: Tensor, labels: Vec<u8>, weights: &LossWeights) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g, true);
    let x = g.constant(images);
    let heads = model.forward_graph(&mut g, &vars, x);
    let labels: std::sync::Arc<[u8]> = labels.into();
    let seg = g.cross_entropy(heads.sem_prob, labels.clone(), IGNORE_LABEL)?;
    let refined = g.cross_entropy(heads.ref_prob, labels, IGNORE_LABEL)?;
    let total = g.weighted_sum(&[(seg, weights.w_seg), (refined, weights.w_ref)]);
    let mut grads = g.backward(total);
    let out = vars
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    Ok((g.scalar(total), out))
}

/// Runs `cfg.rounds` rounds of pseudo-labelling followed by
/// `cfg.epochs_per_round` epochs of semantic training on the kept pixels.
pub fn self_train_round(
    model: &mut SegModel,
    images: &[Tensor],
    cfg: &SelfTrainConfig,
    optim: &OptimSpec,
    weights: &LossWeights,
    batch_size: usize,
    seed: u64,
) -> Result<SelfTrainReport> {
    cfg.validate()?;
    optim.validate()?;
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut coverage = Vec::with_capacity(cfg.rounds);
    let mut steps = 0;
    for round in 0..cfg.rounds {
        let pseudo = generate_pseudo_labels(model, images, cfg.lambda_conf)?;
        coverage.push(pseudo.coverage);
        let usable: Vec<usize> = (0..images.len()).filter(|&i| pseudo.per_image_coverage[i] > 0.0).collect();
        if usable.is_empty() {
            return Err(Error::DegeneratePseudoLabels {
                threshold: cfg.lambda_conf,
            });
        }
        let mut opt = Sgd::new(&model.params, optim.gen_momentum, optim.gen_weight_decay);
        let total = usable.len().div_ceil(batch_size) * cfg.epochs_per_round;
        let mut local = 0;
        for epoch in 0..cfg.epochs_per_round {
            let order = shuffled(usable.len(), seed, (round * cfg.epochs_per_round + epoch) as u64);
            for chunk in order.chunks(batch_size) {
                let picks: Vec<usize> = chunk.iter().map(|&k| usable[k]).collect();
                let batch = Tensor::stack(&picks.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
                let labels: Vec<u8> = picks.iter().flat_map(|&i| pseudo.labels[i].iter().copied()).collect();
                let (loss, grads) = semantic_step(model, batch, labels, weights)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric("self-training loss diverged".into()));
                }
                let lr = poly_lr(optim.gen_lr, local, total, optim.poly_power);
                opt.step(&mut model.params, &grads, lr)?;
                local += 1;
                steps += 1;
            }
        }
    }
    Ok(SelfTrainReport { coverage, steps })
}

#[derive(Clone, Debug)]
pub struct SelfTrainSummary {
    pub miou_before: f64,
    pub miou_after: f64,
    pub report: SelfTrainReport,
    pub model: SegModel,
}

/// Self-trains a checkpointed model on the target-train images of `data`
/// and writes `selftrain.ckpt` and `selftrain.csv` to `out_dir`.
pub fn run_self_training(cfg: &RunConfig, data: &Dataset, mut model: SegModel, out_dir: &Path) -> Result<SelfTrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let images = load_target_images(data)?;
    let eval = load_eval_set(data)?;
    let miou_before = evaluate(&model, &eval)?.miou;
    let report = self_train_round(
        &mut model,
        &images,
        &cfg.selftrain,
        &cfg.optim,
        &cfg.weights,
        cfg.batch_size,
        derive_seed(cfg.seed, 4),
    )?;
    let miou_after = evaluate(&model, &eval)?.miou;

    let meta = CheckpointMeta {
        arch: model.arch().clone(),
        depth_min: model.bins().z_min(),
        depth_max: model.bins().z_max(),
        variant: cfg.variant,
        tag: "selftrain".into(),
        epoch: None,
        eval_miou: Some(miou_after),
    };
    checkpoint::save(&out_dir.join("selftrain.ckpt"), &meta, &model.params)?;
    let path = out_dir.join("selftrain.csv");
    let mut text = String::from("round,lambda_conf,coverage\n");
    for (r, c) in report.coverage.iter().enumerate() {
        text.push_str(&format!("{r},{},{c}\n", cfg.selftrain.lambda_conf));
    }
    text.push_str(&format!("# miou_before={miou_before} miou_after={miou_after}\n"));
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(SelfTrainSummary {
        miou_before,
        miou_after,
        report,
        model,
    })
}
