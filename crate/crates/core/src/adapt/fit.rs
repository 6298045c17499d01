//! The full training run: warmup, adversarial epochs, evaluation, logging.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{poly_lr, Batch, LossBreakdown, Trainer};
use crate::config::RunConfig;
use crate::edges::{edge_union, CannyParams};
use crate::error::{Error, Result};
use crate::evalkit::{iou_from_confusion, ConfusionMatrix, IouReport};
use crate::nn::{checkpoint, AblationVariant, ArchConfig, Discriminator, SegModel, Shape, Tensor, IGNORE_LABEL};
use crate::scenegen::{Dataset, Split};

pub const METRICS_HEADER: [&str; 12] = [
    "step", "epoch", "phase", "loss_seg", "loss_ref", "loss_dep", "loss_edge", "loss_adv_g", "loss_adv_d", "lr_gen",
    "lr_disc", "eval_miou",
];

const EVAL_CHUNK: usize = 8;

/// Stored next to the weights of every segmenter checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub depth_min: f64,
    pub depth_max: f64,
    pub variant: AblationVariant,
    /// `init`, `best`, `final` or `selftrain`.
    pub tag: String,
    pub epoch: Option<usize>,
    pub eval_miou: Option<f64>,
}

impl CheckpointMeta {
    pub fn load_model(path: &Path) -> Result<(CheckpointMeta, SegModel)> {
        let (meta, params): (CheckpointMeta, _) = checkpoint::load(path)?;
        let model = SegModel::from_params(meta.arch.clone(), meta.depth_min, meta.depth_max, params)?;
        Ok((meta, model))
    }
}

/// A labelled source sample with its edge target.
#[derive(Clone, Debug)]
pub struct SourceSample {
    pub image: Tensor,
    pub labels: Vec<u8>,
    pub depth: Vec<f64>,
    /// `{0, 1}` per pixel.
    pub edges: Vec<f64>,
}

/// Loads the source split; edge targets missing from the dataset are
/// extracted on the fly with `canny`.
pub fn load_source_set(data: &Dataset, canny: &CannyParams) -> Result<Vec<SourceSample>> {
    let classes = data.scene().num_classes;
    data.entries(Split::SourceTrain)
        .par_iter()
        .map(|entry| {
            let image = data.load_image(entry)?;
            let s = image.shape();
            let labels = data.load_labels(entry)?;
            let depth = data.load_depth(entry)?;
            let edges = match data.load_edges(entry)? {
                Some(e) => e,
                None => edge_union(&labels, s.h, s.w, classes, canny)?.data,
            };
            Ok(SourceSample {
                image,
                labels,
                depth,
                edges: edges.iter().map(|&v| f64::from(v != 0)).collect(),
            })
        })
        .collect()
}

/// Unlabelled target training images.
pub fn load_target_images(data: &Dataset) -> Result<Vec<Tensor>> {
    data.entries(Split::TargetTrain).par_iter().map(|e| data.load_image(e)).collect()
}

/// Held-out target images with labels.
pub fn load_eval_set(data: &Dataset) -> Result<Vec<(Tensor, Vec<u8>)>> {
    data.entries(Split::TargetEval)
        .par_iter()
        .map(|e| Ok((data.load_image(e)?, data.load_labels(e)?)))
        .collect()
}

/// Refined-head arg-max scored against the labels.
pub fn evaluate(model: &SegModel, set: &[(Tensor, Vec<u8>)]) -> Result<IouReport> {
    let parts: Vec<ConfusionMatrix> = set
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let images = Tensor::stack(&chunk.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>())?;
            let pred = model.predict(&images)?.labels();
            let gt: Vec<u8> = chunk.iter().flat_map(|(_, y)| y.iter().copied()).collect();
            let mut cm = ConfusionMatrix::new(model.num_classes());
            cm.add(&pred, &gt, IGNORE_LABEL)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for p in &parts {
        cm.merge(p)?;
    }
    iou_from_confusion(&cm)
}

pub(crate) fn source_batch(samples: &[&SourceSample]) -> Result<Batch> {
    let images = Tensor::stack(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
    let s = images.shape();
    let plane = Shape::new(s.n, 1, s.h, s.w);
    let labels: Vec<u8> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let depth: Vec<f64> = samples.iter().flat_map(|s| s.depth.iter().copied()).collect();
    let edges: Vec<f64> = samples.iter().flat_map(|s| s.edges.iter().copied()).collect();
    Ok(Batch {
        images,
        labels: Some(labels.into()),
        depth: Some(Arc::new(Tensor::from_vec(plane, depth)?)),
        edges: Some(Arc::new(Tensor::from_vec(plane, edges)?)),
    })
}

/// Independent per-purpose seeds from the run seed.
pub(crate) fn derive_seed(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(purpose.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ purpose
}

pub(crate) fn shuffled(len: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Target mIoU of the untrained model.
    pub init_miou: f64,
    /// Target mIoU after each epoch.
    pub epoch_miou: Vec<f64>,
    pub best_miou: f64,
    pub best_epoch: Option<usize>,
    pub steps: usize,
    pub model: SegModel,
    pub disc: Discriminator,
}

impl FitReport {
    /// mIoU of the final weights.
    pub fn final_miou(&self) -> f64 {
        self.epoch_miou.last().copied().unwrap_or(self.init_miou)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn step_row(step: usize, epoch: usize, phase: &str, l: &LossBreakdown, lr_gen: f64, lr_disc: Option<f64>) -> Vec<String> {
    vec![
        step.to_string(),
        epoch.to_string(),
        phase.to_string(),
        fmt(l.seg),
        fmt(l.refined),
        fmt(l.depth),
        fmt(l.edge),
        fmt(l.adv_g),
        fmt(l.adv_d),
        lr_gen.to_string(),
        fmt(lr_disc),
        String::new(),
    ]
}

/// Trains per `cfg` on `data`, writing `config.json`, `metrics.csv` and the
/// `init`, `best` and `final` checkpoints into `out_dir`.
pub fn fit(cfg: &RunConfig, data: &Dataset, out_dir: &Path) -> Result<FitReport> {
    cfg.validate()?;
    let scene = data.scene();
    if scene.num_classes != cfg.arch.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, architecture {}",
            scene.num_classes, cfg.arch.num_classes
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join("config.json");
    std::fs::write(&config_path, cfg.to_json()).map_err(|e| Error::io(&config_path, e))?;

    let (z_min, z_max) = (scene.depth_min, scene.depth_max);
    let model = SegModel::new(cfg.arch.clone(), z_min, z_max, derive_seed(cfg.seed, 1))?;
    let disc_in = cfg.variant.channels(cfg.arch.num_classes, cfg.arch.depth_bins);
    let disc = Discriminator::new(disc_in, &cfg.arch.disc_channels, derive_seed(cfg.seed, 2))?;
    let mut trainer = Trainer::new(model, disc, cfg.optim.clone())?;

    let meta = |tag: &str, epoch: Option<usize>, miou: Option<f64>| CheckpointMeta {
        arch: cfg.arch.clone(),
        depth_min: z_min,
        depth_max: z_max,
        variant: cfg.variant,
        tag: tag.to_string(),
        epoch,
        eval_miou: miou,
    };

    let source = load_source_set(data, &cfg.canny)?;
    let target = load_target_images(data)?;
    let eval = load_eval_set(data)?;
    if source.is_empty() {
        return Err(Error::Dataset {
            path: data.root().to_path_buf(),
            msg: "no source-train samples".into(),
        });
    }
    for s in &source {
        trainer.model.check_input(s.image.shape())?;
    }

    let init_miou = if eval.is_empty() { 0.0 } else { evaluate(&trainer.model, &eval)?.miou };
    checkpoint::save(&out_dir.join("init.ckpt"), &meta("init", None, Some(init_miou)), &trainer.model.params)?;
    let mut best = (init_miou, None, trainer.model.params.clone());

    let metrics_path = out_dir.join("metrics.csv");
    let mut csv = csv::Writer::from_path(&metrics_path).map_err(|e| Error::Dataset {
        path: metrics_path.clone(),
        msg: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Dataset {
        path: metrics_path.clone(),
        msg: e.to_string(),
    };
    csv.write_record(METRICS_HEADER).map_err(csv_err)?;

    let bs = cfg.batch_size;
    let steps_per_epoch = source.len().div_ceil(bs);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = cfg.warmup_epochs();
    let shuffle_seed = derive_seed(cfg.seed, 3);
    let mut step = 0;
    let mut epoch_miou = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let adversarial = epoch >= warmup && !target.is_empty();
        let src_order = shuffled(source.len(), shuffle_seed, 2 * epoch as u64);
        let tgt_order = shuffled(target.len(), shuffle_seed, 2 * epoch as u64 + 1);
        for (b, chunk) in src_order.chunks(bs).enumerate() {
            let batch = source_batch(&chunk.iter().map(|&i| &source[i]).collect::<Vec<_>>())?;
            let lr = poly_lr(cfg.optim.gen_lr, step, total_steps, cfg.optim.poly_power);
            let (phase, losses, lr_disc) = if adversarial {
                let picks: Vec<Tensor> = (0..chunk.len())
                    .map(|k| target[tgt_order[(b * bs + k) % target.len()]].clone())
                    .collect();
                let tgt = Batch::unlabeled(Tensor::stack(&picks)?);
                let l = trainer.adversarial(&batch, &tgt, &cfg.weights, cfg.variant, lr)?;
                ("adversarial", l, Some(cfg.optim.disc_lr))
            } else {
                ("supervised", trainer.supervised(&batch, &cfg.weights, lr)?, None)
            };
            if !losses.total.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at step {step}")));
            }
            csv.write_record(step_row(step, epoch, phase, &losses, lr, lr_disc)).map_err(csv_err)?;
            step += 1;
        }
        let miou = if eval.is_empty() { 0.0 } else { evaluate(&trainer.model, &eval)?.miou };
        epoch_miou.push(miou);
        let mut row = vec![String::new(); METRICS_HEADER.len()];
        row[0] = step.to_string();
        row[1] = epoch.to_string();
        row[2] = "eval".into();
        row[11] = miou.to_string();
        csv.write_record(&row).map_err(csv_err)?;
        if miou > best.0 || best.1.is_none() {
            best = (miou, Some(epoch), trainer.model.params.clone());
        }
    }
    csv.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let final_epoch = cfg.epochs.checked_sub(1);
    let final_miou = epoch_miou.last().copied().unwrap_or(init_miou);
    checkpoint::save(&out_dir.join("final.ckpt"), &meta("final", final_epoch, Some(final_miou)), &trainer.model.params)?;
    checkpoint::save(&out_dir.join("best.ckpt"), &meta("best", best.1, Some(best.0)), &best.2)?;
    checkpoint::save(&out_dir.join("disc.ckpt"), &meta("disc", final_epoch, None), &trainer.disc.params)?;

    Ok(FitReport {
        init_miou,
        epoch_miou,
        best_miou: best.0,
        best_epoch: best.1,
        steps: step,
        model: trainer.model,
        disc: trainer.disc,
    })
}
