//! Scoring, visualisation and the variant ablation harness.

mod ablation;
mod render;

pub use ablation::{matches_reference_ordering, run_ablation, AblationRow, ABLATION_CSV_HEADER};
pub use render::{heat_color, render_heat, render_labels, render_map, MapSource, HEAT_HIGH, HEAT_LOW};

use crate::edges::boundary_oracle;
use crate::error::{Error, Result};

/// `counts[g * classes + p]`: ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulates one prediction; pixels whose ground truth is `ignore`
    /// are skipped.
    pub fn add(&mut self, pred: &[u8], gt: &[u8], ignore: u8) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        let c = self.classes;
        if let Some(&bad) = gt.iter().chain(pred).find(|&&l| l != ignore && l as usize >= c) {
            return Err(Error::Domain(format!("label {bad} with {c} classes")));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore {
                continue;
            }
            if p == ignore {
                return Err(Error::Domain("prediction uses the ignore label".into()));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("confusion matrices of different sizes".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

pub fn confusion_matrix(pred: &[u8], gt: &[u8], classes: usize, ignore: u8) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt, ignore)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

impl IouReport {
    pub fn present(&self) -> usize {
        self.per_class.iter().flatten().count()
    }
}

/// `IoU_c = TP / (TP + FP + FN)`, averaged over classes with a non-zero
/// denominator.
pub fn iou_from_confusion(cm: &ConfusionMatrix) -> Result<IouReport> {
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoClassesPresent);
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport { per_class, miou })
}

/// Share of the highest-entropy pixels lying within `radius` pixels of a
/// label boundary. As many top pixels are taken as there are boundary
/// pixels; ties at the cut are broken by pixel index.
pub fn entropy_boundary_alignment(entropy: &[f64], labels: &[u8], height: usize, width: usize, radius: usize) -> Result<f64> {
    if entropy.len() != height * width {
        return Err(Error::Shape(format!("{} entropy values for {height}x{width}", entropy.len())));
    }
    let oracle = boundary_oracle(labels, height, width)?;
    let k = oracle.count();
    if k == 0 {
        return Err(Error::EmptyTarget);
    }
    let band = oracle.dilate(radius);
    let mut order: Vec<usize> = (0..entropy.len()).collect();
    order.sort_by(|&a, &b| entropy[b].total_cmp(&entropy[a]).then(a.cmp(&b)));
    let hits = order[..k].iter().filter(|&&i| band.data[i] != 0).count();
    Ok(hits as f64 / k as f64)
}
