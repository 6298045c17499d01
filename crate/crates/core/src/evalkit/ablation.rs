//! Trains one model per unified-map variant and tabulates target mIoU.

use std::path::Path;
use std::time::Instant;

use crate::adapt::fit;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::AblationVariant;
use crate::scenegen::Dataset;

pub const ABLATION_CSV_HEADER: [&str; 4] = ["variant", "miou", "param_count", "wall_seconds"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Target mIoU of the final weights.
    pub miou: f64,
    /// Generator parameters; identical for every variant.
    pub param_count: usize,
    pub disc_param_count: usize,
    pub wall_seconds: f64,
}

/// Runs [`fit`] once per variant with otherwise identical settings, each
/// in `out_dir/<variant>`, and writes `out_dir/ablation.csv`.
pub fn run_ablation(base: &RunConfig, variants: &[AblationVariant], data: &Dataset, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = RunConfig {
            variant,
            ..base.clone()
        };
        let start = Instant::now();
        let report = fit(&cfg, data, &out_dir.join(variant.name()))?;
        rows.push(AblationRow {
            variant,
            miou: report.final_miou(),
            param_count: report.model.params.count(),
            disc_param_count: report.disc.params.count(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let path = out_dir.join("ablation.csv");
    let err = |e: csv::Error| Error::Dataset {
        path: path.clone(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(ABLATION_CSV_HEADER).map_err(err)?;
    for r in &rows {
        w.write_record([
            r.variant.name().to_string(),
            r.miou.to_string(),
            r.param_count.to_string(),
            format!("{:.3}", r.wall_seconds),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Whether the rows reproduce the reference ordering
/// `concat > entropy_only > fusion`; `None` if a variant is missing.
pub fn matches_reference_ordering(rows: &[AblationRow]) -> Option<bool> {
    let get = |v: AblationVariant| rows.iter().find(|r| r.variant == v).map(|r| r.miou);
    let concat = get(AblationVariant::Concat)?;
    let entropy = get(AblationVariant::EntropyOnly)?;
    let fusion = get(AblationVariant::Fusion)?;
    Some(concat > entropy && entropy > fusion)
}
