//! On-disk datasets: Netpbm rasters plus a JSON manifest.
//!
//! Target-train samples are written without labels or depth, so nothing in
//! the training pipeline can read them.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_domain_shift, generate_scene, Domain, DomainShift, SceneConfig};
use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};
use crate::pnm;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "source-train")]
    SourceTrain,
    #[serde(rename = "target-train")]
    TargetTrain,
    #[serde(rename = "target-eval")]
    TargetEval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::SourceTrain, Split::TargetTrain, Split::TargetEval];

    pub fn name(&self) -> &'static str {
        match self {
            Split::SourceTrain => "source-train",
            Split::TargetTrain => "target-train",
            Split::TargetEval => "target-eval",
        }
    }

    fn slot(&self) -> usize {
        *self as usize
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetCounts {
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        DatasetCounts {
            n_source: 200,
            n_target: 200,
            n_eval: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestConfig {
    pub scene: SceneConfig,
    pub shift: DomainShift,
    pub counts: DatasetCounts,
    /// Depth rasters store `round(z_mm / depth_unit_mm)`.
    pub depth_unit_mm: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    pub files: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: ManifestConfig,
    pub samples: Vec<SampleEntry>,
}

/// Smallest power-of-two millimetre unit that fits `z_max` in 16 bits.
pub fn depth_unit_mm(z_max: f64) -> u32 {
    let mut unit = 1u32;
    while z_max * 1000.0 / unit as f64 > u16::MAX as f64 {
        unit *= 2;
    }
    unit
}

fn quantize_image(img: &Tensor) -> Vec<u8> {
    let s = img.shape();
    let mut rgb = Vec::with_capacity(s.plane() * 3);
    for row in 0..s.h {
        for col in 0..s.w {
            for c in 0..3 {
                rgb.push((img.at(0, c, row, col).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    rgb
}

struct Rendered {
    entry: SampleEntry,
    image: Vec<u8>,
    labels: Option<Vec<u8>>,
    depth: Option<Vec<u8>>,
}

fn render_entry(
    cfg: &SceneConfig,
    shift: &DomainShift,
    unit_mm: u32,
    split: Split,
    ordinal: usize,
    index: u64,
) -> Result<Rendered> {
    let mut sample = generate_scene(cfg, index)?;
    let prefix = match split {
        Split::SourceTrain => "src",
        Split::TargetTrain => "tgt",
        Split::TargetEval => "eval",
    };
    let id = format!("{prefix}_{ordinal:05}");
    let domain = if split == Split::SourceTrain { Domain::Source } else { Domain::Target };
    if domain == Domain::Target {
        let noise_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index;
        sample.image = apply_domain_shift(&sample.image, shift, noise_seed);
    }
    let (h, w) = (cfg.height, cfg.width);
    let image = pnm::encode_ppm(w, h, &quantize_image(&sample.image));
    let keep_labels = split != Split::TargetTrain;
    let labels = keep_labels.then(|| {
        let wide: Vec<u16> = sample.labels.iter().map(|&l| l as u16).collect();
        pnm::encode_pgm16(w, h, &wide)
    });
    let depth = keep_labels.then(|| {
        let fixed: Vec<u16> = sample
            .depth
            .iter()
            .map(|&z| (z * 1000.0 / unit_mm as f64).round().min(u16::MAX as f64) as u16)
            .collect();
        pnm::encode_pgm16(w, h, &fixed)
    });
    let files = SampleFiles {
        image: format!("{id}.ppm"),
        labels: keep_labels.then(|| format!("{id}_labels.pgm")),
        depth: keep_labels.then(|| format!("{id}_depth.pgm")),
        edges: None,
    };
    Ok(Rendered {
        entry: SampleEntry {
            id,
            domain,
            split,
            files,
        },
        image,
        labels,
        depth,
    })
}

/// Writes source-train, target-train and target-eval samples plus the
/// manifest into `out_dir`. Scenes are indexed source first, then target,
/// then evaluation, so the three splits never share a scene.
pub fn generate_dataset(
    cfg: &SceneConfig,
    shift: &DomainShift,
    counts: DatasetCounts,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let unit = depth_unit_mm(cfg.depth_max);
    let jobs: Vec<(Split, usize, u64)> = (0..counts.n_source)
        .map(|i| (Split::SourceTrain, i, i as u64))
        .chain((0..counts.n_target).map(|i| (Split::TargetTrain, i, (counts.n_source + i) as u64)))
        .chain((0..counts.n_eval).map(|i| (Split::TargetEval, i, (counts.n_source + counts.n_target + i) as u64)))
        .collect();
    let rendered = jobs
        .par_iter()
        .map(|&(split, ordinal, index)| render_entry(cfg, shift, unit, split, ordinal, index))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(rendered.len());
    for r in rendered {
        pnm::write(&out_dir.join(&r.entry.files.image), &r.image)?;
        if let (Some(name), Some(bytes)) = (&r.entry.files.labels, &r.labels) {
            pnm::write(&out_dir.join(name), bytes)?;
        }
        if let (Some(name), Some(bytes)) = (&r.entry.files.depth, &r.depth) {
            pnm::write(&out_dir.join(name), bytes)?;
        }
        samples.push(r.entry);
    }
    let manifest = Manifest {
        config: ManifestConfig {
            scene: cfg.clone(),
            shift: shift.clone(),
            counts,
            depth_unit_mm: unit,
        },
        samples,
    };
    write_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Per-split read counters.
#[derive(Debug, Default)]
pub struct AccessLog {
    images: [AtomicUsize; 3],
    labels: [AtomicUsize; 3],
}

impl AccessLog {
    pub fn image_reads(&self, split: Split) -> usize {
        self.images[split.slot()].load(Ordering::SeqCst)
    }

    /// Label reads, including refused attempts.
    pub fn label_reads(&self, split: Split) -> usize {
        self.labels[split.slot()].load(Ordering::SeqCst)
    }
}

/// Read access to a generated dataset; every image and label read is counted.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    log: Arc<AccessLog>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Dataset {
            path: path.clone(),
            msg: format!("cannot read manifest: {e}"),
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Dataset {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if manifest
            .samples
            .iter()
            .any(|s| s.split == Split::TargetTrain && (s.files.labels.is_some() || s.files.depth.is_some()))
        {
            return Err(Error::Dataset {
                path,
                msg: "target-train samples must not carry labels".into(),
            });
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            log: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.manifest.config.scene
    }

    pub fn access_log(&self) -> Arc<AccessLog> {
        self.log.clone()
    }

    pub fn entries(&self, split: Split) -> Vec<&SampleEntry> {
        self.manifest.samples.iter().filter(|s| s.split == split).collect()
    }

    fn raster(&self, name: &str) -> Result<pnm::Raster> {
        let path = self.root.join(name);
        let r = pnm::read(&path).map_err(|e| match e {
            Error::Io { path, source } => Error::Dataset {
                path,
                msg: source.to_string(),
            },
            other => Error::Dataset {
                path: path.clone(),
                msg: other.to_string(),
            },
        })?;
        let scene = self.scene();
        if (r.height, r.width) != (scene.height, scene.width) {
            return Err(Error::Dataset {
                path,
                msg: format!("raster is {}x{}, expected {}x{}", r.height, r.width, scene.height, scene.width),
            });
        }
        Ok(r)
    }

    /// `1×3×H×W` image in [0, 1].
    pub fn load_image(&self, entry: &SampleEntry) -> Result<Tensor> {
        self.log.images[entry.split.slot()].fetch_add(1, Ordering::SeqCst);
        let r = self.raster(&entry.files.image)?;
        let mut t = Tensor::zeros(Shape::new(1, 3, r.height, r.width));
        for row in 0..r.height {
            for col in 0..r.width {
                for c in 0..3 {
                    let v = r.samples[(row * r.width + col) * 3 + c] as f64 / r.maxval as f64;
                    t.set(0, c, row, col, v);
                }
            }
        }
        Ok(t)
    }

    pub fn load_labels(&self, entry: &SampleEntry) -> Result<Vec<u8>> {
        self.log.labels[entry.split.slot()].fetch_add(1, Ordering::SeqCst);
        if entry.split == Split::TargetTrain {
            return Err(Error::Protocol(format!("labels of target-train sample {} requested", entry.id)));
        }
        let name = entry
            .files
            .labels
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("sample {} has no labels", entry.id)))?;
        let r = self.raster(name)?;
        r.samples
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| Error::Domain(format!("label {v} in {name}"))))
            .collect()
    }

    /// Depth in metres, clamped to the scene's depth range.
    pub fn load_depth(&self, entry: &SampleEntry) -> Result<Vec<f64>> {
        let name = entry
            .files
            .depth
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("sample {} has no depth", entry.id)))?;
        let unit = self.manifest.config.depth_unit_mm as f64;
        let scene = self.scene();
        Ok(self
            .raster(name)?
            .samples
            .iter()
            .map(|&v| (v as f64 * unit / 1000.0).clamp(scene.depth_min, scene.depth_max))
            .collect())
    }

    /// Stored `{0, 255}` edge map, if extracted.
    pub fn load_edges(&self, entry: &SampleEntry) -> Result<Option<Vec<u8>>> {
        match &entry.files.edges {
            None => Ok(None),
            Some(name) => Ok(Some(self.raster(name)?.samples.iter().map(|&v| v.min(255) as u8).collect())),
        }
    }

    /// Writes the edge map of sample `id`; persist with [`Dataset::save_manifest`].
    pub fn attach_edges(&mut self, id: &str, edges: &[u8]) -> Result<()> {
        let (w, h) = (self.scene().width, self.scene().height);
        let entry = self
            .manifest
            .samples
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Dataset {
                path: self.root.clone(),
                msg: format!("no sample {id}"),
            })?;
        let name = format!("{id}_edges.pgm");
        pnm::write(&self.root.join(&name), &pnm::encode_pgm8(w, h, edges))?;
        entry.files.edges = Some(name);
        Ok(())
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_manifest(&self.root, &self.manifest)
    }
}
