//! Procedural source/target scenes: rectangles and ellipses at log-uniform
//! depths over a background, with a photometric shift for the target domain.

mod dataset;

pub use dataset::{
    generate_dataset, AccessLog, Dataset, DatasetCounts, Manifest, ManifestConfig, SampleEntry,
    SampleFiles, Split,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};

pub const BACKGROUND_CLASS: u8 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Inclusive `[min, max]` number of foreground shapes.
    pub shapes_per_scene: [usize; 2],
    pub depth_min: f64,
    pub depth_max: f64,
    /// Base colour per class; generated from evenly spaced hues when empty.
    pub class_palette: Vec<[f64; 3]>,
    /// Half-width of the uniform per-shape colour jitter.
    pub color_jitter: f64,
    /// Smallest shape half-extent in pixels.
    pub min_half_extent: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 128,
            num_classes: 5,
            shapes_per_scene: [2, 5],
            depth_min: 1.0,
            depth_max: 666.36,
            class_palette: Vec::new(),
            color_jitter: 0.06,
            min_half_extent: 5,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::Config(format!(
                "num_classes must be in [2, 254], got {}",
                self.num_classes
            )));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min && self.depth_max.is_finite()) {
            return Err(Error::Config(format!(
                "depth range requires 0 < depth_min < depth_max, got [{}, {}]",
                self.depth_min, self.depth_max
            )));
        }
        if self.shapes_per_scene[0] > self.shapes_per_scene[1] {
            return Err(Error::Config("shapes_per_scene min exceeds max".into()));
        }
        if self.height < 4 * self.min_half_extent || self.width < 4 * self.min_half_extent {
            return Err(Error::Config(format!(
                "{}x{} scene cannot hold shapes of half-extent {}",
                self.height, self.width, self.min_half_extent
            )));
        }
        if !self.class_palette.is_empty() && self.class_palette.len() < self.num_classes {
            return Err(Error::Config(format!(
                "palette has {} colours for {} classes",
                self.class_palette.len(),
                self.num_classes
            )));
        }
        if self.class_palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("palette colours must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn palette(&self) -> Vec<[f64; 3]> {
        if !self.class_palette.is_empty() {
            return self.class_palette.clone();
        }
        let fg = self.num_classes - 1;
        std::iter::once([0.45, 0.45, 0.45])
            .chain((0..fg).map(|i| hsv_to_rgb(i as f64 / fg as f64, 0.75, 0.85)))
            .collect()
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).max(0.0);
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// One scene: `1×3×H×W` image in [0, 1], labels and metric depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Vec<u8>,
    pub depth: Vec<f64>,
    pub domain: Domain,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// A placed foreground primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub kind: ShapeKind,
    pub class: u8,
    pub center: (f64, f64),
    pub half: (f64, f64),
    pub depth: f64,
    pub color: [f64; 3],
    /// Linear shading `(gx, gy)` in colour units per half-extent.
    pub shading: (f64, f64),
}

impl Primitive {
    /// Pixel-centre containment test.
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dy = (row as f64 + 0.5 - self.center.0) / self.half.0;
        let dx = (col as f64 + 0.5 - self.center.1) / self.half.1;
        match self.kind {
            ShapeKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }

    fn shade(&self, row: usize, col: usize) -> [f64; 3] {
        let dy = (row as f64 + 0.5 - self.center.0) / self.half.0;
        let dx = (col as f64 + 0.5 - self.center.1) / self.half.1;
        let s = self.shading.0 * dx + self.shading.1 * dy;
        self.color.map(|c| (c + s).clamp(0.0, 1.0))
    }
}

/// Scene layout drawn from the `(seed, index)` stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub background: [f64; 3],
    pub primitives: Vec<Primitive>,
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| {
        let d = if amount > 0.0 { rng.random_range(-amount..=amount) } else { 0.0 };
        (c + d).clamp(0.0, 1.0)
    })
}

pub fn scene_layout(cfg: &SceneConfig, index: u64) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let palette = cfg.palette();
    let background = jitter(&mut rng, palette[0], cfg.color_jitter);
    let [lo, hi] = cfg.shapes_per_scene;
    let count = rng.random_range(lo..=hi);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let min_half = cfg.min_half_extent as f64;
    let log_span = (cfg.depth_max / cfg.depth_min).ln();
    let primitives = (0..count)
        .map(|_| {
            let class = rng.random_range(1..cfg.num_classes) as u8;
            // odd classes are boxes, even classes are blobs
            let kind = if class % 2 == 1 { ShapeKind::Rect } else { ShapeKind::Ellipse };
            let half = (
                rng.random_range(min_half..=(h / 3.0).max(min_half)),
                rng.random_range(min_half..=(w / 4.0).max(min_half)),
            );
            let center = (rng.random_range(0.0..h), rng.random_range(0.0..w));
            let depth = (cfg.depth_min * (rng.random::<f64>() * log_span).exp()).clamp(cfg.depth_min, cfg.depth_max);
            let color = jitter(&mut rng, palette[class as usize], cfg.color_jitter);
            let shading = (rng.random_range(-0.08..=0.08), rng.random_range(-0.08..=0.08));
            Primitive {
                kind,
                class,
                center,
                half,
                depth,
                color,
                shading,
            }
        })
        .collect();
    Ok(SceneLayout {
        background,
        primitives,
    })
}

/// Rasterises a layout with a per-pixel depth test; the nearest shape wins
/// and later shapes win exact depth ties.
pub fn render_layout(cfg: &SceneConfig, layout: &SceneLayout) -> Sample {
    let (h, w) = (cfg.height, cfg.width);
    let mut image = Tensor::zeros(Shape::new(1, 3, h, w));
    let mut labels = vec![BACKGROUND_CLASS; h * w];
    let mut depth = vec![cfg.depth_max; h * w];
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (k, prim) in layout.primitives.iter().enumerate() {
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                if prim.depth <= depth[i] && prim.contains(row, col) {
                    depth[i] = prim.depth;
                    labels[i] = prim.class;
                    owner[i] = Some(k);
                }
            }
        }
    }
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let rgb = match owner[i] {
                Some(k) => layout.primitives[k].shade(row, col),
                None => layout.background,
            };
            for (c, v) in rgb.into_iter().enumerate() {
                image.set(0, c, row, col, v);
            }
        }
    }
    Sample {
        image,
        labels,
        depth,
        domain: Domain::Source,
    }
}

/// Deterministic scene `index` for `cfg`.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<Sample> {
    let layout = scene_layout(cfg, index)?;
    Ok(render_layout(cfg, &layout))
}

/// Photometric gap between the domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainShift {
    pub brightness_offset: f64,
    pub contrast_gain: f64,
    /// Rotation about the grey axis, radians.
    pub hue_rotation: f64,
    pub noise_stddev: f64,
    /// Angular frequency, radians per pixel, of an additive sinusoidal texture.
    pub texture_frequency: f64,
}

/// Amplitude of the texture term.
pub const TEXTURE_AMPLITUDE: f64 = 0.08;

impl DomainShift {
    pub fn identity() -> Self {
        DomainShift {
            brightness_offset: 0.0,
            contrast_gain: 1.0,
            hue_rotation: 0.0,
            noise_stddev: 0.0,
            texture_frequency: 0.0,
        }
    }
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            brightness_offset: -0.08,
            contrast_gain: 0.8,
            hue_rotation: 0.5,
            noise_stddev: 0.04,
            texture_frequency: 0.7,
        }
    }
}

/// Applies `shift` to a `N×3×H×W` image, clamping to [0, 1]. Identity
/// components are skipped so the identity shift is exact.
pub fn apply_domain_shift(img: &Tensor, shift: &DomainShift, seed: u64) -> Tensor {
    let s = img.shape();
    let mut out = img.clone();
    let plane = s.plane();
    if shift.hue_rotation != 0.0 {
        let (sin, cos) = shift.hue_rotation.sin_cos();
        let k = 1.0 / 3.0;
        let sq = (1.0f64 / 3.0).sqrt();
        // Rodrigues rotation about (1, 1, 1) / sqrt(3)
        let a = cos + (1.0 - cos) * k;
        let b = (1.0 - cos) * k - sq * sin;
        let c = (1.0 - cos) * k + sq * sin;
        let m = [[a, b, c], [c, a, b], [b, c, a]];
        for n in 0..s.n {
            let px = out.sample_mut(n);
            for i in 0..plane {
                let rgb = [px[i], px[plane + i], px[2 * plane + i]];
                for (ch, row) in m.iter().enumerate() {
                    px[ch * plane + i] = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
                }
            }
        }
    }
    if shift.contrast_gain != 1.0 {
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v - 0.5) * shift.contrast_gain + 0.5);
    }
    if shift.brightness_offset != 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v += shift.brightness_offset);
    }
    if shift.texture_frequency != 0.0 {
        let f = shift.texture_frequency;
        for n in 0..s.n {
            for c in 0..s.c {
                for row in 0..s.h {
                    for col in 0..s.w {
                        let t = TEXTURE_AMPLITUDE * (f * col as f64).sin() * (f * row as f64).sin();
                        let i = out.index(n, c, row, col);
                        out.data_mut()[i] += t;
                    }
                }
            }
        }
    }
    if shift.noise_stddev > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, shift.noise_stddev).expect("finite stddev");
        out.data_mut().iter_mut().for_each(|v| *v += dist.sample(&mut rng));
    }
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Mean of the RGB channels.
pub fn to_gray(img: &Tensor) -> Vec<f64> {
    let s = img.shape();
    let p = s.plane();
    let mut out = vec![0.0; s.n * p];
    for n in 0..s.n {
        for c in 0..s.c {
            for (o, v) in out[n * p..(n + 1) * p].iter_mut().zip(img.channel(n, c)) {
                *o += v / s.c as f64;
            }
        }
    }
    out
}
