//! PPM export of label, probability, entropy and edge maps.

use std::path::Path;

use crate::edges::EdgeMap;
use crate::error::{Error, Result};
use crate::nn::{EntropyMap, ProbMap, IGNORE_LABEL};
use crate::pnm;

/// Colour of the smallest value on the heat ramp.
pub const HEAT_LOW: [u8; 3] = [128, 128, 128];
/// Colour of the largest value on the heat ramp.
pub const HEAT_HIGH: [u8; 3] = [255, 0, 0];

/// Linear gray-to-red ramp; `t` is clamped to `[0, 1]`.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for k in 0..3 {
        let lo = HEAT_LOW[k] as f64;
        let hi = HEAT_HIGH[k] as f64;
        out[k] = (lo + t * (hi - lo)).round() as u8;
    }
    out
}

/// Heat-ramp rendering normalised to the map's own `[min, max]`. A constant
/// map renders entirely in [`HEAT_LOW`].
pub fn render_heat(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Shape(format!("{} values for {height}x{width}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in heat map".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let rgb: Vec<u8> = values
        .iter()
        .flat_map(|&v| heat_color(if span > 0.0 { (v - lo) / span } else { 0.0 }))
        .collect();
    Ok(pnm::encode_ppm(width, height, &rgb))
}

/// Palette rendering; the ignore label is drawn black.
pub fn render_labels(labels: &[u8], height: usize, width: usize, palette: &[[f64; 3]]) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for {height}x{width}", labels.len())));
    }
    let mut rgb = Vec::with_capacity(labels.len() * 3);
    for &l in labels {
        if l == IGNORE_LABEL {
            rgb.extend([0, 0, 0]);
            continue;
        }
        let color = palette
            .get(l as usize)
            .ok_or_else(|| Error::Domain(format!("label {l} outside a {}-colour palette", palette.len())))?;
        rgb.extend(color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(pnm::encode_ppm(width, height, &rgb))
}

/// Anything [`render_map`] can draw. Probability and entropy maps use the
/// first sample of the batch and are reduced to per-pixel totals (entropy)
/// or maxima (probability).
pub enum MapSource<'a> {
    Labels {
        labels: &'a [u8],
        height: usize,
        width: usize,
        palette: &'a [[f64; 3]],
    },
    Entropy(&'a EntropyMap),
    Prob(&'a ProbMap),
    Edges(&'a EdgeMap),
}

pub fn render_map(source: &MapSource<'_>, path: &Path) -> Result<()> {
    let bytes = match source {
        MapSource::Labels {
            labels,
            height,
            width,
            palette,
        } => render_labels(labels, *height, *width, palette)?,
        MapSource::Entropy(e) => {
            let total = e.total();
            let s = total.shape();
            render_heat(total.sample(0), s.h, s.w)?
        }
        MapSource::Prob(p) => {
            let t = p.tensor();
            let s = t.shape();
            let plane = s.plane();
            let max: Vec<f64> = (0..plane)
                .map(|i| (0..s.c).map(|c| t.channel(0, c)[i]).fold(0.0, f64::max))
                .collect();
            render_heat(&max, s.h, s.w)?
        }
        MapSource::Edges(e) => render_heat(&e.normalized(), e.height, e.width)?,
    };
    pnm::write(path, &bytes)
}
