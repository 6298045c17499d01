//! Edge ground truth from semantic label maps.
//!
//! Each class mask is run through a classical Canny detector and the
//! per-class results are merged. [`boundary_oracle`] gives the brute-force
//! 4-neighbour definition used to validate the detector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::IGNORE_LABEL;

pub const EDGE_ON: u8 = 255;

/// Binary `{0, 255}` edge map in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl EdgeMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        EdgeMap {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == EDGE_ON
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == EDGE_ON).count()
    }

    /// Edge values scaled to `{0.0, 1.0}`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }

    /// Pixel-wise maximum.
    pub fn union(&mut self, other: &EdgeMap) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = (*a).max(b);
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> EdgeMap {
        let (h, w) = (self.height, self.width);
        let mut out = EdgeMap::zeros(h, w);
        for row in 0..h {
            for col in 0..w {
                if !self.get(row, col) {
                    continue;
                }
                for r in row.saturating_sub(radius)..=(row + radius).min(h - 1) {
                    for c in col.saturating_sub(radius)..=(col + radius).min(w - 1) {
                        out.data[r * w + c] = EDGE_ON;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    /// Fractions of the largest gradient magnitude.
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            gaussian_sigma: 1.0,
            low_threshold: 0.1,
            high_threshold: 0.3,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gaussian_sigma > 0.0
            && self.low_threshold > 0.0
            && self.high_threshold >= self.low_threshold
            && self.high_threshold <= 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "canny requires sigma > 0 and 0 < low <= high <= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn kernel_radius(&self) -> usize {
        (3.0 * self.gaussian_sigma).ceil() as usize
    }
}

/// Marks every pixel with a differently labelled 4-neighbour.
pub fn boundary_oracle(labels: &[u8], height: usize, width: usize) -> Result<EdgeMap> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for {height}x{width}", labels.len())));
    }
    if labels.contains(&IGNORE_LABEL) {
        return Err(Error::Domain("boundary oracle needs fully labelled maps".into()));
    }
    let mut out = EdgeMap::zeros(height, width);
    for row in 0..height {
        for col in 0..width {
            let here = labels[row * width + col];
            let differs = (row > 0 && labels[(row - 1) * width + col] != here)
                || (row + 1 < height && labels[(row + 1) * width + col] != here)
                || (col > 0 && labels[row * width + col - 1] != here)
                || (col + 1 < width && labels[row * width + col + 1] != here);
            if differs {
                out.data[row * width + col] = EDGE_ON;
            }
        }
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable blur with replicated borders.
fn blur(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            tmp[row * w + col] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * img[row * w + clamp(col as isize + i as isize - r as isize, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            out[row * w + col] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(row as isize + i as isize - r as isize, h) * w + col])
                .sum();
        }
    }
    out
}

/// Classical Canny: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression and 8-connected double-threshold hysteresis.
pub fn canny(gray: &[f64], height: usize, width: usize, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    if gray.len() != height * width {
        return Err(Error::Shape(format!("{} pixels for {height}x{width}", gray.len())));
    }
    let size = 2 * params.kernel_radius() + 1;
    if height < size || width < size {
        return Err(Error::InputSize(format!(
            "{height}x{width} image is smaller than the {size}x{size} gaussian kernel"
        )));
    }
    let (h, w) = (height, width);
    let smooth = blur(gray, h, w, &gaussian_kernel(params.gaussian_sigma, params.kernel_radius()));
    let at = |r: isize, c: isize| smooth[r.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize];

    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    let mut max_mag: f64 = 0.0;
    for row in 0..h as isize {
        for col in 0..w as isize {
            let x = (at(row - 1, col + 1) + 2.0 * at(row, col + 1) + at(row + 1, col + 1))
                - (at(row - 1, col - 1) + 2.0 * at(row, col - 1) + at(row + 1, col - 1));
            let y = (at(row + 1, col - 1) + 2.0 * at(row + 1, col) + at(row + 1, col + 1))
                - (at(row - 1, col - 1) + 2.0 * at(row - 1, col) + at(row - 1, col + 1));
            let i = row as usize * w + col as usize;
            gx[i] = x;
            gy[i] = y;
            mag[i] = x.hypot(y);
            max_mag = max_mag.max(mag[i]);
        }
    }
    if max_mag <= 1e-12 {
        return Ok(EdgeMap::zeros(h, w));
    }
    // Magnitudes on a 1e-9 grid relative to the maximum, so rounding noise
    // (e.g. from a constant offset) cannot break ties between twin pixels.
    let level: Vec<f64> = mag.iter().map(|m| (m / max_mag * 1e9).round()).collect();

    let mut thin = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if level[i] == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dr, dc): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let neighbour = |sign: isize| {
                let r = row as isize + sign * dr;
                let c = col as isize + sign * dc;
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    0.0
                } else {
                    level[r as usize * w + c as usize]
                }
            };
            if level[i] >= neighbour(1) && level[i] >= neighbour(-1) {
                thin[i] = level[i];
            }
        }
    }

    let high = (params.high_threshold * 1e9).round();
    let low = (params.low_threshold * 1e9).round();
    let mut out = EdgeMap::zeros(h, w);
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= high {
            out.data[i] = EDGE_ON;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (row, col) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let j = r as usize * w + c as usize;
                if out.data[j] == 0 && thin[j] >= low {
                    out.data[j] = EDGE_ON;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    #[default]
    Union,
    PerClassStack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EdgeGroundTruth {
    Union(EdgeMap),
    PerClass(Vec<EdgeMap>),
}

impl EdgeGroundTruth {
    /// Single map: the union itself, or the maximum over the stack.
    pub fn merged(&self) -> EdgeMap {
        match self {
            EdgeGroundTruth::Union(m) => m.clone(),
            EdgeGroundTruth::PerClass(maps) => {
                let mut out = maps[0].clone();
                maps[1..].iter().for_each(|m| out.union(m));
                out
            }
        }
    }
}

/// Canny on each class mask; `PerClassStack` returns one map per class id
/// `0..num_classes`.
pub fn extract_edge_gt(
    labels: &[u8],
    height: usize,
    width: usize,
    num_classes: usize,
    params: &CannyParams,
    mode: EdgeMode,
) -> Result<EdgeGroundTruth> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for {height}x{width}", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::Domain(format!("label {l} with {num_classes} classes")));
    }
    let mut maps = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let present = labels.iter().any(|&l| l as usize == class);
        let map = if present {
            let mask: Vec<f64> = labels.iter().map(|&l| f64::from(l as usize == class)).collect();
            canny(&mask, height, width, params)?
        } else {
            params.validate()?;
            EdgeMap::zeros(height, width)
        };
        maps.push(map);
    }
    let gt = EdgeGroundTruth::PerClass(maps);
    Ok(match mode {
        EdgeMode::PerClassStack => gt,
        EdgeMode::Union => EdgeGroundTruth::Union(gt.merged()),
    })
}

/// Union edge map with the given parameters.
pub fn edge_union(labels: &[u8], height: usize, width: usize, num_classes: usize, params: &CannyParams) -> Result<EdgeMap> {
    Ok(extract_edge_gt(labels, height, width, num_classes, params, EdgeMode::Union)?.merged())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(size: usize, lo: usize, hi: usize) -> Vec<u8> {
        let mut m = vec![0u8; size * size];
        for r in lo..hi {
            for c in lo..hi {
                m[r * size + c] = 1;
            }
        }
        m
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(boundary_oracle(&[3; 16], 4, 4).unwrap().count(), 0);
        let split: Vec<u8> = (0..64).map(|i| u8::from(i % 8 >= 4)).collect();
        let e = boundary_oracle(&split, 8, 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(e.get(r, c), c == 3 || c == 4);
            }
        }
        assert!(boundary_oracle(&[0, 255, 0, 0], 2, 2).is_err());
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = canny(&[0.7; 400], 20, 20, &CannyParams::default()).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn square_edges_hug_the_perimeter() {
        let labels = square(32, 8, 24);
        let mask: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let e = canny(&mask, 32, 32, &CannyParams::default()).unwrap();
        let near = boundary_oracle(&labels, 32, 32).unwrap().dilate(1);
        assert!(e.count() > 0);
        for i in 0..e.data.len() {
            if e.data[i] == EDGE_ON {
                assert_eq!(near.data[i], EDGE_ON, "stray edge at {i}");
            }
        }
        let strict = CannyParams {
            low_threshold: 0.99,
            high_threshold: 0.99,
            ..CannyParams::default()
        };
        assert!(canny(&mask, 32, 32, &strict).unwrap().count() <= e.count());
    }

    #[test]
    fn small_images_rejected() {
        assert!(matches!(
            canny(&[0.0; 36], 6, 6, &CannyParams::default()),
            Err(Error::InputSize(_))
        ));
        let bad = CannyParams {
            low_threshold: 0.5,
            high_threshold: 0.2,
            ..CannyParams::default()
        };
        assert!(canny(&[0.0; 400], 20, 20, &bad).is_err());
    }

    #[test]
    fn two_region_split_union_equals_either_mask() {
        let labels: Vec<u8> = (0..16 * 24).map(|i| u8::from(i % 24 >= 12)).collect();
        let p = CannyParams::default();
        let stack = match extract_edge_gt(&labels, 16, 24, 2, &p, EdgeMode::PerClassStack).unwrap() {
            EdgeGroundTruth::PerClass(maps) => maps,
            _ => unreachable!(),
        };
        let union = edge_union(&labels, 16, 24, 2, &p).unwrap();
        assert_eq!(stack[0], union);
        assert_eq!(stack[1], union);
        let near = boundary_oracle(&labels, 16, 24).unwrap().dilate(1);
        assert!(union.data.iter().zip(&near.data).all(|(&u, &n)| u == 0 || n == EDGE_ON));
        assert_eq!(extract_edge_gt(&[1; 400], 20, 20, 3, &p, EdgeMode::Union).unwrap().merged().count(), 0);
    }

    fn double_loop_oracle(labels: &[u8], h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for (i, o) in out.iter_mut().enumerate() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 && labels[(nr * w as i64 + nc) as usize] != labels[i] {
                    *o = true;
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn oracle_matches_double_loop(labels in proptest::collection::vec(0u8..3, 256)) {
            let e = boundary_oracle(&labels, 16, 16).unwrap();
            let expect = double_loop_oracle(&labels, 16, 16);
            for i in 0..256 {
                prop_assert_eq!(e.data[i] == EDGE_ON, expect[i]);
            }
        }

        #[test]
        fn canny_ignores_constant_offset(
            r0 in 0usize..20, c0 in 0usize..20, hr in 3usize..12, hc in 3usize..12,
            level in 0.2f64..0.8, offset in -0.4f64..0.4,
        ) {
            let (h, w) = (24, 28);
            let img: Vec<f64> = (0..h * w)
                .map(|i| if (r0..r0 + hr).contains(&(i / w)) && (c0..c0 + hc).contains(&(i % w)) { level } else { 0.1 })
                .collect();
            let shifted: Vec<f64> = img.iter().map(|v| v + offset).collect();
            let p = CannyParams::default();
            prop_assert_eq!(canny(&img, h, w, &p).unwrap(), canny(&shifted, h, w, &p).unwrap());
        }

        #[test]
        fn union_is_relabel_invariant(
            rects in proptest::collection::vec((0usize..16, 0usize..16, 2usize..10, 2usize..10, 1u8..4), 1..5),
            perm_seed in 0usize..24,
        ) {
            let (h, w) = (20, 20);
            let mut labels = vec![0u8; h * w];
            for &(r0, c0, hr, hc, class) in &rects {
                for r in r0..(r0 + hr).min(h) {
                    for c in c0..(c0 + hc).min(w) {
                        labels[r * w + c] = class;
                    }
                }
            }
            let mut perm: Vec<u8> = vec![0, 1, 2, 3];
            let mut k = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, k % (i + 1));
                k /= i + 1;
            }
            let relabelled: Vec<u8> = labels.iter().map(|&l| perm[l as usize]).collect();
            let p = CannyParams::default();
            let a = edge_union(&labels, h, w, 4, &p).unwrap();
            let b = edge_union(&relabelled, h, w, 4, &p).unwrap();
            prop_assert!(a.data.iter().all(|&v| v == 0 || v == EDGE_ON));
            prop_assert_eq!(a, b);
        }
    }
}

