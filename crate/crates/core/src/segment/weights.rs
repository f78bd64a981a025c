//! Border-emphasis weight maps: class balancing plus a term that grows
//! between nearby foreground structures.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::MaskImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMapParams {
    pub w0: f64,
    /// Pixels.
    pub sigma: f64,
    /// Weight of background (index 0) and vessel (index 1) pixels.
    pub class_weights: [f64; 2],
}

impl Default for WeightMapParams {
    fn default() -> Self {
        WeightMapParams {
            w0: 10.0,
            sigma: 5.0,
            class_weights: [1.0, 1.0],
        }
    }
}

impl WeightMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidParam(format!(
                "weight map needs w0 >= 0 and sigma > 0, got w0={} sigma={}",
                self.w0, self.sigma
            )));
        }
        if self.class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParam(format!(
                "class weights must be positive, got {:?}",
                self.class_weights
            )));
        }
        Ok(())
    }
}

/// Inverse class-frequency weights over a set of masks, scaled so the
/// pixel-average weight is 1. A class absent from every mask gets weight 1.
pub fn inverse_frequency_weights<'a>(masks: impl IntoIterator<Item = &'a MaskImage>) -> [f64; 2] {
    let mut counts = [0u64; 2];
    for m in masks {
        for &l in m.labels() {
            counts[l as usize] += 1;
        }
    }
    let total = (counts[0] + counts[1]) as f64;
    if counts.contains(&0) {
        return [1.0, 1.0];
    }
    counts.map(|c| total / (2.0 * c as f64))
}

/// Per-pixel loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl WeightMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() || width == 0 || height == 0 {
            return Err(Error::Dimensions(format!(
                "{width}x{height} weight map with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("weight map values must be finite and >= 0".into()));
        }
        Ok(WeightMap {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        WeightMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// 4-connected foreground components; returns per-pixel component ids
/// (`usize::MAX` for background) and the component count.
pub fn label_components(mask: &MaskImage) -> (Vec<usize>, usize) {
    let (w, h) = mask.dims();
    let labels = mask.labels();
    let mut comp = vec![usize::MAX; w * h];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] == 0 || comp[start] != usize::MAX {
            continue;
        }
        comp[start] = count;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if labels[q] == 1 && comp[q] == usize::MAX {
                    comp[q] = count;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Stand-in for "no target on this line" in the squared transform.
const FAR: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest `true` pixel.
pub fn distance_transform(target: &[bool], w: usize, h: usize) -> Vec<f64> {
    let n = w.max(h);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut grid: Vec<f64> = target
        .iter()
        .map(|&t| if t { 0.0 } else { FAR })
        .collect();
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid.iter_mut().for_each(|d| {
        *d = if *d >= FAR / 2.0 { f64::INFINITY } else { d.sqrt() }
    });
    grid
}

/// `w(x) = w_c(x) + w0 exp(-(d1 + d2)^2 / (2 sigma^2))`, with `d1`, `d2` the
/// distances to the nearest and second-nearest foreground components (zero
/// inside a component). With fewer than two components the border term
/// vanishes.
pub fn weight_map(truth: &MaskImage, params: &WeightMapParams) -> Result<WeightMap> {
    params.validate()?;
    let (w, h) = truth.dims();
    let mut values: Vec<f64> = truth
        .labels()
        .iter()
        .map(|&l| params.class_weights[l as usize])
        .collect();
    let (comp, count) = label_components(truth);
    if count < 2 || params.w0 == 0.0 {
        return WeightMap::new(w, h, values);
    }
    let mut d1 = vec![f64::INFINITY; w * h];
    let mut d2 = vec![f64::INFINITY; w * h];
    let mut target = vec![false; w * h];
    for c in 0..count {
        target.iter_mut().zip(&comp).for_each(|(t, &k)| *t = k == c);
        let d = distance_transform(&target, w, h);
        for p in 0..w * h {
            if d[p] < d1[p] {
                d2[p] = d1[p];
                d1[p] = d[p];
            } else if d[p] < d2[p] {
                d2[p] = d[p];
            }
        }
    }
    let denom = 2.0 * params.sigma * params.sigma;
    for p in 0..w * h {
        let s = d1[p] + d2[p];
        values[p] += params.w0 * (-(s * s) / denom).exp();
    }
    WeightMap::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_distance(target: &[bool], w: usize, h: usize) -> Vec<f64> {
        (0..w * h)
            .map(|p| {
                let (x, y) = ((p % w) as f64, (p / w) as f64);
                (0..w * h)
                    .filter(|&q| target[q])
                    .map(|q| {
                        let (qx, qy) = ((q % w) as f64, (q / w) as f64);
                        ((x - qx).powi(2) + (y - qy).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let (w, h) = (9, 7);
        let target: Vec<bool> = (0..w * h).map(|i| (i * 37 + 11) % 13 == 0).collect();
        let fast = distance_transform(&target, w, h);
        let slow = brute_distance(&target, w, h);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(distance_transform(&[false; 4], 2, 2).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn components_use_4_connectivity() {
        // diagonal neighbors are separate components
        let m = MaskImage::new(3, 3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(label_components(&m).1, 3);
        let m = MaskImage::new(3, 1, vec![1, 1, 1]).unwrap();
        assert_eq!(label_components(&m).1, 1);
    }

    #[test]
    fn single_component_reduces_to_class_weights() {
        let m = MaskImage::new(5, 5, (0..25).map(|i| u8::from(i / 5 == 2)).collect()).unwrap();
        let p = WeightMapParams {
            class_weights: [0.5, 2.0],
            ..Default::default()
        };
        let wm = weight_map(&m, &p).unwrap();
        for (v, &l) in wm.values().iter().zip(m.labels()) {
            assert_eq!(*v, p.class_weights[l as usize]);
        }
    }

    #[test]
    fn border_term_values() {
        // Two single-pixel components at x = 0 and x = 3 on a 4x1 strip.
        let m = MaskImage::new(4, 1, vec![1, 0, 0, 1]).unwrap();
        let wm = weight_map(&m, &WeightMapParams::default()).unwrap();
        // x = 1: d1 = 1, d2 = 2 -> 1 + 10 exp(-9/50)
        let expected = 1.0 + 10.0 * (-9.0f64 / 50.0).exp();
        assert!((wm.values()[1] - expected).abs() < 1e-12);
        assert!((expected - 9.352702114112720).abs() < 1e-12);
        // x = 0: inside a component (d1 = 0), d2 = 3
        assert!((wm.values()[0] - (1.0 + 10.0 * (-9.0f64 / 50.0).exp())).abs() < 1e-12);

        // touching components: a pixel between them at distance 0 from both is
        // impossible with 4-connectivity, so check d1 = d2 = 0 through the formula
        let p = WeightMapParams::default();
        assert_eq!(p.class_weights[1] + p.w0 * (-(0.0f64).powi(2) / 50.0).exp(), 11.0);
    }

    #[test]
    fn inverse_frequency_normalizes_to_pixel_mean_one() {
        let m = MaskImage::new(4, 1, vec![1, 0, 0, 0]).unwrap();
        let cw = inverse_frequency_weights([&m]);
        let mean: f64 = m.labels().iter().map(|&l| cw[l as usize]).sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-15);
        assert!(cw[1] > cw[0]);
        let empty = MaskImage::new(2, 1, vec![0, 0]).unwrap();
        assert_eq!(inverse_frequency_weights([&empty]), [1.0, 1.0]);
    }
}
