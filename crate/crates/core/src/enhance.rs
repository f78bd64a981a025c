//! Contrast-enhancement stream: global histogram equalization and CLAHE.

use serde::{Deserialize, Serialize};

use crate::dataio::{lerp, GrayImage};
use crate::error::{Error, Result};

pub const BINS: usize = 256;

/// Bin of an intensity: `floor(v * 255 + 0.5)`.
#[inline]
pub fn bin_of(v: f64) -> usize {
    ((v * 255.0 + 0.5).floor() as usize).min(BINS - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub counts: [u64; BINS],
    pub total: u64,
}

impl Histogram {
    fn from_values<'a>(values: impl Iterator<Item = &'a f64>) -> Self {
        let mut counts = [0u64; BINS];
        let mut total = 0;
        for &v in values {
            counts[bin_of(v)] += 1;
            total += 1;
        }
        Histogram { counts, total }
    }

    fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn histogram(img: &GrayImage) -> Histogram {
    Histogram::from_values(img.pixels().iter())
}

/// Equalization lookup table, or `None` when every count sits in one bin.
///
/// `map[b] = round(255 (cdf(b) - cdf_min) / (N - cdf_min)) / 255`, clamped
/// at zero for bins below the first occupied one.
fn equalization_map(counts: &[u64; BINS], total: u64) -> Option<[f64; BINS]> {
    let cdf_min = counts.iter().copied().find(|&c| c > 0)?;
    if total == cdf_min {
        return None;
    }
    let denom = (total - cdf_min) as f64;
    let mut map = [0.0; BINS];
    let mut cdf = 0u64;
    for (b, &c) in counts.iter().enumerate() {
        cdf += c;
        let level = (255.0 * (cdf as f64 - cdf_min as f64) / denom).round();
        map[b] = level.clamp(0.0, 255.0) / 255.0;
    }
    Some(map)
}

fn identity_map() -> [f64; BINS] {
    std::array::from_fn(|b| b as f64 / 255.0)
}

/// Global histogram equalization. Images whose pixels all fall in one bin
/// are returned unchanged.
pub fn hist_equalize(img: &GrayImage) -> GrayImage {
    let hist = histogram(img);
    match equalization_map(&hist.counts, hist.total) {
        None => img.clone(),
        Some(map) => {
            let pixels = img.pixels().iter().map(|&v| map[bin_of(v)]).collect();
            GrayImage::from_clamped(img.width(), img.height(), pixels)
        }
    }
}

/// Contrast-limited adaptive histogram equalization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per-bin cap as a fraction of the tile pixel count.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 0.01,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::InvalidParam("CLAHE needs at least one tile per axis".into()));
        }
        if !(self.clip_limit > 0.0 && self.clip_limit <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "clip limit {} outside (0, 1]",
                self.clip_limit
            )));
        }
        Ok(())
    }
}

/// Which enhancement the contrast stream applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Enhancement {
    HistEq,
    Clahe(ClaheParams),
}

impl Default for Enhancement {
    fn default() -> Self {
        Enhancement::Clahe(ClaheParams::default())
    }
}

impl Enhancement {
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        match self {
            Enhancement::HistEq => Ok(hist_equalize(img)),
            Enhancement::Clahe(p) => clahe(img, p),
        }
    }
}

/// Tile extents along one axis: tile `i` covers `[i n / t, (i + 1) n / t)`.
fn tile_spans(n: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles).map(|i| (i * n / tiles, (i + 1) * n / tiles)).collect()
}

/// For each pixel along an axis: the two neighboring tile indices and the
/// blend weight toward the second, measured between tile centers.
fn axis_weights(spans: &[(usize, usize)], n: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = spans.iter().map(|&(s, e)| (s + e) as f64 / 2.0).collect();
    let last = centers.len() - 1;
    (0..n)
        .map(|p| {
            let u = p as f64 + 0.5;
            if u <= centers[0] {
                (0, 0, 0.0)
            } else if u >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.iter().rposition(|&c| c <= u).unwrap();
                (i, i + 1, (u - centers[i]) / (centers[i + 1] - centers[i]))
            }
        })
        .collect()
}

/// Clips a tile histogram at `clip` and spreads the excess evenly over all
/// bins in a single pass; the integer remainder goes to the last bin.
fn clip_histogram(counts: &mut [u64; BINS], clip: u64) {
    let mut excess = 0u64;
    for c in counts.iter_mut() {
        if *c > clip {
            excess += *c - clip;
            *c = clip;
        }
    }
    let inc = excess / BINS as u64;
    let residual = excess % BINS as u64;
    for c in counts.iter_mut() {
        *c += inc;
    }
    counts[BINS - 1] += residual;
}

/// Per-tile transfer function; tiles with a single occupied bin keep the
/// identity mapping.
fn tile_map(img: &GrayImage, xs: (usize, usize), ys: (usize, usize), clip_limit: f64) -> [f64; BINS] {
    let w = img.width();
    let px = img.pixels();
    let rows = (ys.0..ys.1).flat_map(|y| px[y * w + xs.0..y * w + xs.1].iter());
    let mut hist = Histogram::from_values(rows);
    if hist.occupied_bins() <= 1 {
        return identity_map();
    }
    let clip = ((clip_limit * hist.total as f64).floor() as u64).max(1);
    clip_histogram(&mut hist.counts, clip);
    equalization_map(&hist.counts, hist.total).unwrap_or_else(identity_map)
}

/// CLAHE with bilinear blending of the four surrounding tile mappings.
///
/// Edge and corner pixels (outside the lattice of tile centers) blend only
/// the available neighbors. Images whose pixels all fall in one bin are
/// returned unchanged.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = img.dims();
    if params.tiles_x > w || params.tiles_y > h {
        return Err(Error::Dimensions(format!(
            "{}x{} tile grid does not fit a {w}x{h} image",
            params.tiles_x, params.tiles_y
        )));
    }
    if histogram(img).occupied_bins() <= 1 {
        return Ok(img.clone());
    }
    let xspans = tile_spans(w, params.tiles_x);
    let yspans = tile_spans(h, params.tiles_y);
    let maps: Vec<[f64; BINS]> = yspans
        .iter()
        .flat_map(|&ys| xspans.iter().map(move |&xs| (xs, ys)))
        .map(|(xs, ys)| tile_map(img, xs, ys, params.clip_limit))
        .collect();
    let map_at = |tx: usize, ty: usize| &maps[ty * params.tiles_x + tx];

    let xw = axis_weights(&xspans, w);
    let yw = axis_weights(&yspans, h);
    let mut out = Vec::with_capacity(w * h);
    for (y, &(ty0, ty1, fy)) in yw.iter().enumerate() {
        for (x, &(tx0, tx1, fx)) in xw.iter().enumerate() {
            let b = bin_of(img.get(x, y));
            let top = lerp(map_at(tx0, ty0)[b], map_at(tx1, ty0)[b], fx);
            let bottom = lerp(map_at(tx0, ty1)[b], map_at(tx1, ty1)[b], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Ok(GrayImage::from_clamped(w, h, out))
}
