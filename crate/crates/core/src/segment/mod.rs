//! Vessel-segmentation stream: the reduced encoder-decoder network, its
//! border-weighted cross-entropy, manual backpropagation and SGD training.

mod layers;
mod net;
mod tensor;
mod weights;

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{load_image, to_gray, GrayImage};
use crate::error::{Error, Result};
use crate::rng;

pub use net::{Gradients, SegNet, SegNetConfig, NUM_CLASSES, PROB_FLOOR, VESSEL};
pub use tensor::Tensor4;
pub use weights::{
    distance_transform, inverse_frequency_weights, label_components, weight_map, WeightMap,
    WeightMapParams,
};

/// Binary per-pixel labels: 1 = vessel, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != labels.len() {
            return Err(Error::Dimensions(format!(
                "{width}x{height} mask with {} labels",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("mask labels must be 0 or 1".into()));
        }
        Ok(MaskImage {
            width,
            height,
            labels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn foreground(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Thresholds a gray image at 0.5 (mask files store 0 / 255).
    pub fn from_gray(img: &GrayImage) -> Self {
        MaskImage {
            width: img.width(),
            height: img.height(),
            labels: img.pixels().iter().map(|&v| u8::from(v >= 0.5)).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_clamped(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l as f64).collect(),
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_png(path)
    }
}

/// Weighted cross-entropy total and its per-pixel terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_pixel: Vec<f64>,
}

/// `E = -sum_x w(x) ln(max(p_true(x), 1e-12))` over every pixel of every
/// batch item. The sign makes a perfect prediction the minimum.
pub fn weighted_xent(probs: &Tensor4, truth: &[MaskImage], weights: &[WeightMap]) -> Result<LossReport> {
    let [n, c, h, w] = probs.dims();
    if c != NUM_CLASSES || truth.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs {} masks and {} weight maps",
            probs.dims(),
            truth.len(),
            weights.len()
        )));
    }
    let hw = h * w;
    let mut per_pixel = Vec::with_capacity(n * hw);
    for (i, (m, wm)) in truth.iter().zip(weights).enumerate() {
        if m.dims() != (w, h) || wm.dims() != (w, h) {
            return Err(Error::Shape(format!(
                "item {i}: mask {:?} / weights {:?} vs probabilities {w}x{h}",
                m.dims(),
                wm.dims()
            )));
        }
        for p in 0..hw {
            let t = m.labels[p] as usize;
            let pt = probs.plane(i, t)[p];
            per_pixel.push(-wm.values()[p] * pt.max(PROB_FLOOR).ln());
        }
    }
    Ok(LossReport {
        total: per_pixel.iter().sum(),
        per_pixel,
    })
}

/// One (image, ground truth) training pair.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub image: GrayImage,
    pub mask: MaskImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegTrainConfig {
    pub epochs: usize,
    /// Learning rate for the first half of the epochs.
    pub lr: f64,
    /// Learning rate for the second half.
    pub lr_late: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub w0: f64,
    pub sigma: f64,
    /// `None` derives inverse-frequency weights from the training masks.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 50,
            lr: 1e-2,
            lr_late: 1e-3,
            batch_size: 1,
            seed: 0,
            w0: 10.0,
            sigma: 5.0,
            class_weights: None,
        }
    }
}

impl SegTrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs.div_ceil(2) {
            self.lr
        } else {
            self.lr_late
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-pixel weighted loss of each epoch (averaged over batches).
    pub epoch_loss: Vec<f64>,
    pub class_weights: [f64; 2],
}

/// Minibatch SGD on the per-pixel mean of the weighted cross-entropy.
///
/// The sample order of every epoch is a seeded shuffle; per-sample
/// gradients are summed in batch order, so results do not depend on the
/// number of worker threads.
pub fn train(mut net: SegNet, data: &[SegSample], cfg: &SegTrainConfig) -> Result<(SegNet, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::Data("segmentation training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be >= 1".into()));
    }
    let m = net.config().multiple();
    for (i, s) in data.iter().enumerate() {
        let (w, h) = s.image.dims();
        if s.mask.dims() != (w, h) {
            return Err(Error::Shape(format!("sample {i}: image and mask dims differ")));
        }
        if w % m != 0 || h % m != 0 {
            return Err(Error::Shape(format!(
                "sample {i}: {w}x{h} is not a multiple of {m}"
            )));
        }
    }
    let class_weights = cfg
        .class_weights
        .unwrap_or_else(|| inverse_frequency_weights(data.iter().map(|s| &s.mask)));
    let wparams = WeightMapParams {
        w0: cfg.w0,
        sigma: cfg.sigma,
        class_weights,
    };
    let maps: Vec<WeightMap> = data
        .par_iter()
        .map(|s| weight_map(&s.mask, &wparams))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::rng_for(cfg.seed, "segnet/shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = cfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Gradients, usize)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &data[i];
                    let (w, h) = s.image.dims();
                    let (loss, g) =
                        net.loss_and_gradients(s.image.pixels(), h, w, &s.mask, &maps[i]);
                    (loss, g, w * h)
                })
                .collect();
            let pixels: usize = results.iter().map(|r| r.2).sum();
            let loss: f64 = results.iter().map(|r| r.0).sum::<f64>() / pixels as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "segmentation loss {loss} at epoch {epoch}, batch {batches}"
                )));
            }
            let grads = net::sum_gradients(
                net.zero_gradients(),
                results.into_iter().map(|r| r.1).collect(),
            );
            let scale = lr / pixels as f64;
            for (p, g) in net.params_mut().into_iter().zip(&grads) {
                p.iter_mut().zip(g).for_each(|(v, d)| *v -= scale * d);
            }
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("segnet epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    net.epochs += cfg.epochs;
    Ok((
        net,
        TrainHistory {
            epoch_loss: history,
            class_weights,
        },
    ))
}

/// Reads `dir/images/*` and the same-named files under `dir/masks/`,
/// sorted by file name.
pub fn load_sample_dir(dir: &Path) -> Result<Vec<(String, SegSample)>> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    let mut names: Vec<String> = std::fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("{} holds no images", images.display())));
    }
    names
        .par_iter()
        .map(|n| {
            let image = to_gray(&load_image(&images.join(n))?);
            let mask = MaskImage::from_gray(&to_gray(&load_image(&masks.join(n))?));
            if image.dims() != mask.dims() {
                return Err(Error::Dimensions(format!("{n}: image and mask dims differ")));
            }
            Ok((n.clone(), SegSample { image, mask }))
        })
        .collect()
}

/// Reflect-pads `img` (mirror without repeating the edge) up to the next
/// multiple of `m` on each axis.
fn reflect_pad(img: &GrayImage, m: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = img.dims();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let r = i % period;
        if r < n {
            r
        } else {
            period - r
        }
    };
    let mut data = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = reflect(y, h);
        for x in 0..pw {
            data.push(img.get(reflect(x, w), sy));
        }
    }
    (data, pw, ph)
}

/// Vessel probability map, padded reflectively and cropped back when the
/// image dims are not multiples of `2^depth`.
pub fn vessel_probability(net: &SegNet, img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    let (data, pw, ph) = reflect_pad(img, net.config().multiple());
    let probs = net.vessel_probability(&data, ph, pw);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&probs[y * pw..y * pw + w]);
    }
    GrayImage::from_clamped(w, h, out)
}

/// Per-pixel argmax; an exact tie (p = 0.5) is background.
pub fn mask_from_probability(prob: &GrayImage) -> MaskImage {
    MaskImage {
        width: prob.width(),
        height: prob.height(),
        labels: prob.pixels().iter().map(|&p| u8::from(p > 0.5)).collect(),
    }
}

pub fn predict_mask(net: &SegNet, img: &GrayImage) -> (MaskImage, GrayImage) {
    let prob = vessel_probability(net, img);
    (mask_from_probability(&prob), prob)
}
