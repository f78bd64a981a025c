use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat, maxpool2, maxpool2_backward, relu_backward, relu_inplace, softmax_channels, split,
    upsample2, upsample2_backward, Conv2d,
};
use super::tensor::{Map, Tensor4};
use super::{MaskImage, WeightMap};
use crate::container::{Container, DType};
use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 2;
pub const VESSEL: usize = 1;
const SEGNET_FORMAT: &str = "twostream.segnet";
const SEGNET_VERSION: u32 = 1;
/// Probability floor inside the logarithm of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Shape of the encoder-decoder network.
///
/// Encoder level `i` has `base_channels * 2^i` channels; a bottleneck with
/// twice the deepest encoder width sits below. Input is one channel, output
/// two classes (background, vessel).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            depth: 2,
            base_channels: 8,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidParam(format!(
                "segmentation net needs depth >= 1 and base_channels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Width of the skip path after reduction: half the encoder width.
    pub fn skip_channels(&self, level: usize) -> usize {
        (self.channels(level) / 2).max(1)
    }

    /// Spatial dims must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    fn layer_count(&self) -> usize {
        6 * self.depth + 3
    }

    fn enc(&self, level: usize, j: usize) -> usize {
        2 * level + j
    }

    fn bottleneck(&self, j: usize) -> usize {
        2 * self.depth + j
    }

    fn dec(&self, level: usize, j: usize) -> usize {
        2 * self.depth + 2 + 4 * (self.depth - 1 - level) + j
    }

    fn head(&self) -> usize {
        6 * self.depth + 2
    }

    /// `(in, out, kernel)` of every convolution, in parameter order.
    fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![(0, 0, 0); self.layer_count()];
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            shapes[self.enc(l, 0)] = (cin, self.channels(l), 3);
            shapes[self.enc(l, 1)] = (self.channels(l), self.channels(l), 3);
        }
        let deep = self.channels(self.depth);
        shapes[self.bottleneck(0)] = (self.channels(self.depth - 1), deep, 3);
        shapes[self.bottleneck(1)] = (deep, deep, 3);
        for l in 0..self.depth {
            let (c, s) = (self.channels(l), self.skip_channels(l));
            shapes[self.dec(l, 0)] = (self.channels(l + 1), c, 3);
            shapes[self.dec(l, 1)] = (c, s, 1);
            shapes[self.dec(l, 2)] = (c + s, c, 3);
            shapes[self.dec(l, 3)] = (c, c, 3);
        }
        shapes[self.head()] = (self.channels(0), NUM_CLASSES, 1);
        shapes
    }
}

/// Parameter gradients, one vector per entry of [`SegNet::params`].
pub type Gradients = Vec<Vec<f64>>;

/// Reduced U-shaped encoder-decoder network.
///
/// Each level runs two 3x3 same-padded convolutions with ReLU; the encoder
/// downsamples with 2x2 stride-2 max pooling. The decoder upsamples 2x by
/// nearest neighbor followed by a 3x3 convolution, concatenates the skip
/// features after a 1x1 projection to half their width, then applies two
/// more 3x3 convolutions. A 1x1 head produces two logits per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    config: SegNetConfig,
    layers: Vec<Conv2d>,
    /// Seed used for initialization, kept for the model header.
    pub seed: u64,
    /// Epochs trained so far.
    pub epochs: usize,
}

struct EncCache {
    input: Map,
    a: Map,
    b: Map,
    pooled_dims: (usize, usize),
    arg: Vec<usize>,
}

struct DecCache {
    up: Map,
    u: Map,
    cat: Map,
    a: Map,
    b: Map,
}

struct Cache {
    enc: Vec<EncCache>,
    bott_in: Map,
    bott_a: Map,
    bott_b: Map,
    /// Deepest level first.
    dec: Vec<DecCache>,
    probs: Map,
}

impl SegNet {
    /// He-initialized network; `seed` fully determines the parameters.
    pub fn new(config: SegNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_for(seed, "segnet/init");
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| Conv2d::init(i, o, k, &mut rng))
            .collect();
        Ok(SegNet {
            config,
            layers,
            seed,
            epochs: 0,
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: SegNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| Conv2d::zeros(i, o, k))
            .collect();
        Ok(SegNet {
            config,
            layers,
            seed: 0,
            epochs: 0,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    /// Weights then bias of each convolution, in layer order.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Rounds every parameter to the nearest f32, matching what the model
    /// file stores.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = dims;
        if c != 1 {
            return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
        }
        let m = self.config.multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not a nonzero multiple of {m}"
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, x: Map) -> Cache {
        let cfg = &self.config;
        let conv_relu = |idx: usize, input: &Map| {
            let mut out = self.layers[idx].forward(input);
            relu_inplace(&mut out);
            out
        };

        let mut enc = Vec::with_capacity(cfg.depth);
        let mut current = x;
        for l in 0..cfg.depth {
            let a = conv_relu(cfg.enc(l, 0), &current);
            let b = conv_relu(cfg.enc(l, 1), &a);
            let (pooled, arg) = maxpool2(&b);
            let input = std::mem::replace(&mut current, pooled);
            enc.push(EncCache {
                input,
                a,
                b,
                pooled_dims: (current.h, current.w),
                arg,
            });
        }
        let bott_in = current;
        let bott_a = conv_relu(cfg.bottleneck(0), &bott_in);
        let bott_b = conv_relu(cfg.bottleneck(1), &bott_a);

        let mut dec = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let below = dec.last().map_or(&bott_b, |d: &DecCache| &d.b);
            let up = upsample2(below);
            let u = conv_relu(cfg.dec(l, 0), &up);
            let skip_reduced = self.layers[cfg.dec(l, 1)].forward(&enc[l].b);
            let cat = concat(&u, &skip_reduced);
            let a = conv_relu(cfg.dec(l, 2), &cat);
            let b = conv_relu(cfg.dec(l, 3), &a);
            dec.push(DecCache {
                up,
                u,
                cat,
                a,
                b,
            });
        }
        let logits = self.layers[cfg.head()].forward(&dec.last().unwrap().b);
        let probs = softmax_channels(&logits);
        Cache {
            enc,
            bott_in,
            bott_a,
            bott_b,
            dec,
            probs,
        }
    }

    /// Backpropagates `g_logits` through the cached forward pass.
    fn backward_sample(&self, cache: &Cache, g_logits: Map, grads: &mut Gradients) {
        let cfg = &self.config;
        let mut conv_back = |idx: usize, input: &Map, gout: &Map, want: bool| -> Option<Map> {
            let (gw, rest) = grads[2 * idx..].split_at_mut(1);
            self.layers[idx].backward(input, gout, &mut gw[0], &mut rest[0], want)
        };

        let top = cache.dec.last().unwrap();
        let mut g = conv_back(cfg.head(), &top.b, &g_logits, true).unwrap();

        let mut g_skips: Vec<Option<Map>> = (0..cfg.depth).map(|_| None).collect();
        for l in 0..cfg.depth {
            let d = &cache.dec[cfg.depth - 1 - l];
            relu_backward(&d.b, &mut g);
            let mut ga = conv_back(cfg.dec(l, 3), &d.a, &g, true).unwrap();
            relu_backward(&d.a, &mut ga);
            let gcat = conv_back(cfg.dec(l, 2), &d.cat, &ga, true).unwrap();
            let (mut gu, gr) = split(&gcat, d.u.c);
            g_skips[l] = conv_back(cfg.dec(l, 1), &cache.enc[l].b, &gr, true);
            relu_backward(&d.u, &mut gu);
            let gup = conv_back(cfg.dec(l, 0), &d.up, &gu, true).unwrap();
            g = upsample2_backward(&gup);
        }

        relu_backward(&cache.bott_b, &mut g);
        let mut ga = conv_back(cfg.bottleneck(1), &cache.bott_a, &g, true).unwrap();
        relu_backward(&cache.bott_a, &mut ga);
        g = conv_back(cfg.bottleneck(0), &cache.bott_in, &ga, true).unwrap();

        for l in (0..cfg.depth).rev() {
            let e = &cache.enc[l];
            debug_assert_eq!((g.h, g.w), e.pooled_dims);
            let mut gb = maxpool2_backward(&g, &e.arg, e.b.c, e.b.h, e.b.w);
            if let Some(gs) = g_skips[l].take() {
                gb.data.iter_mut().zip(&gs.data).for_each(|(a, b)| *a += b);
            }
            relu_backward(&e.b, &mut gb);
            let mut ga = conv_back(cfg.enc(l, 1), &e.a, &gb, true).unwrap();
            relu_backward(&e.a, &mut ga);
            match conv_back(cfg.enc(l, 0), &e.input, &ga, l > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }

    /// Per-pixel class probabilities `(batch, 2, h, w)`.
    pub fn forward(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch.dims())?;
        let [n, _, h, w] = batch.dims();
        let samples: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = Map {
                    c: 1,
                    h,
                    w,
                    data: batch.sample(i).to_vec(),
                };
                self.forward_sample(x).probs.data
            })
            .collect();
        Ok(Tensor4::from_samples(NUM_CLASSES, h, w, samples))
    }

    /// Loss and exact parameter gradients of the weighted cross-entropy for
    /// one sample.
    pub(crate) fn loss_and_gradients(
        &self,
        image: &[f64],
        h: usize,
        w: usize,
        truth: &MaskImage,
        weights: &WeightMap,
    ) -> (f64, Gradients) {
        let cache = self.forward_sample(Map {
            c: 1,
            h,
            w,
            data: image.to_vec(),
        });
        let hw = h * w;
        let probs = &cache.probs;
        let mut g_logits = Map::zeros(NUM_CLASSES, h, w);
        let mut loss = 0.0;
        for p in 0..hw {
            let t = truth.labels()[p] as usize;
            let wt = weights.values()[p];
            let pt = probs.data[t * hw + p];
            loss -= wt * pt.max(PROB_FLOOR).ln();
            if pt >= PROB_FLOOR {
                for c in 0..NUM_CLASSES {
                    let onehot = if c == t { 1.0 } else { 0.0 };
                    g_logits.data[c * hw + p] = wt * (probs.data[c * hw + p] - onehot);
                }
            }
        }
        let mut grads = self.zero_gradients();
        self.backward_sample(&cache, g_logits, &mut grads);
        (loss, grads)
    }

    /// Gradients of the summed weighted cross-entropy over the batch.
    ///
    /// Samples are processed in parallel; their gradients are summed in
    /// sample order.
    pub fn backward(
        &self,
        batch: &Tensor4,
        truth: &[MaskImage],
        weights: &[WeightMap],
    ) -> Result<Gradients> {
        self.check_input(batch.dims())?;
        let [n, _, h, w] = batch.dims();
        if truth.len() != n || weights.len() != n {
            return Err(Error::Shape(format!(
                "batch of {n} needs {n} masks and weight maps, got {} and {}",
                truth.len(),
                weights.len()
            )));
        }
        for (m, wm) in truth.iter().zip(weights) {
            if m.dims() != (w, h) || wm.dims() != (w, h) {
                return Err(Error::Shape(format!(
                    "mask/weight dims {:?}/{:?} do not match input {w}x{h}",
                    m.dims(),
                    wm.dims()
                )));
            }
        }
        let per_sample: Vec<Gradients> = (0..n)
            .into_par_iter()
            .map(|i| self.loss_and_gradients(batch.sample(i), h, w, &truth[i], &weights[i]).1)
            .collect();
        Ok(sum_gradients(self.zero_gradients(), per_sample))
    }

    /// Vessel probability for every pixel of a `h x w` input whose dims are
    /// multiples of [`SegNetConfig::multiple`].
    pub(crate) fn vessel_probability(&self, image: &[f64], h: usize, w: usize) -> Vec<f64> {
        let probs = self
            .forward_sample(Map {
                c: 1,
                h,
                w,
                data: image.to_vec(),
            })
            .probs;
        probs.plane(VESSEL).to_vec()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(SEGNET_FORMAT, SEGNET_VERSION);
        c.set("config", &self.config)?;
        c.set("seed", &self.seed)?;
        c.set("epochs", &self.epochs)?;
        c.set("param_count", &self.param_count())?;
        let flat: Vec<f64> = self.params().concat();
        c.push_blob("params", DType::F32, flat);
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        c.expect(SEGNET_FORMAT, SEGNET_VERSION, path)?;
        let config: SegNetConfig = c.get("config", path)?;
        config
            .validate()
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        let mut net = SegNet::zeros(config)?;
        net.seed = c.get("seed", path)?;
        net.epochs = c.get("epochs", path)?;
        let flat = c.take_blob("params", net.param_count(), path)?;
        let mut offset = 0;
        for p in net.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?, path)
    }
}

pub(crate) fn sum_gradients(mut acc: Gradients, parts: Vec<Gradients>) -> Gradients {
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
        }
    }
    acc
}
