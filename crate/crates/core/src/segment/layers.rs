//! Same-padding convolution and the elementwise/resampling pieces of the
//! segmentation network, each with its manual backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Map;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Valid output index range for a tap offset `d` on an axis of length `n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

impl Conv2d {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            weight: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(in_c: usize, out_c: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_c, out_c, k);
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        conv.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        conv
    }

    #[cfg(test)]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + i) * self.k + ky) * self.k + kx
    }

    fn kk(&self) -> usize {
        self.in_c * self.k * self.k
    }

    /// Unfolds same-padded `k x k` neighborhoods into a `(in_c k k) x (h w)`
    /// row-major matrix.
    fn im2col(&self, x: &Map) -> Vec<f64> {
        let (h, w) = (x.h, x.w);
        let pad = (self.k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0; self.kk() * hw];
        for i in 0..self.in_c {
            let ip = x.plane(i);
            for ky in 0..self.k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..self.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let row = &mut cols[((i * self.k + ky) * self.k + kx) * hw..][..hw];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        row[y * w + x0..y * w + x1]
                            .copy_from_slice(&ip[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Map {
        let pad = (self.k / 2) as isize;
        let hw = h * w;
        let mut out = Map::zeros(self.in_c, h, w);
        for i in 0..self.in_c {
            let op = out.plane_mut(i);
            for ky in 0..self.k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..self.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let row = &cols[((i * self.k + ky) * self.k + kx) * hw..][..hw];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut op[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Map) -> Map {
        debug_assert_eq!(x.c, self.in_c);
        let hw = x.h * x.w;
        let cols;
        let b: &[f64] = if self.k == 1 {
            &x.data
        } else {
            cols = self.im2col(x);
            &cols
        };
        let mut out = Map::zeros(self.out_c, x.h, x.w);
        for o in 0..self.out_c {
            out.plane_mut(o).fill(self.bias[o]);
        }
        let kk = self.kk();
        // SAFETY: all slices are sized (out_c x kk), (kk x hw) and (out_c x hw)
        // with the row-major strides passed.
        unsafe {
            matrixmultiply::dgemm(
                self.out_c,
                kk,
                hw,
                1.0,
                self.weight.as_ptr(),
                kk as isize,
                1,
                b.as_ptr(),
                hw as isize,
                1,
                1.0,
                out.data.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        out
    }

    /// Accumulates parameter gradients into `gw`/`gb` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        x: &Map,
        gout: &Map,
        gw: &mut [f64],
        gb: &mut [f64],
        want_input: bool,
    ) -> Option<Map> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.kk();
        for o in 0..self.out_c {
            gb[o] += gout.plane(o).iter().sum::<f64>();
        }
        let cols;
        let b: &[f64] = if self.k == 1 {
            &x.data
        } else {
            cols = self.im2col(x);
            &cols
        };
        // gw (out_c x kk) += gout (out_c x hw) * cols^T (hw x kk)
        // SAFETY: dimensions and strides match the buffers as above.
        unsafe {
            matrixmultiply::dgemm(
                self.out_c,
                hw,
                kk,
                1.0,
                gout.data.as_ptr(),
                hw as isize,
                1,
                b.as_ptr(),
                1,
                hw as isize,
                1.0,
                gw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        if !want_input {
            return None;
        }
        // gcols (kk x hw) = W^T (kk x out_c) * gout (out_c x hw)
        let mut gcols = vec![0.0; kk * hw];
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                kk,
                self.out_c,
                hw,
                1.0,
                self.weight.as_ptr(),
                1,
                kk as isize,
                gout.data.as_ptr(),
                hw as isize,
                1,
                0.0,
                gcols.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        if self.k == 1 {
            return Some(Map {
                c: self.in_c,
                h,
                w,
                data: gcols,
            });
        }
        Some(self.col2im(&gcols, h, w))
    }
}

pub(crate) fn relu_inplace(m: &mut Map) {
    m.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_backward(out: &Map, grad: &mut Map) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling; returns the pooled map and, per output cell,
/// the flat input index of the (first) maximum.
pub(crate) fn maxpool2(x: &Map) -> (Map, Vec<usize>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Map::zeros(x.c, oh, ow);
    let mut arg = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        let base = c * x.h * x.w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + (2 * y) * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                out.data[(c * oh + y) * ow + xx] = x.data[best];
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward(gout: &Map, arg: &[usize], c: usize, h: usize, w: usize) -> Map {
    let mut gin = Map::zeros(c, h, w);
    for (g, &idx) in gout.data.iter().zip(arg) {
        gin.data[idx] += g;
    }
    gin
}

/// 2x nearest-neighbor upsampling.
pub(crate) fn upsample2(x: &Map) -> Map {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Map::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(gout: &Map) -> Map {
    let (h, w) = (gout.h / 2, gout.w / 2);
    let mut gin = Map::zeros(gout.c, h, w);
    for c in 0..gout.c {
        let src = gout.plane(c);
        let dst = gin.plane_mut(c);
        for y in 0..gout.h {
            for x in 0..gout.w {
                dst[(y / 2) * w + x / 2] += src[y * gout.w + x];
            }
        }
    }
    gin
}

pub(crate) fn concat(a: &Map, b: &Map) -> Map {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Map {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub(crate) fn split(g: &Map, first_c: usize) -> (Map, Map) {
    let at = first_c * g.h * g.w;
    (
        Map {
            c: first_c,
            h: g.h,
            w: g.w,
            data: g.data[..at].to_vec(),
        },
        Map {
            c: g.c - first_c,
            h: g.h,
            w: g.w,
            data: g.data[at..].to_vec(),
        },
    )
}

/// Softmax over the channel axis at every pixel.
pub(crate) fn softmax_channels(logits: &Map) -> Map {
    let hw = logits.h * logits.w;
    let mut out = Map::zeros(logits.c, logits.h, logits.w);
    for p in 0..hw {
        let max = (0..logits.c)
            .map(|c| logits.data[c * hw + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..logits.c {
            let e = (logits.data[c * hw + p] - max).exp();
            out.data[c * hw + p] = e;
            sum += e;
        }
        for c in 0..logits.c {
            out.data[c * hw + p] /= sum;
        }
    }
    out
}
