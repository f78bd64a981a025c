//! Platt's sequential minimal optimization for the C-SVM dual.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelCache, KernelSpec};
use super::BinarySvm;
use crate::error::{Error, Result};
use crate::rng::{rng_for, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Box constraint. Relates to the primal regularizer by `C = 1 / (2 n lambda)`.
    pub c: f64,
    pub tol: f64,
    /// Cap on outer-loop sweeps.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            c: 1.0,
            tol: 1e-3,
            max_passes: 10_000,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.tol > 0.0) {
            return Err(Error::InvalidParam(format!(
                "SVM needs C > 0 and tol > 0, got C={} tol={}",
                self.c, self.tol
            )));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidParam("max_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gap between the worst KKT violators that the final polishing phase drives
/// the solution to, as a fraction of `tol`.
const POLISH_FRACTION: f64 = 1e-3;
/// Smallest alpha change that counts as progress.
const STEP_EPS: f64 = 1e-12;

struct Solver<'a> {
    y: &'a [f64],
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    /// `E_i = f(x_i) - y_i` with `f = sum alpha y K + b`.
    err: Vec<f64>,
    b: f64,
    cache: KernelCache<'a>,
    rng: StreamRng,
}

impl Solver<'_> {
    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn snap(&self, a: f64) -> f64 {
        if a < STEP_EPS * self.c {
            0.0
        } else if a > self.c * (1.0 - STEP_EPS) {
            self.c
        } else {
            a
        }
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> Result<bool> {
        if i1 == i2 {
            return Ok(false);
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.err[i1], self.err[i2]);
        let s = y1 * y2;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), (self.c + a2 - a1).min(self.c))
        } else {
            ((a1 + a2 - self.c).max(0.0), (a1 + a2).min(self.c))
        };
        if hi - lo <= STEP_EPS * self.c {
            return Ok(false);
        }
        let k11 = self.cache.diag(i1)?;
        let k22 = self.cache.diag(i2)?;
        let k12 = self.cache.at(i1, i2)?;
        let eta = k11 + k22 - 2.0 * k12;
        let mut new2 = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective along the constraint line at both ends.
            let f1 = y1 * (e1 + y1) - self.b - a1 * k11 - s * a2 * k12;
            let f2 = y2 * (e2 + y2) - self.b - s * a1 * k12 - a2 * k22;
            let end = |a2n: f64| {
                let a1n = a1 + s * (a2 - a2n);
                a1n * f1 + a2n * f2 + 0.5 * a1n * a1n * k11 + 0.5 * a2n * a2n * k22 + s * a1n * a2n * k12
            };
            let (lobj, hobj) = (end(lo), end(hi));
            if lobj < hobj - STEP_EPS {
                lo
            } else if lobj > hobj + STEP_EPS {
                hi
            } else {
                a2
            }
        };
        new2 = self.snap(new2);
        if (new2 - a2).abs() < STEP_EPS * (new2 + a2 + STEP_EPS) {
            return Ok(false);
        }
        let new1 = self.snap(a1 + s * (a2 - new2));
        let (d1, d2) = (y1 * (new1 - a1), y2 * (new2 - a2));

        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let free = |a: f64| a > 0.0 && a < self.c;
        let new_b = if free(new1) {
            b1
        } else if free(new2) {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_b - self.b;
        self.alpha[i1] = new1;
        self.alpha[i2] = new2;
        self.b = new_b;

        let row1 = self.cache.row(i1)?.to_vec();
        let row2 = self.cache.row(i2)?;
        for (k, e) in self.err.iter_mut().enumerate() {
            *e += d1 * row1[k] + d2 * row2[k] + db;
        }
        Ok(true)
    }

    fn violates(&self, i: usize) -> bool {
        let r = self.err[i] * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    fn examine(&mut self, i2: usize) -> Result<bool> {
        if !self.violates(i2) {
            return Ok(false);
        }
        let n = self.alpha.len();
        let e2 = self.err[i2];
        let free: Vec<usize> = (0..n).filter(|&i| self.is_free(i)).collect();
        if free.len() > 1 {
            let best = free
                .iter()
                .map(|&i| (self.err[i] - e2).abs())
                .fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| (self.err[i] - e2).abs() == best)
                .collect();
            let i1 = ties[self.rng.random_range(0..ties.len())];
            if self.take_step(i1, i2)? {
                return Ok(true);
            }
        }
        if !free.is_empty() {
            let start = self.rng.random_range(0..free.len());
            for off in 0..free.len() {
                if self.take_step(free[(start + off) % free.len()], i2)? {
                    return Ok(true);
                }
            }
        }
        let start = self.rng.random_range(0..n);
        for off in 0..n {
            if self.take_step((start + off) % n, i2)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Bias-free optimality bounds: `g_i = y_i - (f(x_i) - b)` is the bias that
    /// puts point `i` exactly on its margin.
    fn margin_bias(&self, i: usize) -> f64 {
        self.y[i] - (self.err[i] + self.y[i] - self.b)
    }

    /// Returns the maximal violating pair and its gap, in libsvm's
    /// `I_up` / `I_low` form.
    fn worst_pair(&self) -> Option<(usize, usize, f64)> {
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for i in 0..self.alpha.len() {
            let g = self.margin_bias(i);
            let (a, y) = (self.alpha[i], self.y[i]);
            let in_up = (y > 0.0 && a < self.c) || (y < 0.0 && a > 0.0);
            let in_low = (y > 0.0 && a > 0.0) || (y < 0.0 && a < self.c);
            if in_up && up.is_none_or(|(_, v)| g > v) {
                up = Some((i, g));
            }
            if in_low && low.is_none_or(|(_, v)| g < v) {
                low = Some((i, g));
            }
        }
        match (up, low) {
            (Some((i, gi)), Some((j, gj))) => Some((i, j, gi - gj)),
            _ => None,
        }
    }

    fn final_bias(&self) -> f64 {
        let n = self.alpha.len();
        let free: Vec<f64> = (0..n).filter(|&i| self.is_free(i)).map(|i| self.margin_bias(i)).collect();
        if !free.is_empty() {
            return free.iter().sum::<f64>() / free.len() as f64;
        }
        let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let g = self.margin_bias(i);
            let at_zero = self.alpha[i] == 0.0;
            // alpha = 0 needs y f >= 1; alpha = C needs y f <= 1
            if (self.y[i] > 0.0) == at_zero {
                lb = lb.max(g);
            } else {
                ub = ub.min(g);
            }
        }
        match (lb.is_finite(), ub.is_finite()) {
            (true, true) => 0.5 * (lb + ub),
            (true, false) => lb,
            (false, true) => ub,
            (false, false) => 0.0,
        }
    }
}

/// Trains a binary machine on labels in {-1, +1}.
pub fn smo_train(x: &[Vec<f64>], y: &[f64], kernel: &KernelSpec, params: &TrainParams) -> Result<BinarySvm> {
    kernel.validate()?;
    params.validate()?;
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} samples but {} labels", y.len())));
    }
    if n < 2 {
        return Err(Error::Data("SVM training needs at least 2 samples".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("SVM samples must share one dimension".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVM training features".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Data("binary SVM labels must be -1 or +1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Data("binary SVM training data contains a single class".into()));
    }

    let mut s = Solver {
        y,
        c: params.c,
        tol: params.tol,
        alpha: vec![0.0; n],
        err: y.iter().map(|v| -v).collect(),
        b: 0.0,
        cache: KernelCache::new(*kernel, x)?,
        rng: rng_for(params.seed, "smo/select"),
    };

    let mut passes = 0;
    let mut examine_all = true;
    while passes < params.max_passes {
        let mut changed = 0;
        for i in 0..n {
            if examine_all || s.is_free(i) {
                changed += usize::from(s.examine(i)?);
            }
        }
        passes += 1;
        if examine_all {
            if changed == 0 {
                break;
            }
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
    }
    if passes >= params.max_passes {
        log::warn!("SMO stopped at the {}-pass cap", params.max_passes);
    }

    // Maximal-violating-pair polish so that the averaged bias is consistent
    // with every KKT condition.
    let target = params.tol * POLISH_FRACTION;
    let cap = 100 * n * n.max(100);
    for _ in 0..cap {
        match s.worst_pair() {
            Some((i, j, gap)) if gap > target => {
                if !s.take_step(i, j)? {
                    break;
                }
            }
            _ => break,
        }
    }

    let b = s.final_bias();
    let mut support = Vec::new();
    let mut coefs = Vec::new();
    for i in 0..n {
        if s.alpha[i] > 0.0 {
            support.push(x[i].clone());
            coefs.push(s.alpha[i] * y[i]);
        }
    }
    BinarySvm::new(*kernel, support, coefs, b, params.c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_linear_problem() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1.0, 1.0];
        let k = KernelSpec::polynomial(1.0, 1, 0.0);
        let p = TrainParams {
            c: 10.0,
            ..Default::default()
        };
        let m = smo_train(&x, &y, &k, &p).unwrap();
        assert_eq!(m.n_support(), 2);
        for a in m.alphas() {
            assert!((a - 0.5).abs() < 1e-9);
        }
        assert!(m.bias().abs() < 1e-9);
        assert!(m.decision(&[0.0]).unwrap().abs() < 1e-9);
        assert!((m.decision(&[0.7]).unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn xor_has_equal_alphas() {
        let x = vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]];
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let p = TrainParams {
            c: 10.0,
            ..Default::default()
        };
        let m = smo_train(&x, &y, &KernelSpec::rbf(1.0), &p).unwrap();
        // alpha = 1 / (1 + e^-8 - 2 e^-4), fixed by solving the symmetric dual by hand
        let expected = 1.0 / (1.0 + (-8.0f64).exp() - 2.0 * (-4.0f64).exp());
        assert!((expected - 1.0376628178232918).abs() < 1e-12);
        assert_eq!(m.n_support(), 4);
        for a in m.alphas() {
            assert!((a - expected).abs() < 1e-4, "{a}");
        }
        assert!(m.bias().abs() < 1e-6);
    }

    #[test]
    fn rejects_single_class_and_bad_labels() {
        let x = vec![vec![0.0], vec![1.0]];
        let k = KernelSpec::rbf(1.0);
        assert!(smo_train(&x, &[1.0, 1.0], &k, &TrainParams::default()).is_err());
        assert!(smo_train(&x, &[1.0, 0.0], &k, &TrainParams::default()).is_err());
        assert!(smo_train(&x[..1], &[1.0], &k, &TrainParams::default()).is_err());
    }

    #[test]
    fn kkt_and_equality_constraint() {
        let mut rng = rng_for(3, "test/smo");
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| if v[0] * v[0] + v[1] > 0.2 { 1.0 } else { -1.0 })
            .collect();
        let p = TrainParams {
            c: 2.0,
            ..Default::default()
        };
        let m = smo_train(&x, &y, &KernelSpec::rbf(2.0), &p).unwrap();
        assert!(m.dual_coefs().iter().sum::<f64>().abs() < 1e-6);
        m.check_kkt(&x, &y, p.tol).unwrap();
    }
}
