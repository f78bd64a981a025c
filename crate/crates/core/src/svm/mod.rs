//! Kernel support-vector classification: binary SMO machines and the
//! one-vs-one multi-class wrapper whose vote counts feed the fusion step.

mod kernel;
mod smo;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{KernelKind, KernelSpec};
pub use smo::{smo_train, TrainParams};

use crate::container::{Container, DType};
use crate::error::{Error, Result};
use crate::rng::derive_indexed;

const SVM_FORMAT: &str = "twostream.svm";
const SVM_VERSION: u32 = 1;

/// Trained binary machine, `f(x) = sum_i dual_coefs_i K(sv_i, x) + b`.
/// Only support vectors (alpha > 0) are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySvm {
    kernel: KernelSpec,
    support: Vec<Vec<f64>>,
    dual_coefs: Vec<f64>,
    b: f64,
    c: f64,
}

impl BinarySvm {
    pub fn new(kernel: KernelSpec, support: Vec<Vec<f64>>, dual_coefs: Vec<f64>, b: f64, c: f64) -> Result<Self> {
        kernel.validate()?;
        if support.len() != dual_coefs.len() {
            return Err(Error::Shape(format!(
                "{} support vectors but {} coefficients",
                support.len(),
                dual_coefs.len()
            )));
        }
        if let Some(first) = support.first() {
            if support.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Shape("support vectors differ in dimension".into()));
            }
        }
        if !b.is_finite() || dual_coefs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SVM coefficients".into()));
        }
        Ok(BinarySvm {
            kernel,
            support,
            dual_coefs,
            b,
            c,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support
    }

    /// `alpha_i y_i` per support vector.
    pub fn dual_coefs(&self) -> &[f64] {
        &self.dual_coefs
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.dual_coefs.iter().map(|v| v.abs()).collect()
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.support.first().map(Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(Error::Shape(format!("input of length {} for a {d}-dimensional SVM", x.len())));
            }
        }
        Ok(self
            .support
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.b)
    }

    /// `||w||^2` in feature space.
    pub fn weight_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for (si, ai) in self.support.iter().zip(&self.dual_coefs) {
            for (sj, aj) in self.support.iter().zip(&self.dual_coefs) {
                s += ai * aj * self.kernel.eval_unchecked(si, sj);
            }
        }
        s
    }

    /// Primal hinge objective `(1/n) sum max(0, 1 - y_i f(x_i)) + lambda ||w||^2`.
    /// The decision here is `f = w.x + b`, i.e. the printed `w.x - b` with `b` negated.
    pub fn hinge_objective(&self, x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<f64> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Shape(format!("{} samples with {} labels", x.len(), y.len())));
        }
        let mut hinge = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            hinge += (1.0 - yi * self.decision(xi)?).max(0.0);
        }
        let reg = if lambda == 0.0 { 0.0 } else { lambda * self.weight_norm_sq() };
        Ok(hinge / x.len() as f64 + reg)
    }

    /// Dual objective `sum alpha - 1/2 sum sum alpha_i alpha_j y_i y_j K_ij`.
    pub fn dual_objective(&self) -> f64 {
        self.dual_coefs.iter().map(|v| v.abs()).sum::<f64>() - 0.5 * self.weight_norm_sq()
    }

    /// Checks box and equality constraints and the KKT margin conditions on
    /// the training set within `tol`.
    pub fn check_kkt(&self, x: &[Vec<f64>], y: &[f64], tol: f64) -> Result<()> {
        let sum: f64 = self.dual_coefs.iter().sum();
        if sum.abs() > 1e-6 {
            return Err(Error::Data(format!("sum alpha_i y_i = {sum}")));
        }
        for (i, (xi, &yi)) in x.iter().zip(y).enumerate() {
            let margin = yi * self.decision(xi)?;
            let alpha = self
                .support
                .iter()
                .position(|s| s == xi)
                .map_or(0.0, |k| self.dual_coefs[k].abs());
            if alpha > self.c * (1.0 + 1e-9) {
                return Err(Error::Data(format!("alpha {alpha} above C = {}", self.c)));
            }
            let at_bound = alpha >= self.c * (1.0 - 1e-9);
            let free = alpha > 0.0 && !at_bound;
            let ok = if alpha == 0.0 {
                margin >= 1.0 - tol
            } else if free {
                (margin - 1.0).abs() <= tol
            } else {
                margin <= 1.0 + tol
            };
            if !ok {
                return Err(Error::Data(format!(
                    "KKT violated at sample {i}: alpha {alpha}, margin {margin}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-dimension affine scaling to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Data("cannot standardize an empty feature set".into()));
        }
        let d = x[0].len();
        let mut mean = vec![0.0; d];
        for v in x {
            mean.iter_mut().zip(v).for_each(|(m, a)| *m += a);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for v in x {
            var.iter_mut()
                .zip(v.iter().zip(&mean))
                .for_each(|(s, (a, m))| *s += (a - m) * (a - m));
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature vector of length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Binary machine for the class pair `(i, j)`, `i < j`; class `i` is the
/// negative side.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMachine {
    pub i: usize,
    pub j: usize,
    pub svm: BinarySvm,
}

/// One-vs-one multi-class SVM over dense class ids `0..n_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSvm {
    n_classes: usize,
    kernel: KernelSpec,
    params: TrainParams,
    standardizer: Standardizer,
    machines: Vec<PairMachine>,
}

#[derive(Serialize, Deserialize)]
struct MachineHeader {
    i: usize,
    j: usize,
    n_support: usize,
    c: f64,
}

/// Trains one machine per class pair on standardized features.
pub fn ovo_train(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    kernel: &KernelSpec,
    params: &TrainParams,
) -> Result<MultiSvm> {
    MultiSvm::train(features, labels, n_classes, kernel, params, true)
}

impl MultiSvm {
    pub fn train(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        kernel: &KernelSpec,
        params: &TrainParams,
        standardize: bool,
    ) -> Result<Self> {
        kernel.validate()?;
        params.validate()?;
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut counts = vec![0usize; n_classes];
        for &l in labels {
            if l >= n_classes {
                return Err(Error::Data(format!("label {l} outside 0..{n_classes}")));
            }
            counts[l] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("class {missing} is absent from the training data")));
        }
        let standardizer = if standardize {
            Standardizer::fit(features)?
        } else {
            Standardizer::identity(features.first().map_or(0, Vec::len))
        };
        let scaled = features
            .iter()
            .map(|f| standardizer.apply(f))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, usize)> = (0..n_classes)
            .flat_map(|i| (i + 1..n_classes).map(move |j| (i, j)))
            .collect();
        let machines = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (f, &l) in scaled.iter().zip(labels) {
                    if l == i || l == j {
                        x.push(f.clone());
                        y.push(if l == j { 1.0 } else { -1.0 });
                    }
                }
                let p = TrainParams {
                    seed: derive_indexed(params.seed, "svm/pair", (i * n_classes + j) as u64),
                    ..params.clone()
                };
                let svm = smo_train(&x, &y, kernel, &p)?;
                Ok(PairMachine { i, j, svm })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiSvm {
            n_classes,
            kernel: *kernel,
            params: params.clone(),
            standardizer,
            machines,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    pub fn machines(&self) -> &[PairMachine] {
        &self.machines
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn n_pairs(&self) -> usize {
        self.n_classes * (self.n_classes - 1) / 2
    }

    /// Per-class vote counts. A positive decision votes for `j`, anything
    /// else (including exactly 0) for the lower class `i`.
    pub fn votes(&self, x: &[f64]) -> Result<Vec<u32>> {
        let z = self.standardizer.apply(x)?;
        let mut votes = vec![0u32; self.n_classes];
        for m in &self.machines {
            let f = m.svm.decision(&z)?;
            votes[if f > 0.0 { m.j } else { m.i }] += 1;
        }
        Ok(votes)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_first(&self.votes(x)?))
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(SVM_FORMAT, SVM_VERSION);
        let dim = self.standardizer.dim();
        c.set("n_classes", &self.n_classes)?;
        c.set("dim", &dim)?;
        c.set("kernel", &self.kernel)?;
        c.set("params", &self.params)?;
        let headers: Vec<MachineHeader> = self
            .machines
            .iter()
            .map(|m| MachineHeader {
                i: m.i,
                j: m.j,
                n_support: m.svm.n_support(),
                c: m.svm.c(),
            })
            .collect();
        c.set("machines", &headers)?;
        c.push_blob("standardizer/mean", DType::F64, self.standardizer.mean.clone());
        c.push_blob("standardizer/scale", DType::F64, self.standardizer.scale.clone());
        for m in &self.machines {
            let tag = format!("pair/{}-{}", m.i, m.j);
            c.push_blob(
                &format!("{tag}/support"),
                DType::F64,
                m.svm.support.iter().flatten().copied().collect(),
            );
            c.push_blob(&format!("{tag}/dual_coefs"), DType::F64, m.svm.dual_coefs.clone());
            c.push_blob(&format!("{tag}/bias"), DType::F64, vec![m.svm.b]);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        c.expect(SVM_FORMAT, SVM_VERSION, path)?;
        let n_classes: usize = c.get("n_classes", path)?;
        let dim: usize = c.get("dim", path)?;
        let kernel: KernelSpec = c.get("kernel", path)?;
        let params: TrainParams = c.get("params", path)?;
        let headers: Vec<MachineHeader> = c.get("machines", path)?;
        if n_classes < 2 || headers.len() != n_classes * (n_classes - 1) / 2 {
            return Err(Error::malformed(path, "machine count does not match the class count"));
        }
        let standardizer = Standardizer {
            mean: c.take_blob("standardizer/mean", dim, path)?,
            scale: c.take_blob("standardizer/scale", dim, path)?,
        };
        let mut machines = Vec::with_capacity(headers.len());
        for h in headers {
            if h.i >= h.j || h.j >= n_classes {
                return Err(Error::malformed(path, format!("bad class pair ({}, {})", h.i, h.j)));
            }
            let tag = format!("pair/{}-{}", h.i, h.j);
            let flat = c.take_blob(&format!("{tag}/support"), h.n_support * dim, path)?;
            let support = if dim == 0 {
                vec![Vec::new(); h.n_support]
            } else {
                flat.chunks(dim).map(<[f64]>::to_vec).collect()
            };
            let coefs = c.take_blob(&format!("{tag}/dual_coefs"), h.n_support, path)?;
            let b = c.take_blob(&format!("{tag}/bias"), 1, path)?[0];
            let svm = BinarySvm::new(kernel, support, coefs, b, h.c)
                .map_err(|e| Error::malformed(path, e.to_string()))?;
            machines.push(PairMachine { i: h.i, j: h.j, svm });
        }
        Ok(MultiSvm {
            n_classes,
            kernel,
            params,
            standardizer,
            machines,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?, path)
    }
}

/// Index of the first maximum.
pub fn argmax_first<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
