use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    #[serde(alias = "poly")]
    Polynomial,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Polynomial => "polynomial",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            other => Err(Error::InvalidParam(format!(
                "unknown kernel '{other}' (expected rbf or polynomial)"
            ))),
        }
    }
}

/// `rbf: exp(-gamma |x - z|^2)`, `polynomial: (gamma x.z + coef0)^degree`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            degree: 3,
            coef0: 0.0,
        }
    }

    pub fn polynomial(gamma: f64, degree: u32, coef0: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Polynomial,
            gamma,
            degree,
            coef0,
        }
    }

    /// libsvm-style defaults: gamma = 1/dim, degree 3, coef0 0.
    pub fn default_for(kind: KernelKind, dim: usize) -> Self {
        let gamma = 1.0 / dim.max(1) as f64;
        match kind {
            KernelKind::Rbf => Self::rbf(gamma),
            KernelKind::Polynomial => Self::polynomial(gamma, 3, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!("kernel gamma must be > 0, got {}", self.gamma)));
        }
        if self.kind == KernelKind::Polynomial && self.degree < 1 {
            return Err(Error::InvalidParam("polynomial degree must be >= 1".into()));
        }
        if !self.coef0.is_finite() {
            return Err(Error::InvalidParam("coef0 must be finite".into()));
        }
        Ok(())
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Polynomial => {
                let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
                (self.gamma * dot + self.coef0).powi(self.degree as i32)
            }
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != z.len() {
            return Err(Error::Shape(format!(
                "kernel arguments have lengths {} and {}",
                x.len(),
                z.len()
            )));
        }
        Ok(self.eval_unchecked(x, z))
    }
}

/// Kernel rows for SMO: the full Gram matrix for small problems, otherwise
/// rows computed on demand behind a small LRU cache.
pub(crate) enum KernelCache<'a> {
    Full {
        n: usize,
        gram: Vec<f64>,
    },
    Lazy {
        kernel: KernelSpec,
        x: &'a [Vec<f64>],
        rows: Vec<(usize, Vec<f64>)>,
        capacity: usize,
    },
}

pub(crate) const FULL_GRAM_LIMIT: usize = 4096;

impl<'a> KernelCache<'a> {
    pub fn new(kernel: KernelSpec, x: &'a [Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n <= FULL_GRAM_LIMIT {
            let mut gram = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let k = kernel.eval_unchecked(&x[i], &x[j]);
                    if !k.is_finite() {
                        return Err(Error::NonFinite(format!("kernel value K({i},{j}) = {k}")));
                    }
                    gram[i * n + j] = k;
                    gram[j * n + i] = k;
                }
            }
            Ok(KernelCache::Full { n, gram })
        } else {
            Ok(KernelCache::Lazy {
                kernel,
                x,
                rows: Vec::new(),
                capacity: 256,
            })
        }
    }

    pub fn row(&mut self, i: usize) -> Result<&[f64]> {
        match self {
            KernelCache::Full { n, gram } => Ok(&gram[i * *n..(i + 1) * *n]),
            KernelCache::Lazy {
                kernel,
                x,
                rows,
                capacity,
            } => {
                if let Some(pos) = rows.iter().position(|(k, _)| *k == i) {
                    let entry = rows.remove(pos);
                    rows.push(entry);
                } else {
                    let row: Vec<f64> = x.iter().map(|z| kernel.eval_unchecked(&x[i], z)).collect();
                    if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("kernel value in row {i}: {bad}")));
                    }
                    if rows.len() == *capacity {
                        rows.remove(0);
                    }
                    rows.push((i, row));
                }
                Ok(&rows.last().expect("row just inserted").1)
            }
        }
    }

    pub fn at(&mut self, i: usize, j: usize) -> Result<f64> {
        Ok(self.row(i)?[j])
    }

    pub fn diag(&mut self, i: usize) -> Result<f64> {
        match self {
            KernelCache::Full { n, gram } => Ok(gram[i * *n + i]),
            KernelCache::Lazy { kernel, x, .. } => Ok(kernel.eval_unchecked(&x[i], &x[i])),
        }
    }
}
