//! Eigenface PCA fitted with the snapshot (Gram-matrix) method.

use std::cmp::Ordering;
use std::path::Path;

use crate::container::{Container, DType};
use crate::dataio::GrayImage;
use crate::error::{Error, Result};

/// Retained component count of the contrast-enhanced stream.
pub const K_RGB: usize = 61;
/// Retained component count of the segmentation stream.
pub const K_UNET: usize = 40;

const EIGEN_FORMAT: &str = "twostream.eigen";
const EIGEN_VERSION: u32 = 1;

/// Eigen-decomposition of a symmetric matrix (Householder tridiagonalization
/// followed by implicit QR).
///
/// `a` is row-major `n x n`. Returns the eigenvalues (unsorted) and the
/// eigenvectors as rows of a row-major `n x n` matrix.
pub fn symmetric_eigen(a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let eig = nalgebra::DMatrix::from_row_slice(n, n, &a).symmetric_eigen();
    // column-major storage: column k is contiguous, so it becomes row k here
    (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors.as_slice().to_vec())
}

/// Flips `v` so its first entry with magnitude above 1e-12 is positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean, orthonormal principal directions and their variances.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenModel {
    dim: usize,
    image_dims: Option<(usize, usize)>,
    mean: Vec<f64>,
    /// `k` rows of length `dim`.
    components: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl EigenModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j * self.dim..(j + 1) * self.dim]
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.image_dims
    }

    /// Records the raster shape the flattened vectors come from.
    pub fn with_image_dims(mut self, width: usize, height: usize) -> Result<Self> {
        if width * height != self.dim {
            return Err(Error::Dimensions(format!(
                "{width}x{height} image does not flatten to dimension {}",
                self.dim
            )));
        }
        self.image_dims = Some((width, height));
        Ok(self)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Shape(format!(
                "vector of length {len} for a {}-dimensional eigen model",
                self.dim
            )));
        }
        Ok(())
    }

    /// Coefficients `u_j . (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.k())
            .map(|j| dot(self.component(j), &centered))
            .collect())
    }

    /// `mean + sum_j c_j u_j`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.k() {
            return Err(Error::Shape(format!(
                "{} coefficients for a model with {} components",
                coeffs.len(),
                self.k()
            )));
        }
        let mut out = self.mean.clone();
        for (j, &c) in coeffs.iter().enumerate() {
            out.iter_mut()
                .zip(self.component(j))
                .for_each(|(o, u)| *o += c * u);
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(EIGEN_FORMAT, EIGEN_VERSION);
        c.set("dim", &self.dim)?;
        c.set("k", &self.k())?;
        c.set("image_dims", &self.image_dims)?;
        c.push_blob("mean", DType::F64, self.mean.clone());
        c.push_blob("components", DType::F64, self.components.clone());
        c.push_blob("eigenvalues", DType::F64, self.eigenvalues.clone());
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        c.expect(EIGEN_FORMAT, EIGEN_VERSION, path)?;
        let dim: usize = c.get("dim", path)?;
        let k: usize = c.get("k", path)?;
        let image_dims: Option<(usize, usize)> = c.get("image_dims", path)?;
        Ok(EigenModel {
            dim,
            image_dims,
            mean: c.take_blob("mean", dim, path)?,
            components: c.take_blob("components", k * dim, path)?,
            eigenvalues: c.take_blob("eigenvalues", k, path)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?, path)
    }
}

/// Row-major flattening; the image must have the given dims.
pub fn image_to_vector(img: &GrayImage, width: usize, height: usize) -> Result<Vec<f64>> {
    if img.dims() != (width, height) {
        return Err(Error::Dimensions(format!(
            "image is {}x{}, eigen model expects {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    Ok(img.pixels().to_vec())
}

pub fn vector_to_image(v: &[f64], width: usize, height: usize) -> Result<GrayImage> {
    GrayImage::new(width, height, v.to_vec())
}

/// Largest admissible component count for `m` samples of dimension `d`,
/// clamping `requested` with a warning when it does not fit.
pub fn effective_k(requested: usize, m: usize, d: usize) -> usize {
    let cap = m.saturating_sub(1).min(d);
    if requested > cap {
        log::warn!("requested {requested} components but only {cap} fit {m} samples; clamping");
        cap
    } else {
        requested
    }
}

/// Snapshot-method PCA with `1/M` covariance normalization.
///
/// Components are `Phi^T v / |Phi^T v|` for the top eigenvectors `v` of the
/// Gram matrix `(1/M) Phi Phi^T`; each eigenvalue is then evaluated as
/// `(1/M) sum_n (u^T Phi_n)^2`. Components whose Gram eigenvalue is zero
/// (relative to the largest) are dropped with a warning, so identical
/// samples yield a model with no components.
pub fn fit_pca(samples: &[Vec<f64>], k: usize) -> Result<EigenModel> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidParam(format!("PCA needs at least 2 samples, got {m}")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("PCA samples must share a nonzero dimension".into()));
    }
    if k > (m - 1).min(d) {
        return Err(Error::InvalidParam(format!(
            "k = {k} exceeds min(M - 1, D) = {}",
            (m - 1).min(d)
        )));
    }
    let inv_m = 1.0 / m as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v *= inv_m);
    let phi: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();

    let flat: Vec<f64> = phi.concat();
    let mut gram = vec![0.0; m * m];
    // gram = (1/M) Phi Phi^T, with Phi stored row-major m x d
    unsafe {
        matrixmultiply::dgemm(
            m,
            d,
            m,
            inv_m,
            flat.as_ptr(),
            d as isize,
            1,
            flat.as_ptr(),
            1,
            d as isize,
            0.0,
            gram.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    // exact symmetry regardless of summation order
    for i in 0..m {
        for j in i + 1..m {
            gram[j * m + i] = gram[i * m + j];
        }
    }
    let (values, vectors) = symmetric_eigen(gram, m);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));
    let top = values[order[0]].max(0.0);
    let floor = top * 1e-10;

    let mut comps: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = values[idx];
        if top == 0.0 || lambda <= floor {
            break;
        }
        let v = &vectors[idx * m..(idx + 1) * m];
        let mut u = vec![0.0; d];
        for (coef, row) in v.iter().zip(&phi) {
            u.iter_mut().zip(row).for_each(|(a, b)| *a += coef * b);
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        fix_sign(&mut u);
        comps.push((lambda, u));
    }
    if comps.len() < k {
        log::warn!(
            "PCA kept {} of {k} requested components (remaining variance is zero)",
            comps.len()
        );
    }
    // Degenerate eigenvalues: order by component, ascending.
    comps.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                if a.0 == b.0 {
                    a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal)
                } else {
                    Ordering::Equal
                }
            })
    });

    let mut eigenvalues = Vec::with_capacity(comps.len());
    let mut components = Vec::with_capacity(comps.len() * d);
    for (_, u) in comps {
        let lambda = phi.iter().map(|p| dot(&u, p).powi(2)).sum::<f64>() * inv_m;
        let lambda = match eigenvalues.last() {
            Some(&prev) if lambda > prev => prev,
            _ => lambda,
        };
        eigenvalues.push(lambda);
        components.extend(u);
    }
    Ok(EigenModel {
        dim: d,
        image_dims: None,
        mean,
        components,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_fit() {
        let m = fit_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 1).unwrap();
        assert_eq!(m.mean(), &[0.0, 0.0]);
        assert!((m.component(0)[0] - 1.0).abs() < 1e-12);
        assert!(m.component(0)[1].abs() < 1e-12);
        assert!((m.eigenvalues()[0] - 1.0).abs() < 1e-12);
        let c = m.project(&[1.0, 0.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        let c = m.project(&[-1.0, 0.0]).unwrap();
        assert!((c[0] + 1.0).abs() < 1e-12);
        assert!(fit_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 2).is_err());
    }

    #[test]
    fn identical_samples_have_no_components() {
        let m = fit_pca(&vec![vec![0.3, 0.1, 0.7]; 4], 2).unwrap();
        assert_eq!(m.k(), 0);
        assert!(m.project(&[0.0, 0.0, 0.0]).unwrap().is_empty());
    }

    #[test]
    fn projection_of_mean_and_unit_offsets() {
        let samples: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect())
            .collect();
        let m = fit_pca(&samples, 3).unwrap();
        assert!(m.project(m.mean()).unwrap().iter().all(|c| c.abs() < 1e-12));
        let x: Vec<f64> = m.mean().iter().zip(m.component(0)).map(|(a, b)| a + b).collect();
        let c = m.project(&x).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        assert_eq!(m.reconstruct(&[0.0; 3]).unwrap(), m.mean());
        assert!(m.project(&[0.0; 4]).is_err());
        assert!(m.reconstruct(&[0.0; 2]).is_err());
    }

    #[test]
    fn flatten_convention() {
        let img = GrayImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = image_to_vector(&img, 2, 2).unwrap();
        assert_eq!(v, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(vector_to_image(&v, 2, 2).unwrap(), img);
        assert!(image_to_vector(&img, 4, 1).is_err());
        let zero = GrayImage::filled(3, 3, 0.0).unwrap();
        assert!(image_to_vector(&zero, 3, 3).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_solver_diagonalizes_small_matrix() {
        let a = vec![4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(a.clone(), 3);
        for k in 0..3 {
            let v = &vecs[k * 3..k * 3 + 3];
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * v[j]).sum();
                assert!((av - vals[k] * v[i]).abs() < 1e-12);
            }
        }
        assert!((vals.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn effective_k_clamps() {
        assert_eq!(effective_k(61, 30, 1000), 29);
        assert_eq!(effective_k(40, 100, 1000), 40);
        assert_eq!(effective_k(40, 100, 10), 10);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 5 + j * 2) % 7) as f64 / 7.0).collect())
            .collect();
        let m = fit_pca(&samples, 3).unwrap().with_image_dims(2, 2).unwrap();
        let p = dir.path().join("e.model");
        m.save(&p).unwrap();
        assert_eq!(EigenModel::load(&p).unwrap(), m);
    }
}
