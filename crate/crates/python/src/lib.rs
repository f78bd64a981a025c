//! Python bindings. Images cross the boundary as lists of rows of floats in
//! [0, 1]; masks as lists of rows of 0/1 ints.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use twostream::dataio::{load_image, GrayImage};
use twostream::enhance::{clahe as core_clahe, hist_equalize as core_histeq, ClaheParams};
use twostream::segment::{mask_from_probability, vessel_probability, MaskImage};
use twostream::svm::{KernelKind, KernelSpec, TrainParams};

fn py_err(e: twostream::Error) -> PyErr {
    match e {
        twostream::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_gray(rows: Vec<Vec<f64>>) -> PyResult<GrayImage> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows must have equal length"));
    }
    GrayImage::new(w, h, rows.concat()).map_err(py_err)
}

fn from_gray(img: &GrayImage) -> Vec<Vec<f64>> {
    img.pixels().chunks(img.width()).map(<[f64]>::to_vec).collect()
}

fn to_mask(rows: Vec<Vec<u8>>) -> PyResult<MaskImage> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("mask rows must have equal length"));
    }
    MaskImage::new(w, h, rows.concat()).map_err(py_err)
}

fn from_mask(m: &MaskImage) -> Vec<Vec<u8>> {
    m.labels().chunks(m.dims().0).map(<[u8]>::to_vec).collect()
}

fn kernel_kind(name: &str) -> PyResult<KernelKind> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown kernel '{name}'")))
}

/// Synthetic vessel image and its ground-truth mask.
#[pyfunction]
#[pyo3(signature = (seed, size = 64))]
fn gen_vessel(seed: u64, size: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<u8>>)> {
    let p = twostream::synth::VesselParams {
        seed,
        size,
        ..Default::default()
    };
    let (img, mask) = twostream::synth::gen_vessel(&p).map_err(py_err)?;
    Ok((from_gray(&img), from_mask(&mask)))
}

/// Writes a labeled disease dataset with a manifest; returns the entry count.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, classes = 10, per_class = 200, size = 128))]
fn gen_disease_dataset(out_dir: PathBuf, seed: u64, classes: usize, per_class: usize, size: usize) -> PyResult<usize> {
    let p = twostream::synth::DiseaseParams {
        seed,
        classes,
        per_class,
        size,
    };
    Ok(twostream::synth::gen_disease_dataset(&p, &out_dir).map_err(py_err)?.len())
}

#[pyfunction]
fn hist_equalize(image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_gray(&core_histeq(&to_gray(image)?)))
}

#[pyfunction]
#[pyo3(signature = (image, tiles = (8, 8), clip = 0.01))]
fn clahe(image: Vec<Vec<f64>>, tiles: (usize, usize), clip: f64) -> PyResult<Vec<Vec<f64>>> {
    let p = ClaheParams {
        tiles_x: tiles.0,
        tiles_y: tiles.1,
        clip_limit: clip,
    };
    Ok(from_gray(&core_clahe(&to_gray(image)?, &p).map_err(py_err)?))
}

#[pyfunction]
fn accuracy(preds: Vec<usize>, truths: Vec<usize>) -> PyResult<f64> {
    twostream::metrics::accuracy(&preds, &truths).map_err(py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    Ok(twostream::metrics::roc_auc(&scores, &labels).map_err(py_err)?.auc)
}

#[pyfunction]
fn pr_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    twostream::metrics::pr_auc(&scores, &labels).map_err(py_err)
}

#[pyfunction]
fn jaccard(a: Vec<Vec<u8>>, b: Vec<Vec<u8>>) -> PyResult<f64> {
    twostream::metrics::jaccard(&to_mask(a)?, &to_mask(b)?).map_err(py_err)
}

#[pyfunction]
fn fused_scores(votes_a: Vec<u32>, votes_b: Vec<u32>, w: f64) -> PyResult<Vec<f64>> {
    twostream::fusion::fused_scores(&votes_a, &votes_b, w).map_err(py_err)
}

#[pyclass(frozen)]
struct EigenModel(twostream::eigen::EigenModel);

#[pymethods]
impl EigenModel {
    #[staticmethod]
    fn fit(samples: Vec<Vec<f64>>, k: usize) -> PyResult<Self> {
        Ok(EigenModel(twostream::eigen::fit_pca(&samples, k).map_err(py_err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(EigenModel(twostream::eigen::EigenModel::load(&path).map_err(py_err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.0.eigenvalues().to_vec()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.0.mean().to_vec()
    }

    fn component(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.0.k() {
            return Err(PyValueError::new_err(format!("component {j} outside 0..{}", self.0.k())));
        }
        Ok(self.0.component(j).to_vec())
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.project(&x).map_err(py_err)
    }

    fn reconstruct(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.reconstruct(&coeffs).map_err(py_err)
    }
}

/// One-vs-one multi-class SVM.
#[pyclass(frozen)]
struct MultiSvm(twostream::svm::MultiSvm);

#[pymethods]
impl MultiSvm {
    #[staticmethod]
    #[pyo3(signature = (features, labels, n_classes, kernel = "rbf", c = 1.0, seed = 0))]
    fn train(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        kernel: &str,
        c: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let spec = KernelSpec::default_for(kernel_kind(kernel)?, dim);
        let params = TrainParams {
            c,
            seed,
            ..Default::default()
        };
        Ok(MultiSvm(
            twostream::svm::ovo_train(&features, &labels, n_classes, &spec, &params).map_err(py_err)?,
        ))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(MultiSvm(twostream::svm::MultiSvm::load(&path).map_err(py_err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }

    fn votes(&self, x: Vec<f64>) -> PyResult<Vec<u32>> {
        self.0.votes(&x).map_err(py_err)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.0.predict(&x).map_err(py_err)
    }
}

#[pyclass(frozen)]
struct SegNet(twostream::segment::SegNet);

#[pymethods]
impl SegNet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(SegNet(twostream::segment::SegNet::load(&path).map_err(py_err)?))
    }

    fn probability(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_gray(&vessel_probability(&self.0, &to_gray(image)?)))
    }

    fn segment(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<u8>>> {
        let prob = vessel_probability(&self.0, &to_gray(image)?);
        Ok(from_mask(&mask_from_probability(&prob)))
    }
}

/// A trained bundle directory written by `twostream train`.
#[pyclass(frozen)]
struct TwoStreamModel(twostream::fusion::TwoStreamModel);

#[pymethods]
impl TwoStreamModel {
    #[staticmethod]
    fn load(bundle_dir: PathBuf) -> PyResult<Self> {
        Ok(TwoStreamModel(
            twostream::fusion::Bundle::load(&bundle_dir).map_err(py_err)?.model,
        ))
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes.clone()
    }

    #[getter]
    fn hybrid_w(&self) -> f64 {
        self.0.hybrid_w
    }

    fn stream_features(&self, path: PathBuf) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.0.stream_features(&load_image(&path).map_err(py_err)?).map_err(py_err)
    }

    /// Returns `(class id, label, fused scores)` for an image file.
    fn predict(&self, path: PathBuf) -> PyResult<(usize, String, Vec<f64>)> {
        let (c, scores) = self.0.predict(&load_image(&path).map_err(py_err)?).map_err(py_err)?;
        Ok((c, self.0.classes[c].clone(), scores))
    }
}

#[pymodule]
fn pytwostream(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_vessel, m)?)?;
    m.add_function(wrap_pyfunction!(gen_disease_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(hist_equalize, m)?)?;
    m.add_function(wrap_pyfunction!(clahe, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(fused_scores, m)?)?;
    m.add_class::<EigenModel>()?;
    m.add_class::<MultiSvm>()?;
    m.add_class::<SegNet>()?;
    m.add_class::<TwoStreamModel>()?;
    Ok(())
}
