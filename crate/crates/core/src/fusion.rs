//! The two-stream model: contrast-enhanced and vessel-probability images,
//! each reduced by its own eigen model and classified by its own one-vs-one
//! SVM, with the vote vectors blended by `hybrid_w`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Container, DType};
use crate::dataio::{load_image, resize_bilinear, to_gray, DatasetSplit, GrayImage, Manifest, RgbImage, CANONICAL_DIMS};
use crate::eigen::{effective_k, fit_pca, EigenModel, K_RGB, K_UNET};
use crate::enhance::Enhancement;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::segment::{mask_from_probability, vessel_probability, SegNet};
use crate::svm::{argmax_first, KernelKind, KernelSpec, MultiSvm, TrainParams};

pub const BUNDLE_FORMAT: &str = "twostream.bundle";
pub const BUNDLE_VERSION: u32 = 1;
const FEATURES_FORMAT: &str = "twostream.features";
const FEATURES_VERSION: u32 = 1;

/// The hybrid-ratio grid evaluated by default.
pub const DEFAULT_GRID: [f64; 5] = [0.0, 0.4, 0.5, 0.6, 1.0];

/// What the segmentation stream hands to its eigen model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnetInput {
    #[default]
    Probability,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub dims: (usize, usize),
    pub enhancement: Enhancement,
    pub unet_input: UnetInput,
    pub k_rgb: usize,
    pub k_unet: usize,
    pub kernel: KernelKind,
    pub svm: TrainParams,
    /// Fixed weight of the enhancement stream; `None` picks the best grid
    /// value on the validation split.
    pub hybrid_w: Option<f64>,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            dims: CANONICAL_DIMS,
            enhancement: Enhancement::default(),
            unet_input: UnetInput::default(),
            k_rgb: K_RGB,
            k_unet: K_UNET,
            kernel: KernelKind::Rbf,
            svm: TrainParams::default(),
            hybrid_w: None,
            grid: DEFAULT_GRID.to_vec(),
            seed: 0,
        }
    }
}

fn check_weight(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidParam(format!("hybrid weight must lie in [0, 1], got {w}")));
    }
    Ok(())
}

/// Convex combination of the two streams' vote counts, each normalized by
/// the number of class pairs.
pub fn fused_scores(votes_a: &[u32], votes_b: &[u32], w: f64) -> Result<Vec<f64>> {
    check_weight(w)?;
    if votes_a.len() != votes_b.len() {
        return Err(Error::Shape(format!(
            "stream vote vectors cover {} and {} classes",
            votes_a.len(),
            votes_b.len()
        )));
    }
    let c = votes_a.len();
    let pairs = (c * c.saturating_sub(1) / 2).max(1) as f64;
    Ok(votes_a
        .iter()
        .zip(votes_b)
        .map(|(&a, &b)| w * (a as f64 / pairs) + (1.0 - w) * (b as f64 / pairs))
        .collect())
}

/// Resized, contrast-enhanced gray image of the first stream.
pub fn enhanced_image(img: &RgbImage, dims: (usize, usize), enhancement: &Enhancement) -> Result<GrayImage> {
    enhancement.apply(&resize_bilinear(&to_gray(img), dims.0, dims.1)?)
}

/// Resized vessel map of the second stream.
pub fn vessel_image(img: &RgbImage, dims: (usize, usize), net: &SegNet, input: UnetInput) -> Result<GrayImage> {
    let prob = vessel_probability(net, &resize_bilinear(&to_gray(img), dims.0, dims.1)?);
    Ok(match input {
        UnetInput::Probability => prob,
        UnetInput::Binary => mask_from_probability(&prob).to_gray(),
    })
}

/// Flattened stream images (before projection) of one input.
#[derive(Clone, Debug)]
struct RawStreams {
    rgb: Vec<f64>,
    unet: Vec<f64>,
}

fn raw_streams(
    img: &RgbImage,
    dims: (usize, usize),
    enhancement: &Enhancement,
    net: &SegNet,
    input: UnetInput,
) -> Result<RawStreams> {
    Ok(RawStreams {
        rgb: enhanced_image(img, dims, enhancement)?.into_pixels(),
        unet: vessel_image(img, dims, net, input)?.into_pixels(),
    })
}

/// Projected coefficients of a set of images, with their labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamFeatures {
    pub rgb: Vec<Vec<f64>>,
    pub unet: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl StreamFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(FEATURES_FORMAT, FEATURES_VERSION);
        let n = self.len();
        let kr = self.rgb.first().map_or(0, Vec::len);
        let ku = self.unet.first().map_or(0, Vec::len);
        c.set("n", &n)?;
        c.set("k_rgb", &kr)?;
        c.set("k_unet", &ku)?;
        c.push_blob("rgb", DType::F64, self.rgb.concat());
        c.push_blob("unet", DType::F64, self.unet.concat());
        c.push_blob("labels", DType::F64, self.labels.iter().map(|&l| l as f64).collect());
        Ok(c)
    }

    fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        c.expect(FEATURES_FORMAT, FEATURES_VERSION, path)?;
        let n: usize = c.get("n", path)?;
        let kr: usize = c.get("k_rgb", path)?;
        let ku: usize = c.get("k_unet", path)?;
        let split = |flat: Vec<f64>, k: usize| -> Vec<Vec<f64>> {
            if k == 0 {
                vec![Vec::new(); n]
            } else {
                flat.chunks(k).map(<[f64]>::to_vec).collect()
            }
        };
        let rgb = split(c.take_blob("rgb", n * kr, path)?, kr);
        let unet = split(c.take_blob("unet", n * ku, path)?, ku);
        let labels = c.take_blob("labels", n, path)?.into_iter().map(|v| v as usize).collect();
        Ok(StreamFeatures { rgb, unet, labels })
    }
}

/// Per-image vote vectors of both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteTable {
    pub a: Vec<Vec<u32>>,
    pub b: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

impl VoteTable {
    pub fn predictions(&self, w: f64) -> Result<Vec<usize>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| Ok(argmax_first(&fused_scores(a, b, w)?)))
            .collect()
    }

    pub fn accuracy(&self, w: f64) -> Result<f64> {
        crate::metrics::accuracy(&self.predictions(w)?, &self.labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSweepRow {
    pub hybrid_w: f64,
    pub kernel: KernelKind,
    pub validation_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Accuracy of every grid weight on the validation (and optional test)
/// votes.
pub fn sweep_ratio(
    kernel: KernelKind,
    validation: &VoteTable,
    test: Option<&VoteTable>,
    grid: &[f64],
) -> Result<Vec<RatioSweepRow>> {
    if validation.labels.is_empty() {
        return Err(Error::Data("ratio sweep needs a nonempty validation set".into()));
    }
    grid.iter()
        .map(|&w| {
            Ok(RatioSweepRow {
                hybrid_w: w,
                kernel,
                validation_accuracy: validation.accuracy(w)?,
                test_accuracy: test.map(|t| t.accuracy(w)).transpose()?,
            })
        })
        .collect()
}

/// First row (in grid order) with the highest validation accuracy.
pub fn best_row(rows: &[RatioSweepRow]) -> Option<&RatioSweepRow> {
    let mut best: Option<&RatioSweepRow> = None;
    for r in rows {
        if best.is_none_or(|b| r.validation_accuracy > b.validation_accuracy) {
            best = Some(r);
        }
    }
    best
}

pub fn sweep_csv(rows: &[RatioSweepRow]) -> String {
    let mut out = String::from("hybrid_w,kernel,validation_accuracy,test_accuracy\n");
    for r in rows {
        let test = r.test_accuracy.map_or(String::new(), |t| format!("{t:.6}"));
        out.push_str(&format!(
            "{},{},{:.6},{}\n",
            r.hybrid_w,
            r.kernel.name(),
            r.validation_accuracy,
            test
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoStreamModel {
    pub dims: (usize, usize),
    pub enhancement: Enhancement,
    pub unet_input: UnetInput,
    pub segnet: SegNet,
    pub eigen_rgb: EigenModel,
    pub eigen_unet: EigenModel,
    pub svm_rgb: MultiSvm,
    pub svm_unet: MultiSvm,
    pub hybrid_w: f64,
    pub classes: Vec<String>,
    pub manifest_checksum: Option<String>,
    pub seed: u64,
}

/// Everything `train_two_stream` learns beyond the model itself.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TwoStreamModel,
    pub train_features: StreamFeatures,
    pub validation_features: StreamFeatures,
    pub sweep: Vec<RatioSweepRow>,
}

fn load_all(manifest: &Manifest, indices: &[usize]) -> Result<Vec<RgbImage>> {
    indices
        .par_iter()
        .map(|&i| load_image(&manifest.resolve(i)))
        .collect()
}

pub fn train_stream_svms(
    features: &StreamFeatures,
    n_classes: usize,
    kernel: KernelKind,
    params: &TrainParams,
    seed: u64,
) -> Result<(MultiSvm, MultiSvm)> {
    let dim_a = features.rgb.first().map_or(0, Vec::len);
    let dim_b = features.unet.first().map_or(0, Vec::len);
    let pa = TrainParams {
        seed: derive_seed(seed, "svm/rgb"),
        ..params.clone()
    };
    let pb = TrainParams {
        seed: derive_seed(seed, "svm/unet"),
        ..params.clone()
    };
    let a = crate::svm::ovo_train(&features.rgb, &features.labels, n_classes, &KernelSpec::default_for(kernel, dim_a), &pa)?;
    let b = crate::svm::ovo_train(&features.unet, &features.labels, n_classes, &KernelSpec::default_for(kernel, dim_b), &pb)?;
    Ok((a, b))
}

/// Fits both eigen models and SVMs on the training split; picks `hybrid_w`
/// on the validation split unless the config fixes it.
pub fn train_two_stream(
    manifest: &Manifest,
    split: &DatasetSplit,
    mut segnet: SegNet,
    cfg: &FusionConfig,
) -> Result<TrainOutcome> {
    // features must come from the weights the bundle will hold
    segnet.round_to_f32();
    if let Some(w) = cfg.hybrid_w {
        check_weight(w)?;
    }
    split.check_partition(manifest.len())?;
    let labels = manifest.label_ids();
    let classes = manifest.class_index().to_vec();
    let n_classes = classes.len();
    let mut present = vec![false; n_classes];
    for &i in &split.train {
        present[labels[i]] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::Data(format!(
            "class '{}' has no training images; both streams must share the full class list",
            classes[c]
        )));
    }

    let train_images = load_all(manifest, &split.train)?;
    let raw: Vec<RawStreams> = train_images
        .par_iter()
        .map(|img| raw_streams(img, cfg.dims, &cfg.enhancement, &segnet, cfg.unet_input))
        .collect::<Result<_>>()?;
    drop(train_images);
    let (rgb_raw, unet_raw): (Vec<Vec<f64>>, Vec<Vec<f64>>) = raw.into_iter().map(|r| (r.rgb, r.unet)).unzip();
    let m = rgb_raw.len();
    let d = cfg.dims.0 * cfg.dims.1;
    let eigen_rgb = fit_pca(&rgb_raw, effective_k(cfg.k_rgb, m, d))?.with_image_dims(cfg.dims.0, cfg.dims.1)?;
    let eigen_unet = fit_pca(&unet_raw, effective_k(cfg.k_unet, m, d))?.with_image_dims(cfg.dims.0, cfg.dims.1)?;
    let train_features = StreamFeatures {
        rgb: rgb_raw.iter().map(|v| eigen_rgb.project(v)).collect::<Result<_>>()?,
        unet: unet_raw.iter().map(|v| eigen_unet.project(v)).collect::<Result<_>>()?,
        labels: split.train.iter().map(|&i| labels[i]).collect(),
    };
    drop((rgb_raw, unet_raw));

    let (svm_rgb, svm_unet) = train_stream_svms(&train_features, n_classes, cfg.kernel, &cfg.svm, cfg.seed)?;
    let mut model = TwoStreamModel {
        dims: cfg.dims,
        enhancement: cfg.enhancement.clone(),
        unet_input: cfg.unet_input,
        segnet,
        eigen_rgb,
        eigen_unet,
        svm_rgb,
        svm_unet,
        hybrid_w: cfg.hybrid_w.unwrap_or(0.5),
        classes,
        manifest_checksum: Some(manifest.checksum()?),
        seed: cfg.seed,
    };
    let validation_features = model.features_for(manifest, &split.validation)?;
    let mut sweep = Vec::new();
    if !validation_features.is_empty() {
        let votes = model.votes(&validation_features)?;
        sweep = sweep_ratio(cfg.kernel, &votes, None, &cfg.grid)?;
        if cfg.hybrid_w.is_none() {
            if let Some(best) = best_row(&sweep) {
                model.hybrid_w = best.hybrid_w;
            }
        }
    } else if cfg.hybrid_w.is_none() {
        log::warn!("empty validation split; keeping hybrid weight 0.5");
    }
    Ok(TrainOutcome {
        model,
        train_features,
        validation_features,
        sweep,
    })
}

impl TwoStreamModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Stream coefficient vectors `(enhancement stream, vessel stream)`.
    pub fn stream_features(&self, img: &RgbImage) -> Result<(Vec<f64>, Vec<f64>)> {
        let raw = raw_streams(img, self.dims, &self.enhancement, &self.segnet, self.unet_input)?;
        Ok((self.eigen_rgb.project(&raw.rgb)?, self.eigen_unet.project(&raw.unet)?))
    }

    /// Projected features of manifest entries, computed in parallel.
    pub fn features_for(&self, manifest: &Manifest, indices: &[usize]) -> Result<StreamFeatures> {
        let labels = manifest.label_ids();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = indices
            .par_iter()
            .map(|&i| self.stream_features(&load_image(&manifest.resolve(i))?))
            .collect::<Result<_>>()?;
        let (rgb, unet) = pairs.into_iter().unzip();
        Ok(StreamFeatures {
            rgb,
            unet,
            labels: indices.iter().map(|&i| labels[i]).collect(),
        })
    }

    pub fn votes(&self, f: &StreamFeatures) -> Result<VoteTable> {
        self.votes_with(f, &self.svm_rgb, &self.svm_unet)
    }

    pub fn votes_with(&self, f: &StreamFeatures, svm_a: &MultiSvm, svm_b: &MultiSvm) -> Result<VoteTable> {
        Ok(VoteTable {
            a: f.rgb.iter().map(|x| svm_a.votes(x)).collect::<Result<_>>()?,
            b: f.unet.iter().map(|x| svm_b.votes(x)).collect::<Result<_>>()?,
            labels: f.labels.clone(),
        })
    }

    /// Predicted class id and fused per-class scores; ties go to the lowest id.
    pub fn predict(&self, img: &RgbImage) -> Result<(usize, Vec<f64>)> {
        let (a, b) = self.stream_features(img)?;
        let scores = fused_scores(&self.svm_rgb.votes(&a)?, &self.svm_unet.votes(&b)?, self.hybrid_w)?;
        Ok((argmax_first(&scores), scores))
    }

    fn validate(&self) -> Result<()> {
        check_weight(self.hybrid_w)?;
        let d = self.dims.0 * self.dims.1;
        if self.eigen_rgb.dim() != d || self.eigen_unet.dim() != d {
            return Err(Error::Dimensions("eigen model dimension does not match the canonical dims".into()));
        }
        let c = self.classes.len();
        if self.svm_rgb.n_classes() != c || self.svm_unet.n_classes() != c {
            return Err(Error::Data("stream SVMs do not share the bundle's class list".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    format: String,
    version: u32,
    dims: (usize, usize),
    enhancement: Enhancement,
    unet_input: UnetInput,
    hybrid_w: f64,
    classes: Vec<String>,
    manifest_checksum: Option<String>,
    manifest_path: Option<PathBuf>,
    seed: u64,
}

/// A trained model together with the data it came from, as stored on disk.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub model: TwoStreamModel,
    pub manifest_path: Option<PathBuf>,
    pub split: Option<DatasetSplit>,
    pub train_features: Option<StreamFeatures>,
}

const SEG_FILE: &str = "segnet.seg";
const EIGEN_RGB_FILE: &str = "eigen_rgb.eig";
const EIGEN_UNET_FILE: &str = "eigen_unet.eig";
const SVM_RGB_FILE: &str = "svm_rgb.svm";
const SVM_UNET_FILE: &str = "svm_unet.svm";
const FEATURES_FILE: &str = "train_features.bin";
const SPLIT_FILE: &str = "split.json";
const HEADER_FILE: &str = "bundle.json";

impl Bundle {
    /// Writes the bundle to a sibling temporary directory, then renames it
    /// into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.validate()?;
        let name = dir
            .file_name()
            .ok_or_else(|| Error::InvalidParam(format!("bundle path {} has no final component", dir.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let m = &self.model;
        m.segnet.save(&tmp.join(SEG_FILE))?;
        m.eigen_rgb.save(&tmp.join(EIGEN_RGB_FILE))?;
        m.eigen_unet.save(&tmp.join(EIGEN_UNET_FILE))?;
        m.svm_rgb.save(&tmp.join(SVM_RGB_FILE))?;
        m.svm_unet.save(&tmp.join(SVM_UNET_FILE))?;
        if let Some(f) = &self.train_features {
            f.to_container()?.save(&tmp.join(FEATURES_FILE))?;
        }
        if let Some(s) = &self.split {
            s.save(&tmp.join(SPLIT_FILE))?;
        }
        let header = BundleHeader {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            dims: m.dims,
            enhancement: m.enhancement.clone(),
            unet_input: m.unet_input,
            hybrid_w: m.hybrid_w,
            classes: m.classes.clone(),
            manifest_checksum: m.manifest_checksum.clone(),
            manifest_path: self.manifest_path.clone(),
            seed: m.seed,
        };
        let hpath = tmp.join(HEADER_FILE);
        let mut f = fs::File::create(&hpath).map_err(|e| Error::io(&hpath, e))?;
        f.write_all(serde_json::to_string_pretty(&header)?.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| Error::io(&hpath, e))?;

        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        let had_old = dir.exists();
        if had_old {
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        if had_old {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hpath = dir.join(HEADER_FILE);
        let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&hpath, e.to_string()))?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != BUNDLE_FORMAT {
            return Err(Error::malformed(&hpath, format!("not a bundle (format '{format}')")));
        }
        if version != BUNDLE_VERSION as u64 {
            return Err(Error::malformed(
                &hpath,
                format!("incompatible bundle version {version} (this build reads {BUNDLE_VERSION})"),
            ));
        }
        let h: BundleHeader = serde_json::from_value(value).map_err(|e| Error::malformed(&hpath, e.to_string()))?;
        let model = TwoStreamModel {
            dims: h.dims,
            enhancement: h.enhancement,
            unet_input: h.unet_input,
            segnet: SegNet::load(&dir.join(SEG_FILE))?,
            eigen_rgb: EigenModel::load(&dir.join(EIGEN_RGB_FILE))?,
            eigen_unet: EigenModel::load(&dir.join(EIGEN_UNET_FILE))?,
            svm_rgb: MultiSvm::load(&dir.join(SVM_RGB_FILE))?,
            svm_unet: MultiSvm::load(&dir.join(SVM_UNET_FILE))?,
            hybrid_w: h.hybrid_w,
            classes: h.classes,
            manifest_checksum: h.manifest_checksum,
            seed: h.seed,
        };
        model.validate().map_err(|e| Error::malformed(&hpath, e.to_string()))?;
        let fpath = dir.join(FEATURES_FILE);
        let train_features = if fpath.exists() {
            Some(StreamFeatures::from_container(Container::load(&fpath)?, &fpath)?)
        } else {
            None
        };
        let spath = dir.join(SPLIT_FILE);
        let split = if spath.exists() { Some(DatasetSplit::load(&spath)?) } else { None };
        Ok(Bundle {
            model,
            manifest_path: h.manifest_path,
            split,
            train_features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_score_fixtures() {
        let s = fused_scores(&[2, 1, 0], &[0, 1, 2], 0.5).unwrap();
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(argmax_first(&s), 0);
        let a = [3, 1, 2, 0];
        let b = [0, 2, 1, 3];
        assert_eq!(argmax_first(&fused_scores(&a, &b, 1.0).unwrap()), 0);
        assert_eq!(argmax_first(&fused_scores(&a, &b, 0.0).unwrap()), 3);
        let s = fused_scores(&a, &b, 0.6).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fused_scores(&a, &b[..3], 0.5).is_err());
        assert!(fused_scores(&a, &b, 1.5).is_err());
    }

    #[test]
    fn identical_votes_make_weight_irrelevant() {
        let v = [1, 2, 0];
        let base = fused_scores(&v, &v, 0.0).unwrap();
        for w in [0.25, 0.5, 1.0] {
            let s = fused_scores(&v, &v, w).unwrap();
            for (x, y) in s.iter().zip(&base) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sweep_picks_first_best() {
        let t = VoteTable {
            a: vec![vec![1, 0], vec![1, 0]],
            b: vec![vec![0, 1], vec![0, 1]],
            labels: vec![0, 1],
        };
        let rows = sweep_ratio(KernelKind::Rbf, &t, Some(&t), &DEFAULT_GRID).unwrap();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!(r.validation_accuracy == 0.5);
        }
        assert_eq!(best_row(&rows).unwrap().hybrid_w, 0.0);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(3).unwrap().starts_with("0.5,rbf,0.5"));
        let empty = VoteTable {
            a: vec![],
            b: vec![],
            labels: vec![],
        };
        assert!(sweep_ratio(KernelKind::Rbf, &empty, None, &DEFAULT_GRID).is_err());
    }
}
