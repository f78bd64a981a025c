//! Seeded synthetic fundus images: vessel trees with exact masks, and a
//! labelled lesion dataset.
//!
//! All randomness comes from ChaCha8 streams keyed by
//! `sha256(seed || label)` (see [`crate::rng`]), with one stream per sample,
//! so output bytes do not depend on thread count or platform.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{GrayImage, Manifest, ManifestEntry, RgbImage};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, rng_from_seed, StreamRng};
use crate::segment::MaskImage;

/// RGB tint applied when writing images. Its luminance weights sum to 1, so
/// `to_gray` of a written image recovers the gray value up to 8-bit rounding
/// as long as the value stays below `1 / TINT[0]`.
pub const TINT: [f64; 3] = [1.30, 0.934_582_623_509_369_7, 0.55];

/// Intensity outside the fundus disk.
const OUTSIDE: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselParams {
    pub seed: u64,
    /// Square image side in pixels.
    pub size: usize,
    /// Number of vessel walks leaving the optic disc.
    pub branches: usize,
    /// Walk step length in pixels.
    pub step: f64,
    /// Standard deviation of the per-step heading change, radians.
    pub turn_sd: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Fractional darkening of vessel pixels.
    pub contrast: f64,
    /// Amplitude of the uniform background noise.
    pub noise: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        VesselParams {
            seed: 0,
            size: 64,
            branches: 4,
            step: 1.5,
            turn_sd: 0.12,
            radius_min: 1.0,
            radius_max: 2.2,
            contrast: 0.35,
            noise: 0.02,
        }
    }
}

impl VesselParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::InvalidParam(format!("synthetic image size must be >= 32, got {}", self.size)));
        }
        if !(self.radius_min >= 1.0 && self.radius_max >= self.radius_min) {
            return Err(Error::InvalidParam(format!(
                "vessel radii must satisfy 1 <= min <= max, got {}..{}",
                self.radius_min, self.radius_max
            )));
        }
        if !(self.step > 0.0) || !(self.turn_sd >= 0.0) || !(0.0..1.0).contains(&self.contrast) || !(self.noise >= 0.0) {
            return Err(Error::InvalidParam("invalid vessel walk or intensity parameters".into()));
        }
        Ok(())
    }
}

/// Working canvas: background intensity, vessel darkening, additive lesion
/// layer and the vessel mask.
struct Canvas {
    size: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    disc: (f64, f64),
    background: Vec<f64>,
    darkness: Vec<f64>,
    lesion: Vec<f64>,
    mask: Vec<u8>,
}

impl Canvas {
    fn inside(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) < self.radius * self.radius
    }

    /// Marks every pixel center within the tapered capsule from `a` to `b`.
    fn capsule(&mut self, a: (f64, f64), b: (f64, f64), ra: f64, rb: f64, contrast: f64) {
        let r = ra.max(rb);
        let n = self.size as isize;
        let x0 = ((a.0.min(b.0) - r).floor() as isize).max(0);
        let x1 = ((a.0.max(b.0) + r).ceil() as isize).min(n - 1);
        let y0 = ((a.1.min(b.1) - r).floor() as isize).max(0);
        let y1 = ((a.1.max(b.1) + r).ceil() as isize).min(n - 1);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if !self.inside(px, py) {
                    continue;
                }
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
                let rad = ra + t * (rb - ra);
                if (px - qx).powi(2) + (py - qy).powi(2) <= rad * rad {
                    let i = y as usize * self.size + x as usize;
                    self.mask[i] = 1;
                    self.darkness[i] = self.darkness[i].max(contrast);
                }
            }
        }
    }

    /// Random walk from `start` with linearly tapering radius; stops after
    /// `steps` steps or on leaving the disk.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        &mut self,
        rng: &mut StreamRng,
        start: (f64, f64),
        heading: f64,
        steps: usize,
        step: f64,
        turn_sd: f64,
        radii: (f64, f64),
        contrast: f64,
    ) {
        let turn = Normal::new(0.0, turn_sd.max(1e-12)).expect("valid sd");
        let (mut p, mut theta) = (start, heading);
        for s in 0..steps {
            theta += turn.sample(rng);
            let q = (p.0 + step * theta.cos(), p.1 + step * theta.sin());
            if !self.inside(q.0, q.1) {
                break;
            }
            let f0 = s as f64 / steps as f64;
            let f1 = (s + 1) as f64 / steps as f64;
            let ra = radii.0 + (radii.1 - radii.0) * f0;
            let rb = radii.0 + (radii.1 - radii.0) * f1;
            self.capsule(p, q, ra, rb, contrast);
            p = q;
        }
    }

    fn blob(&mut self, center: (f64, f64), radius: f64, delta: f64) {
        let n = self.size as isize;
        let reach = 2.0 * radius;
        let x0 = ((center.0 - reach).floor() as isize).max(0);
        let x1 = ((center.0 + reach).ceil() as isize).min(n - 1);
        let y0 = ((center.1 - reach).floor() as isize).max(0);
        let y1 = ((center.1 + reach).ceil() as isize).min(n - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d2 = ((px - center.0).powi(2) + (py - center.1).powi(2)) / (radius * radius);
                if d2 < 4.0 && self.inside(px, py) {
                    self.lesion[y as usize * self.size + x as usize] += delta * (-2.0 * d2).exp();
                }
            }
        }
    }

    fn render(&self) -> (GrayImage, MaskImage) {
        let pixels: Vec<f64> = (0..self.size * self.size)
            .map(|i| (self.background[i] * (1.0 - self.darkness[i]) + self.lesion[i]).clamp(0.0, 1.0))
            .collect();
        let img = GrayImage::new(self.size, self.size, pixels).expect("clamped pixels");
        let mask = MaskImage::new(self.size, self.size, self.mask.clone()).expect("matching dims");
        (img, mask)
    }
}

/// Ranges of the per-image fundus geometry and illumination.
struct Jitter {
    center: f64,
    radius: (f64, f64),
    level: (f64, f64),
    gradient: (f64, f64),
}

const VESSEL_JITTER: Jitter = Jitter {
    center: 0.02,
    radius: (0.45, 0.49),
    level: (0.45, 0.53),
    gradient: (0.04, 0.08),
};

/// Disease images vary less in framing so that class signatures, not
/// acquisition, dominate pixel distances.
const DISEASE_JITTER: Jitter = Jitter {
    center: 0.005,
    radius: (0.47, 0.48),
    level: (0.48, 0.50),
    gradient: (0.01, 0.02),
};

fn base_canvas(p: &VesselParams, j: &Jitter, rng: &mut StreamRng) -> Canvas {
    let s = p.size as f64;
    let cx = s / 2.0 + rng.random_range(-j.center..j.center) * s;
    let cy = s / 2.0 + rng.random_range(-j.center..j.center) * s;
    let radius = s * rng.random_range(j.radius.0..j.radius.1);
    let level = rng.random_range(j.level.0..j.level.1);
    let grad_angle = rng.random_range(0.0..2.0 * PI);
    let grad = rng.random_range(j.gradient.0..j.gradient.1);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let disc = (cx + side * 0.3 * radius, cy + rng.random_range(-0.05..0.05) * radius);
    let disc_r = 0.09 * s;

    let n = p.size;
    let mut background = vec![OUTSIDE; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - cx, py - cy);
            if dx * dx + dy * dy >= radius * radius {
                continue;
            }
            let along = (dx * grad_angle.cos() + dy * grad_angle.sin()) / radius;
            let dd = ((px - disc.0).powi(2) + (py - disc.1).powi(2)) / (disc_r * disc_r);
            let noise = if p.noise > 0.0 { rng.random_range(-p.noise..p.noise) } else { 0.0 };
            background[y * n + x] = level + grad * along + 0.12 * (-dd).exp() + noise;
        }
    }
    Canvas {
        size: n,
        cx,
        cy,
        radius,
        disc,
        background,
        darkness: vec![0.0; n * n],
        lesion: vec![0.0; n * n],
        mask: vec![0; n * n],
    }
}

fn draw_tree(c: &mut Canvas, p: &VesselParams, rng: &mut StreamRng) {
    let steps = (1.1 * c.radius / p.step).ceil() as usize;
    for b in 0..p.branches {
        // spread initial headings around the circle, jittered
        let heading = 2.0 * PI * (b as f64 + rng.random_range(0.0..1.0)) / p.branches as f64;
        let r0 = rng.random_range(p.radius_min.max(0.8 * p.radius_max)..=p.radius_max);
        let start = (c.disc.0 + 2.0 * heading.cos(), c.disc.1 + 2.0 * heading.sin());
        c.walk(rng, start, heading, steps, p.step, p.turn_sd, (r0, p.radius_min), p.contrast);
    }
}

/// Fundus-like image with a seeded vessel tree; the mask is exactly the
/// drawn vessel support.
pub fn gen_vessel(params: &VesselParams) -> Result<(GrayImage, MaskImage)> {
    params.validate()?;
    let mut rng = rng_from_seed(params.seed);
    let mut c = base_canvas(params, &VESSEL_JITTER, &mut rng);
    draw_tree(&mut c, params, &mut rng);
    Ok(c.render())
}

/// Grey-to-RGB tint used for every written sample.
pub fn tint(img: &GrayImage) -> RgbImage {
    let px = img
        .pixels()
        .iter()
        .map(|&v| TINT.map(|t| (v * t).clamp(0.0, 1.0)))
        .collect();
    RgbImage::new(img.width(), img.height(), px).expect("clamped")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseParams {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        DiseaseParams {
            seed: 0,
            classes: 10,
            per_class: 200,
            size: 128,
        }
    }
}

/// How a class differs from a healthy fundus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Signature {
    /// Soft blobs near a preferred point of the fundus.
    Lesion {
        count: (usize, usize),
        radius: (f64, f64),
        delta: f64,
        /// Polar position of the preferred region, as (angle, fraction of disk radius).
        region: (f64, f64),
    },
    /// Extra tortuous vessels sprouting inside a preferred sector.
    Vascular {
        count: (usize, usize),
        tortuosity: f64,
        radius: (f64, f64),
        region: (f64, f64),
    },
}

/// Deterministic signature of class `c` out of `classes`: the first half
/// carry fundus lesions, the second half vascular changes.
pub fn class_signature(c: usize, classes: usize) -> Signature {
    let lesion_classes = classes.div_ceil(2);
    if c < lesion_classes {
        let angle = 2.0 * PI * c as f64 / lesion_classes as f64;
        // alternate bright (exudate-like) and dark (haemorrhage-like) lesions
        let delta = if c % 2 == 0 { 0.22 } else { -0.18 };
        Signature::Lesion {
            count: (3 + c % 3, 6 + c % 3),
            radius: (4.0 + 0.5 * (c % 2) as f64, 6.5 + 0.5 * (c % 2) as f64),
            delta,
            region: (angle, 0.55),
        }
    } else {
        let j = c - lesion_classes;
        let vascular_classes = classes - lesion_classes;
        let angle = 2.0 * PI * (j as f64 + 0.5) / vascular_classes as f64;
        Signature::Vascular {
            count: (9 + j % 2, 13 + j % 2),
            tortuosity: 0.45 + 0.05 * (j % 3) as f64,
            radius: (1.0, 2.1 + 0.2 * (j % 2) as f64),
            region: (angle, 0.55),
        }
    }
}

fn disease_vessel_params(seed: u64, size: usize) -> VesselParams {
    VesselParams {
        seed,
        size,
        branches: 5,
        step: 2.0,
        turn_sd: 0.12,
        radius_min: 1.0,
        radius_max: 2.8,
        contrast: 0.35,
        noise: 0.02,
    }
}

/// One labelled sample: vessel tree plus the class signature.
pub fn gen_disease_sample(seed: u64, class: usize, classes: usize, size: usize) -> Result<(GrayImage, MaskImage)> {
    if class >= classes {
        return Err(Error::InvalidParam(format!("class {class} outside 0..{classes}")));
    }
    let vp = disease_vessel_params(seed, size);
    vp.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut c = base_canvas(&vp, &DISEASE_JITTER, &mut rng);
    draw_tree(&mut c, &vp, &mut rng);
    let spread = 0.11 * c.radius;
    let spot = |c: &Canvas, rng: &mut StreamRng, region: (f64, f64)| {
        let (a, f) = region;
        let jitter = Normal::new(0.0, spread).expect("positive spread");
        (
            c.cx + f * c.radius * a.cos() + jitter.sample(rng),
            c.cy + f * c.radius * a.sin() + jitter.sample(rng),
        )
    };
    match class_signature(class, classes) {
        Signature::Lesion {
            count,
            radius,
            delta,
            region,
        } => {
            for _ in 0..rng.random_range(count.0..=count.1) {
                let at = spot(&c, &mut rng, region);
                let r = rng.random_range(radius.0..=radius.1);
                c.blob(at, r, delta);
            }
        }
        Signature::Vascular {
            count,
            tortuosity,
            radius,
            region,
        } => {
            for _ in 0..rng.random_range(count.0..=count.1) {
                let at = spot(&c, &mut rng, region);
                if !c.inside(at.0, at.1) {
                    continue;
                }
                let heading = rng.random_range(0.0..2.0 * PI);
                let steps = rng.random_range(10..=18);
                c.walk(&mut rng, at, heading, steps, vp.step, tortuosity, (radius.1, radius.0), vp.contrast);
            }
        }
    }
    Ok(c.render())
}

pub fn class_label(c: usize) -> String {
    format!("class_{c:02}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a balanced labelled dataset (`images/*.png` plus `manifest.json`)
/// and returns its manifest.
pub fn gen_disease_dataset(params: &DiseaseParams, out_dir: &Path) -> Result<Manifest> {
    if params.classes < 2 || params.per_class == 0 {
        return Err(Error::InvalidParam("need >= 2 classes and >= 1 sample per class".into()));
    }
    create_dir(&out_dir.join("images"))?;
    let jobs: Vec<(usize, usize)> = (0..params.classes)
        .flat_map(|c| (0..params.per_class).map(move |i| (c, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(c, i))| {
            let seed = derive_indexed(params.seed, "synth/disease", k as u64);
            let (img, _) = gen_disease_sample(seed, c, params.classes, params.size)?;
            let rel = format!("images/c{c:02}_{i:04}.png");
            tint(&img).save_png(&out_dir.join(&rel))?;
            Ok(ManifestEntry {
                path: rel.into(),
                label: class_label(c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(entries, out_dir)?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes `count` vessel images and masks as `images/vessel_NNNN.png` and
/// `masks/vessel_NNNN.png`.
pub fn gen_vessel_dataset(base: &VesselParams, count: usize, out_dir: &Path) -> Result<()> {
    base.validate()?;
    create_dir(&out_dir.join("images"))?;
    create_dir(&out_dir.join("masks"))?;
    (0..count).into_par_iter().try_for_each(|i| {
        let p = VesselParams {
            seed: derive_indexed(base.seed, "synth/vessel", i as u64),
            ..base.clone()
        };
        let (img, mask) = gen_vessel(&p)?;
        let name = format!("vessel_{i:04}.png");
        tint(&img).save_png(&out_dir.join("images").join(&name))?;
        mask.save_png(&out_dir.join("masks").join(&name))
    })
}

/// In-memory vessel samples with per-sample seeds derived like the dataset
/// writer's.
pub fn vessel_samples(base: &VesselParams, range: std::ops::Range<usize>) -> Result<Vec<(GrayImage, MaskImage)>> {
    range
        .into_par_iter()
        .map(|i| {
            gen_vessel(&VesselParams {
                seed: derive_indexed(base.seed, "synth/vessel", i as u64),
                ..base.clone()
            })
        })
        .collect()
}
