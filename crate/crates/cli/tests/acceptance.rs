//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p twostream-cli --test acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twostream::dataio::{load_image, split_manifest, GrayImage, SplitRatios};
use twostream::eigen::fit_pca;
use twostream::enhance::{clahe, hist_equalize, ClaheParams};
use twostream::fusion::{best_row, sweep_ratio, train_two_stream, FusionConfig, DEFAULT_GRID};
use twostream::metrics::{accuracy, jaccard, roc_auc};
use twostream::segment::{self, predict_mask, MaskImage, SegNet, SegNetConfig, SegSample, SegTrainConfig, Tensor4, WeightMap};
use twostream::svm::{smo_train, KernelSpec, TrainParams};
use twostream::synth::{gen_disease_dataset, vessel_samples, DiseaseParams, VesselParams};

type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(t: Duration, limit_s: u64, what: &str) -> Result<(), String> {
    if t.as_secs_f64() < limit_s as f64 {
        Ok(())
    } else {
        Err(format!("{what} took {:.1}s, budget {limit_s}s", t.as_secs_f64()))
    }
}

fn c1_smo_vs_qp() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let n = r.random_range(2..=6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[n - 1] = -1.0;
        let c = [0.3, 1.0, 5.0, 50.0][case % 4];
        let gamma = [0.25, 1.0][case % 2];
        let params = TrainParams { c, ..Default::default() };
        let m = smo_train(&x, &y, &KernelSpec::rbf(gamma), &params).map_err(|e| e.to_string())?;
        m.check_kkt(&x, &y, params.tol).map_err(|e| format!("case {case}: {e}"))?;
        let best = support::brute_force_dual(&x, &y, &support::rbf(gamma), c);
        let gap = (m.dual_objective() - best).abs();
        worst = worst.max(gap);
        if gap >= 1e-4 {
            return Err(format!("case {case}: dual {} vs brute force {best}", m.dual_objective()));
        }
    }
    within(start.elapsed(), 10, "SMO oracle")?;
    Ok(format!("25 problems, max |dual gap| {worst:.2e}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn c2_gradient_check() -> Check {
    let start = Instant::now();
    let cfg = SegNetConfig {
        depth: 1,
        base_channels: 2,
    };
    let mut net = SegNet::new(cfg, 7).map_err(|e| e.to_string())?;
    let mut r = rng(7);
    // zero biases put dead-ReLU pixels exactly on the kink; move off it
    for (t, p) in net.params_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            p.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
        }
    }
    let x = Tensor4::new([1, 1, 8, 8], (0..64).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let mask = MaskImage::new(8, 8, (0..64).map(|i| u8::from(i % 5 == 0 || i / 8 == 3)).collect()).unwrap();
    let wm = WeightMap::new(8, 8, (0..64).map(|_| r.random_range(0.5..3.0)).collect()).unwrap();
    let loss = |net: &SegNet| {
        let p = net.forward(&x).unwrap();
        segment::weighted_xent(&p, std::slice::from_ref(&mask), std::slice::from_ref(&wm))
            .unwrap()
            .total
    };
    let grads = net
        .backward(&x, std::slice::from_ref(&mask), std::slice::from_ref(&wm))
        .map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    for (t, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let orig = net.params()[t][i];
            net.params_mut()[t][i] = orig + h;
            let up = loss(&net);
            net.params_mut()[t][i] = orig - h;
            let down = loss(&net);
            net.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grads[t][i]).abs() / (numeric.abs() + grads[t][i].abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
    }
    if worst >= 1e-4 {
        return Err(format!("worst relative error {worst:.2e} over {count} parameters"));
    }
    within(start.elapsed(), 30, "gradient check")?;
    Ok(format!(
        "{count} parameters, worst relative error {worst:.2e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c3_pca() -> Check {
    let mut r = rng(303);
    let (mut worst_val, mut worst_vec, mut worst_rec): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..20 {
        let m = r.random_range(3..=10);
        let d = r.random_range(m..=25);
        let samples: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let model = fit_pca(&samples, m - 1).map_err(|e| e.to_string())?;
        let (values, vectors) = support::dense_pca(&samples);
        for j in 0..m - 1 {
            let lam = model.eigenvalues()[j];
            worst_val = worst_val.max((lam - values[j]).abs() / values[j].abs());
            let u = model.component(j);
            let cos: f64 = u.iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            worst_vec = worst_vec.max((cos.abs() - 1.0).abs());
            let ident: f64 = samples
                .iter()
                .map(|s| {
                    let p: f64 = s.iter().zip(model.mean()).zip(u).map(|((x, mu), uu)| (x - mu) * uu).sum();
                    p * p
                })
                .sum::<f64>()
                / m as f64;
            if (ident - lam).abs() > 1e-8 * lam {
                return Err(format!("case {case}: eigenvalue identity off for component {j}"));
            }
        }
        for s in &samples {
            let back = model.reconstruct(&model.project(s).unwrap()).unwrap();
            let err: f64 = back.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_rec = worst_rec.max(err / norm);
        }
    }
    if worst_val >= 1e-8 || worst_vec >= 1e-8 || worst_rec >= 1e-6 {
        return Err(format!(
            "eigenvalue rel {worst_val:.2e}, component {worst_vec:.2e}, reconstruction {worst_rec:.2e}"
        ));
    }
    Ok(format!(
        "20 instances: eigenvalue rel {worst_val:.1e}, component {worst_vec:.1e}, reconstruction {worst_rec:.1e}"
    ))
}

fn c4_metrics() -> Check {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..10) as f64) / 9.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
        worst = worst.max((auc - support::pairwise_auc(&scores, &labels)).abs());
    }
    if worst >= 1e-12 {
        return Err(format!("ROC trapezoid vs pairwise differs by {worst:.2e}"));
    }
    let a = MaskImage::new(4, 2, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
    let b = MaskImage::new(4, 2, vec![0, 0, 1, 1, 1, 1, 0, 0]).unwrap();
    let c = MaskImage::new(4, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    let fixtures = [
        (jaccard(&a, &b).unwrap(), 1.0 / 3.0),
        (jaccard(&a, &a).unwrap(), 1.0),
        (jaccard(&a, &c).unwrap(), 0.0),
        (accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0),
        (accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0),
        (accuracy(&[0, 1, 1, 3], &[0, 1, 2, 3]).unwrap(), 0.75),
    ];
    for (i, (got, want)) in fixtures.iter().enumerate() {
        if got != want {
            return Err(format!("fixture {i}: {got} != {want}"));
        }
    }
    Ok(format!("100 ROC instances (max diff {worst:.1e}), 6 hand-counted fixtures exact"))
}

fn c8_clahe() -> Check {
    let mut r = rng(808);
    let one = ClaheParams {
        tiles_x: 1,
        tiles_y: 1,
        clip_limit: 1.0,
    };
    for i in 0..50 {
        let (w, h) = (r.random_range(2..48), r.random_range(2..48));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap();
        if clahe(&img, &one).map_err(|e| e.to_string())? != hist_equalize(&img) {
            return Err(format!("image {i} ({w}x{h}) differs from global equalization"));
        }
    }
    let mut worst: f64 = 0.0;
    for f in 0..5 {
        let px: Vec<f64> = (0..64).map(|_| (r.random_range(0..32) as f64) / 40.0 + 0.05 * f as f64).collect();
        let img = GrayImage::new(8, 8, px.clone()).unwrap();
        let p = ClaheParams {
            tiles_x: 2,
            tiles_y: 2,
            clip_limit: 0.5,
        };
        let got = clahe(&img, &p).map_err(|e| e.to_string())?;
        let want = support::reference_clahe(&px, 8, 8, 2, 2, 0.5);
        for (a, b) in got.pixels().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("reference CLAHE differs by {worst:.2e}"));
    }
    Ok(format!("50 one-tile images bit-exact; 5 8x8/2x2 fixtures match reference (max diff {worst:.1e})"))
}

/// Trains the default network; returns it with the report line.
fn c7_segmentation(net_out: &mut Option<SegNet>, seg_time: &mut Duration) -> Check {
    let start = Instant::now();
    let base = VesselParams::default();
    let train: Vec<SegSample> = vessel_samples(&base, 0..200)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(image, mask)| SegSample { image, mask })
        .collect();
    let net = SegNet::new(SegNetConfig::default(), 0).map_err(|e| e.to_string())?;
    let cfg = SegTrainConfig::default();
    let (mut net, hist) = segment::train(net, &train, &cfg).map_err(|e| e.to_string())?;
    net.round_to_f32();
    let test = vessel_samples(&base, 1000..1050).map_err(|e| e.to_string())?;
    let mut jac = 0.0;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (img, mask) in &test {
        let (pred, prob) = predict_mask(&net, img);
        jac += jaccard(&pred, mask).unwrap();
        scores.extend_from_slice(prob.pixels());
        labels.extend(mask.labels().iter().map(|&l| l == 1));
    }
    let jac = jac / test.len() as f64;
    let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
    *seg_time = start.elapsed();
    *net_out = Some(net);
    let line = format!(
        "{} epochs, final loss {:.4}, mean Jaccard {jac:.4}, pixel ROC-AUC {auc:.4}, {:.0}s",
        cfg.epochs,
        hist.epoch_loss.last().unwrap(),
        seg_time.as_secs_f64()
    );
    if jac < 0.70 || auc < 0.90 {
        return Err(line);
    }
    within(*seg_time, 15 * 60, "segmentation training")?;
    Ok(line)
}

/// Criteria 5 and 6 share the trained benchmark model.
fn c5_c6_benchmark(net: Option<SegNet>, seg_time: Duration) -> (Check, Check) {
    let Some(net) = net else {
        let e = Err("no segmentation network (criterion 7 failed to train)".to_string());
        return (e.clone(), e);
    };
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let prepared = (|| -> Result<_, String> {
        let manifest = gen_disease_dataset(&DiseaseParams::default(), dir.path()).map_err(|e| e.to_string())?;
        let split = split_manifest(&manifest, 0, SplitRatios::default()).map_err(|e| e.to_string())?;
        let outcome = train_two_stream(&manifest, &split, net, &FusionConfig::default()).map_err(|e| e.to_string())?;
        let model = outcome.model;
        let test = model.features_for(&manifest, &split.test).map_err(|e| e.to_string())?;
        Ok((manifest, split, model, outcome.validation_features, test))
    })();
    let (manifest, split, model, val, test) = match prepared {
        Ok(p) => p,
        Err(e) => return (Err(e.clone()), Err(e)),
    };

    let c6 = (|| -> Check {
        let vv = model.votes(&val).map_err(|e| e.to_string())?;
        let tv = model.votes(&test).map_err(|e| e.to_string())?;
        let rows = sweep_ratio(model.svm_rgb.kernel().kind, &vv, Some(&tv), &DEFAULT_GRID).map_err(|e| e.to_string())?;
        let best = best_row(&rows).unwrap();
        let single = vv.accuracy(1.0).unwrap().max(vv.accuracy(0.0).unwrap());
        let fused_test = tv.accuracy(model.hybrid_w).unwrap();
        let table: Vec<String> = rows
            .iter()
            .map(|r| format!("w={} val={:.3} test={:.3}", r.hybrid_w, r.validation_accuracy, r.test_accuracy.unwrap()))
            .collect();
        let total = start.elapsed() + seg_time;
        let line = format!(
            "best val {:.4} (w={}) vs best single {single:.4}; fused test {fused_test:.4}; [{}]; {:.0}s incl. segmentation training",
            best.validation_accuracy,
            best.hybrid_w,
            table.join(", "),
            total.as_secs_f64()
        );
        if best.validation_accuracy < single - 0.01 || fused_test < 0.85 {
            return Err(line);
        }
        within(total, 30 * 60, "benchmark")?;
        Ok(line)
    })();

    let c5 = (|| -> Check {
        let mut m1 = model.clone();
        m1.hybrid_w = 1.0;
        let mut m0 = model.clone();
        m0.hybrid_w = 0.0;
        for (n, &i) in split.test.iter().enumerate() {
            let img = load_image(&manifest.resolve(i)).map_err(|e| e.to_string())?;
            let a = m1.svm_rgb.predict(&test.rgb[n]).unwrap();
            let b = m0.svm_unet.predict(&test.unet[n]).unwrap();
            let p1 = m1.predict(&img).map_err(|e| e.to_string())?.0;
            let p0 = m0.predict(&img).map_err(|e| e.to_string())?.0;
            if p1 != a || p0 != b {
                return Err(format!("test image {i}: fused ({p1}, {p0}) vs streams ({a}, {b})"));
            }
        }
        Ok(format!("{} test images: w=1 equals CLAHE stream, w=0 equals segmentation stream", split.test.len()))
    })();
    (c5, c6)
}

fn cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_twostream"))
        .args(args)
        .current_dir(cwd)
        .env("TWOSTREAM_RUN_LOG", cwd.join("logs/runs.jsonl"))
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`twostream {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

/// Reduced-scale scripted pipeline through the command line.
fn scripted_pipeline(cwd: &Path) -> Result<(), String> {
    let steps: &[&[&str]] = &[
        &["synth", "--kind", "vessel", "--seed", "0", "--count", "40", "--out", "vessels"],
        &["synth", "--kind", "vessel", "--seed", "1", "--count", "10", "--out", "vessels_test"],
        &["synth", "--kind", "disease", "--seed", "0", "--classes", "10", "--per-class", "20", "--out", "disease"],
        &["train-seg", "--data", "vessels", "--epochs", "3", "--seed", "0", "--out", "models/seg.seg"],
        &["evaluate", "--model", "models/seg.seg", "--data", "vessels_test", "--out", "reports/seg.json"],
        &["train", "--manifest", "disease/manifest.json", "--seed", "0", "--seg-model", "models/seg.seg", "--out", "bundle"],
        &["sweep", "--bundle", "bundle", "--out", "reports/sweep.csv"],
        &["evaluate", "--bundle", "bundle", "--out", "reports/classification.json"],
        &["predict", "--bundle", "bundle", "--in", "disease/images/c00_0000.png", "--out", "reports/predict.json"],
        &[
            "plot", "--roc", "reports/seg_roc.csv", "--pr", "reports/seg_pr.csv", "--loss", "models/seg.history.json",
            "--sweep", "reports/sweep.csv", "--out-dir", "plots",
        ],
    ];
    for s in steps {
        cli(cwd, s)?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Check {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    scripted_pipeline(a.path())?;
    scripted_pipeline(b.path())?;
    let fa: Vec<PathBuf> = files_under(a.path()).into_iter().filter(|p| !p.starts_with("logs")).collect();
    let fb: Vec<PathBuf> = files_under(b.path()).into_iter().filter(|p| !p.starts_with("logs")).collect();
    if fa != fb {
        return Err("the two runs wrote different file sets".into());
    }
    for p in &fa {
        if std::fs::read(a.path().join(p)).unwrap() != std::fs::read(b.path().join(p)).unwrap() {
            return Err(format!("{} differs between runs", p.display()));
        }
    }
    let expected = ["bundle/bundle.json", "reports/classification.json", "reports/seg.json", "plots/sweep.svg", "plots/roc.svg"];
    for e in expected {
        if !fa.contains(&PathBuf::from(e)) {
            return Err(format!("missing artifact {e}"));
        }
    }
    let log = std::fs::read_to_string(a.path().join("logs/runs.jsonl")).unwrap_or_default();
    if log.lines().count() != 10 {
        return Err(format!("run log has {} lines, expected 10", log.lines().count()));
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs, {:.0}s",
        fa.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut report = |n: u32, name: &'static str, r: Check| {
        match &r {
            Ok(d) => println!("PASS criterion {n} ({name}): {d}"),
            Err(d) => println!("FAIL criterion {n} ({name}): {d}"),
        }
        results.push((n, name, r));
    };
    report(1, "SMO vs brute-force QP", guarded(c1_smo_vs_qp));
    report(2, "gradient check", guarded(c2_gradient_check));
    report(3, "PCA equivalence", guarded(c3_pca));
    report(4, "metric oracles", guarded(c4_metrics));
    let mut net = None;
    let mut seg_time = Duration::ZERO;
    let c7 = guarded(|| c7_segmentation(&mut net, &mut seg_time));
    let (c5, c6) = match catch_unwind(AssertUnwindSafe(|| c5_c6_benchmark(net, seg_time))) {
        Ok(r) => r,
        Err(_) => (Err("panicked".into()), Err("panicked".into())),
    };
    report(5, "degenerate fusion", c5);
    report(6, "synthetic two-stream benchmark", c6);
    report(7, "segmentation at desk scale", c7);
    report(8, "CLAHE reduction", guarded(c8_clahe));
    report(9, "determinism", guarded(c9_determinism));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
