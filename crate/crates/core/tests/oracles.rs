mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twostream::dataio::GrayImage;
use twostream::eigen::fit_pca;
use twostream::enhance::{clahe, hist_equalize, ClaheParams};
use twostream::metrics::roc_auc;
use twostream::segment::{self, MaskImage, SegNet, SegNetConfig, SegSample, SegTrainConfig, Tensor4, WeightMap};
use twostream::svm::{smo_train, KernelSpec, TrainParams};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn smo_reaches_the_brute_force_dual_optimum() {
    let mut r = rng(11);
    for case in 0..25 {
        let n = r.random_range(2..=6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let c = [0.5, 1.0, 10.0][case % 3];
        let gamma = 0.5;
        let params = TrainParams { c, ..Default::default() };
        let m = smo_train(&x, &y, &KernelSpec::rbf(gamma), &params).unwrap();
        let expected = support::brute_force_dual(&x, &y, &support::rbf(gamma), c);
        assert!(
            (m.dual_objective() - expected).abs() < 1e-4,
            "case {case}: smo {} vs brute force {expected}",
            m.dual_objective()
        );
        m.check_kkt(&x, &y, params.tol).unwrap();
    }
}

#[test]
fn snapshot_pca_matches_dense_covariance() {
    let mut r = rng(5);
    for case in 0..20 {
        let m = r.random_range(3..=10);
        let d = r.random_range(m..=25);
        let samples: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let k = m - 1;
        let model = fit_pca(&samples, k).unwrap();
        let (values, vectors) = support::dense_pca(&samples);
        for j in 0..k {
            let lam = model.eigenvalues()[j];
            assert!((lam - values[j]).abs() <= 1e-8 * values[0], "case {case} eigenvalue {j}");
            let u = model.component(j);
            let dotp: f64 = u.iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            assert!((dotp.abs() - 1.0).abs() < 1e-8, "case {case} component {j}: |cos| = {}", dotp.abs());
            // lambda = (1/M) sum (u^T phi)^2
            let mean = model.mean();
            let ident: f64 = samples
                .iter()
                .map(|s| {
                    let p: f64 = s.iter().zip(mean).zip(u).map(|((x, mu), uu)| (x - mu) * uu).sum();
                    p * p
                })
                .sum::<f64>()
                / m as f64;
            assert!((ident - lam).abs() <= 1e-8 * lam.abs().max(1e-300));
        }
        for s in &samples {
            let back = model.reconstruct(&model.project(s).unwrap()).unwrap();
            let err: f64 = back.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm, "case {case}: reconstruction error {err}");
        }
    }
}

#[test]
fn roc_auc_matches_pairwise_probability() {
    let mut r = rng(9);
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..8) as f64) / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        assert!((auc - support::pairwise_auc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn clahe_matches_the_reference_implementation() {
    let fixture: Vec<f64> = (0..64).map(|i| ((i * 37 + 11) % 64) as f64 / 63.0 * 0.6 + 0.2).collect();
    let img = GrayImage::new(8, 8, fixture.clone()).unwrap();
    let p = ClaheParams {
        tiles_x: 2,
        tiles_y: 2,
        clip_limit: 0.5,
    };
    let ours = clahe(&img, &p).unwrap();
    let reference = support::reference_clahe(&fixture, 8, 8, 2, 2, 0.5);
    for (a, b) in ours.pixels().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    let mut r = rng(2);
    for _ in 0..10 {
        let (w, h) = (r.random_range(8..40), r.random_range(8..40));
        let px: Vec<f64> = (0..w * h).map(|_| (r.random_range(0..40) as f64) / 60.0).collect();
        let (tx, ty) = (r.random_range(1..=4), r.random_range(1..=4));
        let clip = [0.01, 0.05, 0.3, 1.0][r.random_range(0..4)];
        let got = clahe(
            &GrayImage::new(w, h, px.clone()).unwrap(),
            &ClaheParams {
                tiles_x: tx,
                tiles_y: ty,
                clip_limit: clip,
            },
        )
        .unwrap();
        let want = support::reference_clahe(&px, w, h, tx, ty, clip);
        for (a, b) in got.pixels().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn one_tile_clahe_is_global_equalization() {
    let mut r = rng(4);
    for _ in 0..50 {
        let (w, h) = (r.random_range(1..30), r.random_range(1..30));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap();
        let one = ClaheParams {
            tiles_x: 1,
            tiles_y: 1,
            clip_limit: 1.0,
        };
        assert_eq!(clahe(&img, &one).unwrap(), hist_equalize(&img));
    }
}

fn small_problem(seed: u64) -> (SegNet, Tensor4, MaskImage, WeightMap) {
    let cfg = SegNetConfig {
        depth: 1,
        base_channels: 2,
    };
    let mut net = SegNet::new(cfg, seed).unwrap();
    let mut r = rng(seed);
    // zero biases put dead-ReLU pixels exactly on the kink; move off it
    for (t, p) in net.params_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            p.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
        }
    }
    let img: Vec<f64> = (0..64).map(|_| r.random_range(0.0..1.0)).collect();
    let mask = MaskImage::new(8, 8, (0..64).map(|i| u8::from((i % 8 + i / 8) % 3 == 0)).collect()).unwrap();
    let wm = WeightMap::new(8, 8, (0..64).map(|_| r.random_range(0.5..2.0)).collect()).unwrap();
    (net, Tensor4::new([1, 1, 8, 8], img).unwrap(), mask, wm)
}

fn total_loss(net: &SegNet, x: &Tensor4, m: &MaskImage, w: &WeightMap) -> f64 {
    let probs = net.forward(x).unwrap();
    segment::weighted_xent(&probs, std::slice::from_ref(m), std::slice::from_ref(w))
        .unwrap()
        .total
}

#[test]
fn segmentation_gradients_match_finite_differences() {
    // no pre-activation of this instance lies within h of zero
    let (mut net, x, m, w) = small_problem(3);
    let grads = net.backward(&x, std::slice::from_ref(&m), std::slice::from_ref(&w)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = net.params()[t][i];
            net.params_mut()[t][i] = orig + h;
            let up = total_loss(&net, &x, &m, &w);
            net.params_mut()[t][i] = orig - h;
            let down = total_loss(&net, &x, &m, &w);
            net.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t][i];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

#[test]
fn zero_weight_map_gives_zero_gradients() {
    let (net, x, m, _) = small_problem(3);
    let zero = WeightMap::uniform(8, 8, 0.0);
    let g = net.backward(&x, &[m], &[zero]).unwrap();
    assert!(g.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn a_single_patch_can_be_overfit() {
    let img = GrayImage::from_fn(16, 16, |x, y| if (x + y) % 7 < 2 { 0.2 } else { 0.7 });
    let mask = MaskImage::new(16, 16, img.pixels().iter().map(|&v| u8::from(v < 0.5)).collect()).unwrap();
    let data = vec![SegSample { image: img, mask }];
    let net = SegNet::new(
        SegNetConfig {
            depth: 1,
            base_channels: 4,
        },
        0,
    )
    .unwrap();
    let cfg = SegTrainConfig {
        epochs: 150,
        lr: 0.05,
        lr_late: 0.05,
        ..Default::default()
    };
    let (_, hist) = segment::train(net, &data, &cfg).unwrap();
    let first = hist.epoch_loss[0];
    let last = *hist.epoch_loss.last().unwrap();
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}
