use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use twostream::dataio::{load_image, split_manifest, to_gray, Manifest, SplitRatios};
use twostream::fusion::{
    best_row, sweep_csv, sweep_ratio, train_stream_svms, train_two_stream, Bundle, FusionConfig, UnetInput,
};
use twostream::metrics::{self, ConfusionMatrix};
use twostream::rng::derive_seed;
use twostream::segment::{self, load_sample_dir, predict_mask, SegNet, SegNetConfig, SegSample, SegTrainConfig, TrainHistory};
use twostream::svm::{KernelKind, TrainParams};
use twostream::synth::{self, DiseaseParams, VesselParams};

use crate::plot;
use crate::{
    CliError, Command, EnhanceArgs, EvaluateArgs, PlotArgs, PredictArgs, SegmentArgs, SplitArg, SweepArgs, Summary,
    SynthArgs, SynthKind, TrainArgs, TrainSegArgs, UnetInputArg,
};

/// Most points kept when a curve is written out; the AUC always uses all.
const MAX_CURVE_POINTS: usize = 512;

pub fn dispatch(cmd: &Command) -> Result<Summary, CliError> {
    match cmd {
        Command::Synth(a) => synth_cmd(a),
        Command::Enhance(a) => enhance_cmd(a),
        Command::TrainSeg(a) => train_seg_cmd(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("missing file: {}", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::data(format!("missing directory: {}", p.display())))
    }
}

fn make_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    make_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn synth_cmd(a: &SynthArgs) -> Result<Summary, CliError> {
    let metrics = match a.kind {
        SynthKind::Vessel => {
            let base = VesselParams {
                seed: a.seed,
                size: a.size.unwrap_or(VesselParams::default().size),
                ..Default::default()
            };
            base.validate().map_err(|e| CliError::usage(e.to_string()))?;
            synth::gen_vessel_dataset(&base, a.count, &a.out)?;
            json!({ "kind": "vessel", "count": a.count, "size": base.size })
        }
        SynthKind::Disease => {
            let p = DiseaseParams {
                seed: a.seed,
                classes: a.classes,
                per_class: a.per_class,
                size: a.size.unwrap_or(DiseaseParams::default().size),
            };
            let m = synth::gen_disease_dataset(&p, &a.out)?;
            json!({ "kind": "disease", "entries": m.len(), "classes": p.classes, "size": p.size })
        }
    };
    Ok(Summary {
        seed: Some(a.seed),
        metrics,
    })
}

fn enhance_cmd(a: &EnhanceArgs) -> Result<Summary, CliError> {
    let enh = a.opts.enhancement()?;
    require_file(&a.input)?;
    let img = to_gray(&load_image(&a.input)?);
    make_parent(&a.out)?;
    enh.apply(&img)?.save_png(&a.out)?;
    Ok(Summary {
        seed: None,
        metrics: json!({ "width": img.width(), "height": img.height() }),
    })
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.json")
}

fn train_seg_cmd(a: &TrainSegArgs) -> Result<Summary, CliError> {
    require_dir(&a.data)?;
    let config = SegNetConfig {
        depth: a.depth,
        base_channels: a.base_channels,
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let data: Vec<SegSample> = load_sample_dir(&a.data)?.into_iter().map(|(_, s)| s).collect();
    let cfg = SegTrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        lr_late: a.lr_late,
        batch_size: a.batch_size,
        seed: derive_seed(a.seed, "segnet/train"),
        ..Default::default()
    };
    let net = SegNet::new(config, derive_seed(a.seed, "segnet/init"))?;
    let (mut net, history) = segment::train(net, &data, &cfg)?;
    net.round_to_f32();
    make_parent(&a.out)?;
    net.save(&a.out)?;
    write_json(&a.history.clone().unwrap_or_else(|| history_path(&a.out)), &history)?;
    Ok(Summary {
        seed: Some(a.seed),
        metrics: json!({
            "samples": data.len(),
            "epochs": a.epochs,
            "final_loss": history.epoch_loss.last(),
        }),
    })
}

fn segment_cmd(a: &SegmentArgs) -> Result<Summary, CliError> {
    require_file(&a.model)?;
    require_file(&a.input)?;
    let net = SegNet::load(&a.model)?;
    let img = to_gray(&load_image(&a.input)?);
    let (mask, prob) = predict_mask(&net, &img);
    make_parent(&a.out)?;
    mask.save_png(&a.out)?;
    if let Some(p) = &a.prob {
        make_parent(p)?;
        prob.save_png(p)?;
    }
    Ok(Summary {
        seed: None,
        metrics: json!({ "foreground_pixels": mask.foreground() }),
    })
}

fn train_cmd(a: &TrainArgs) -> Result<Summary, CliError> {
    require_file(&a.manifest)?;
    if let Some(p) = &a.seg_model {
        require_file(p)?;
    }
    if let Some(w) = a.hybrid_w {
        if !(0.0..=1.0).contains(&w) {
            return Err(CliError::usage(format!("--hybrid-w must lie in [0, 1], got {w}")));
        }
    }
    let enhancement = a.enhance.enhancement()?;
    let manifest = Manifest::load(&a.manifest)?;
    let net = match &a.seg_model {
        Some(p) => SegNet::load(p)?,
        None => {
            log::info!("training a segmentation network on {} synthetic vessel images", a.seg_count);
            let base = VesselParams {
                seed: derive_seed(a.seed, "train/vessels"),
                ..Default::default()
            };
            let data: Vec<SegSample> = synth::vessel_samples(&base, 0..a.seg_count)?
                .into_iter()
                .map(|(image, mask)| SegSample { image, mask })
                .collect();
            let cfg = SegTrainConfig {
                epochs: a.seg_epochs,
                seed: derive_seed(a.seed, "segnet/train"),
                ..Default::default()
            };
            let net = SegNet::new(SegNetConfig::default(), derive_seed(a.seed, "segnet/init"))?;
            let (mut net, _) = segment::train(net, &data, &cfg)?;
            net.round_to_f32();
            net
        }
    };
    let split = split_manifest(&manifest, a.seed, SplitRatios::default())?;
    let cfg = FusionConfig {
        dims: (a.size, a.size),
        enhancement,
        unet_input: match a.unet_input {
            UnetInputArg::Probability => UnetInput::Probability,
            UnetInputArg::Binary => UnetInput::Binary,
        },
        k_rgb: a.k_rgb,
        k_unet: a.k_unet,
        kernel: a.kernel.into(),
        svm: TrainParams {
            c: a.c,
            ..Default::default()
        },
        hybrid_w: a.hybrid_w,
        grid: a.grid.clone(),
        seed: a.seed,
    };
    let outcome = train_two_stream(&manifest, &split, net, &cfg)?;
    let chosen = outcome.model.hybrid_w;
    let sweep = outcome.sweep.clone();
    let bundle = Bundle {
        model: outcome.model,
        manifest_path: Some(a.manifest.clone()),
        split: Some(split),
        train_features: Some(outcome.train_features),
    };
    make_parent(&a.out)?;
    bundle.save(&a.out)?;
    Ok(Summary {
        seed: Some(a.seed),
        metrics: json!({
            "hybrid_w": chosen,
            "validation_sweep": sweep,
            "classes": bundle.model.classes.len(),
        }),
    })
}

fn predict_cmd(a: &PredictArgs) -> Result<Summary, CliError> {
    require_dir(&a.bundle)?;
    require_file(&a.input)?;
    let bundle = Bundle::load(&a.bundle)?;
    let (class, scores) = bundle.model.predict(&load_image(&a.input)?)?;
    let out = json!({
        "class_id": class,
        "label": bundle.model.classes[class],
        "scores": scores,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    if let Some(p) = &a.out {
        write_json(p, &out)?;
    }
    Ok(Summary {
        seed: None,
        metrics: out,
    })
}

/// Loads the manifest a bundle refers to (or the override) and checks it is
/// the one the bundle was trained on.
fn bundle_manifest(bundle: &Bundle, over: Option<&PathBuf>) -> Result<Manifest, CliError> {
    let path = over
        .or(bundle.manifest_path.as_ref())
        .ok_or_else(|| CliError::usage("the bundle records no manifest; pass --manifest"))?;
    require_file(path)?;
    let m = Manifest::load(path)?;
    if let Some(expected) = &bundle.model.manifest_checksum {
        if &m.checksum()? != expected {
            return Err(CliError::data(format!(
                "{} does not match the manifest the bundle was trained on",
                path.display()
            )));
        }
    }
    if m.class_index() != bundle.model.classes.as_slice() {
        return Err(CliError::data("manifest classes differ from the bundle's class list"));
    }
    Ok(m)
}

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_CURVE_POINTS {
        return points.to_vec();
    }
    let last = points.len() - 1;
    (0..MAX_CURVE_POINTS)
        .map(|i| points[i * last / (MAX_CURVE_POINTS - 1)])
        .collect()
}

fn curve_csv(x: &str, y: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("{x},{y}\n");
    for (a, b) in thin(points) {
        s.push_str(&format!("{a:.6},{b:.6}\n"));
    }
    s
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<Summary, CliError> {
    if let Some(b) = &a.bundle {
        require_dir(b)?;
        let bundle = Bundle::load(b)?;
        let manifest = bundle_manifest(&bundle, a.manifest.as_ref())?;
        let indices: Vec<usize> = match a.split {
            SplitArg::All => (0..manifest.len()).collect(),
            s => {
                let split = bundle
                    .split
                    .as_ref()
                    .filter(|_| a.manifest.is_none())
                    .ok_or_else(|| CliError::usage("a split needs the bundle's own manifest; use --split all"))?;
                match s {
                    SplitArg::Train => split.train.clone(),
                    SplitArg::Validation => split.validation.clone(),
                    _ => split.test.clone(),
                }
            }
        };
        if indices.is_empty() {
            return Err(CliError::data("the selected split is empty"));
        }
        let model = &bundle.model;
        let votes = model.votes(&model.features_for(&manifest, &indices)?)?;
        let preds = votes.predictions(model.hybrid_w)?;
        let cm = ConfusionMatrix::new(&preds, &votes.labels, model.n_classes())?;
        let report = json!({
            "kind": "classification",
            "split": format!("{:?}", a.split).to_lowercase(),
            "samples": indices.len(),
            "hybrid_w": model.hybrid_w,
            "accuracy": cm.accuracy(),
            "stream_clahe_accuracy": votes.accuracy(1.0)?,
            "stream_unet_accuracy": votes.accuracy(0.0)?,
            "classes": model.classes,
            "confusion": cm.counts,
        });
        write_json(&a.out, &report)?;
        let metrics = json!({
            "accuracy": report["accuracy"],
            "stream_clahe_accuracy": report["stream_clahe_accuracy"],
            "stream_unet_accuracy": report["stream_unet_accuracy"],
        });
        return Ok(Summary {
            seed: Some(model.seed),
            metrics,
        });
    }

    let (model, data) = match (&a.model, &a.data) {
        (Some(m), Some(d)) => (m, d),
        _ => return Err(CliError::usage("evaluate needs --bundle, or --model with --data")),
    };
    require_file(model)?;
    require_dir(data)?;
    let net = SegNet::load(model)?;
    let samples = load_sample_dir(data)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut jac = 0.0;
    let results: Vec<_> = {
        use rayon::prelude::*;
        samples.par_iter().map(|(_, s)| predict_mask(&net, &s.image)).collect()
    };
    for ((_, s), (mask, prob)) in samples.iter().zip(&results) {
        jac += metrics::jaccard(mask, &s.mask)?;
        scores.extend_from_slice(prob.pixels());
        labels.extend(s.mask.labels().iter().map(|&l| l == 1));
    }
    let roc = metrics::roc_auc(&scores, &labels)?;
    let pr = metrics::pr_curve(&scores, &labels)?;
    let report = json!({
        "kind": "segmentation",
        "images": samples.len(),
        "mean_jaccard": jac / samples.len() as f64,
        "roc_auc": roc.auc,
        "pr_auc": pr.auc,
        "pooling": "pixels pooled across images",
    });
    let stem = a
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    write_text(&dir.join(format!("{stem}_roc.csv")), &curve_csv("fpr", "tpr", &roc.points))?;
    write_text(&dir.join(format!("{stem}_pr.csv")), &curve_csv("recall", "precision", &pr.points))?;
    write_json(&a.out, &report)?;
    Ok(Summary {
        seed: None,
        metrics: report,
    })
}

fn sweep_cmd(a: &SweepArgs) -> Result<Summary, CliError> {
    require_dir(&a.bundle)?;
    let bundle = Bundle::load(&a.bundle)?;
    let manifest = bundle_manifest(&bundle, a.manifest.as_ref())?;
    let split = bundle
        .split
        .as_ref()
        .ok_or_else(|| CliError::data("bundle has no stored split"))?;
    let train = bundle
        .train_features
        .as_ref()
        .ok_or_else(|| CliError::data("bundle has no stored training features"))?;
    let model = &bundle.model;
    let val = model.features_for(&manifest, &split.validation)?;
    let test = model.features_for(&manifest, &split.test)?;
    let own = model.svm_rgb.kernel().kind;
    let mut rows = Vec::new();
    for &k in &a.kernels {
        let kind: KernelKind = k.into();
        let (va, ta) = if kind == own {
            (model.votes(&val)?, model.votes(&test)?)
        } else {
            let params = TrainParams {
                seed: 0,
                ..model.svm_rgb.params().clone()
            };
            let (sa, sb) = train_stream_svms(train, model.n_classes(), kind, &params, model.seed)?;
            (model.votes_with(&val, &sa, &sb)?, model.votes_with(&test, &sa, &sb)?)
        };
        let t = if test.is_empty() { None } else { Some(&ta) };
        rows.extend(sweep_ratio(kind, &va, t, &a.grid)?);
    }
    write_text(&a.out, &sweep_csv(&rows))?;
    let best = best_row(&rows).cloned();
    Ok(Summary {
        seed: Some(model.seed),
        metrics: json!({ "rows": rows.len(), "best": best }),
    })
}

fn plot_cmd(a: &PlotArgs) -> Result<Summary, CliError> {
    let mut outputs: Vec<(&str, String)> = Vec::new();
    if let Some(p) = &a.roc {
        let (x, y, pts) = plot::read_curve_csv(p)?;
        outputs.push(("roc.svg", plot::curve_svg("ROC curve", &x, &y, &pts, true)));
    }
    if let Some(p) = &a.pr {
        let (x, y, pts) = plot::read_curve_csv(p)?;
        outputs.push(("pr.svg", plot::curve_svg("Precision-recall curve", &x, &y, &pts, false)));
    }
    if let Some(p) = &a.loss {
        let text = fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        let h: TrainHistory =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: malformed history: {e}", p.display())))?;
        if h.epoch_loss.is_empty() {
            return Err(CliError::data(format!("{}: history has no epochs", p.display())));
        }
        outputs.push(("loss.svg", plot::loss_svg(&h)));
    }
    if let Some(p) = &a.sweep {
        outputs.push(("sweep.svg", plot::sweep_svg(&plot::read_sweep_csv(p)?)));
    }
    if outputs.is_empty() {
        return Err(CliError::usage("plot needs at least one of --roc, --pr, --loss, --sweep"));
    }
    for (name, svg) in &outputs {
        write_text(&a.out_dir.join(name), svg)?;
    }
    Ok(Summary {
        seed: None,
        metrics: json!({ "plots": outputs.iter().map(|o| o.0).collect::<Vec<_>>() }),
    })
}
