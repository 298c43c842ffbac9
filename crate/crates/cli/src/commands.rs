use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jointscore::config::RunConfig;
use jointscore::dataset::{index_annotated, read_scores, split_by, write_synthetic_dataset, AnnotatedRecord, ScoreRow};
use jointscore::error::{Error, Result};
use jointscore::mask::apply_mask;
use jointscore::metrics::compare_score_tables;
use jointscore::ordinal::Task;
use jointscore::pipeline::{checkpoint_path, run_pipeline, select_mask, ModelSet, PipelineOptions};
use jointscore::preprocess::preprocess;
use jointscore::raster::{load_gray, LimbKind, LimbType};
use jointscore::report::{write_report, RunManifest};
use jointscore::training::{
    eval_detector, eval_scorer, eval_unet, extract_all, fit_detector, fit_scorers, fit_unet, task_crops, Extracted,
    Extras,
};
use jointscore_nn::{Checkpoint, TrainHistory};
use serde_json::json;

use crate::{Cli, Command, Common, Model};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.set_seed(seed);
    }
    let c = &cli.common;
    match cli.command {
        Command::Synth { patients } => synth(c, cfg, patients),
        Command::Preprocess { images } => preprocess_images(c, &images),
        Command::Mask { images, models } => mask_images(c, &images, models.as_deref()),
        Command::Train { what, data, models } => train(c, &cfg, what, &data, models.as_deref().unwrap_or(&c.out)),
        Command::Score { images, models } => score(c, &cfg, &images, &models),
        Command::Eval { truth, pred } => eval(c, &cfg, &truth, &pred),
    }
}

fn synth(c: &Common, mut cfg: RunConfig, patients: Option<usize>) -> Result<()> {
    if let Some(n) = patients {
        cfg.synth.patients = n;
    }
    let n = write_synthetic_dataset(&cfg.synth, &c.out)?;
    println!("wrote {n} images to {}", c.out.display());
    Ok(())
}

fn require_inputs(images: &[PathBuf]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no input images given".into()));
    }
    Ok(())
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::InvalidArgument(format!("no file name in {}", path.display())))
}

/// `--limb`, or the `-LH|-RH|-LF|-RF` suffix of the file name.
fn limb_of(flag: Option<LimbKind>, path: &Path) -> Result<LimbKind> {
    if let Some(l) = flag {
        return Ok(l);
    }
    let s = stem(path)?;
    s.rsplit_once('-')
        .and_then(|(_, code)| code.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("cannot tell the limb of {}; pass --limb", path.display())))
}

fn preprocess_images(c: &Common, images: &[PathBuf]) -> Result<()> {
    require_inputs(images)?;
    fs::create_dir_all(&c.out)?;
    for path in images {
        let limb = limb_of(c.limb, path)?;
        let pre = preprocess(&load_gray(path)?, limb)?;
        let out = c.out.join(format!("{}.pre.png", stem(path)?));
        pre.image.save_png(&out)?;
        println!("{} -> {}", path.display(), out.display());
    }
    Ok(())
}

fn mask_images(c: &Common, images: &[PathBuf], models: Option<&Path>) -> Result<()> {
    require_inputs(images)?;
    let models = match models {
        Some(dir) => ModelSet::load_dir(dir)?,
        None => ModelSet::default(),
    };
    fs::create_dir_all(&c.out)?;
    for path in images {
        let limb = limb_of(c.limb, path)?;
        let pre = preprocess(&load_gray(path)?, limb)?;
        let (mask, source) = select_mask(&pre, models.unets.get(&limb.limb_type()))?;
        let s = stem(path)?;
        mask.save_png(&c.out.join(format!("{s}.mask.png")))?;
        apply_mask(&pre.image, &mask)?.save_png(&c.out.join(format!("{s}.masked.png")))?;
        println!(
            "{}: {} mask, coverage {:.3}",
            path.display(),
            source.name(),
            mask.coverage()
        );
    }
    Ok(())
}

fn history_json(h: &TrainHistory) -> serde_json::Value {
    json!({
        "epochs_run": h.epochs_run(),
        "best_epoch": h.best_epoch,
        "stopped_early": h.stopped_early,
        "train_loss": h.train_loss,
        "val_loss": h.val_loss,
    })
}

fn save(ck: &Checkpoint, models: &Path, summary: serde_json::Value) -> Result<()> {
    fs::create_dir_all(models)?;
    let path = checkpoint_path(models, &ck.tag);
    ck.save(&path)?;
    let summary_path = models.join(format!("{}.train.json", ck.tag));
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("json"))?;
    println!("saved {} ({})", path.display(), &ck.identity()[..12]);
    Ok(())
}

fn train(c: &Common, cfg: &RunConfig, what: Model, data: &Path, models: &Path) -> Result<()> {
    let (records, warnings) = index_annotated(data, &cfg.plan.scales)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut by_type: BTreeMap<LimbType, Vec<AnnotatedRecord>> = BTreeMap::new();
    for r in records {
        let lt = c.limb.map(LimbKind::limb_type);
        if lt.is_none_or(|lt| lt == r.record.row.limb.limb_type()) {
            by_type.entry(r.record.row.limb.limb_type()).or_default().push(r);
        }
    }
    if by_type.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable images in {}",
            data.display()
        )));
    }
    for (lt, records) in by_type {
        let split = split_by(&records, |r| r.record.row.patient_id.clone(), &cfg.split)?;
        let train_recs: Vec<&AnnotatedRecord> = split.train.iter().chain(&split.val).collect();
        let extras = Extras {
            unet_sample: what == Model::Unet,
            segmentation: false,
        };
        let t = Instant::now();
        let train_set = extract_all(train_recs.iter().map(|r| r.load()), &cfg.plan, extras)?;
        let test_set = extract_all(
            split.test.iter().map(AnnotatedRecord::load),
            &cfg.plan,
            Extras {
                unet_sample: false,
                segmentation: what == Model::Unet,
            },
        )?;
        println!(
            "{}: {} training and {} test images prepared in {:.1} s",
            lt.name(),
            train_set.len(),
            test_set.len(),
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        match what {
            Model::Unet => train_unet_for(cfg, lt, &train_set, &test_set, models)?,
            Model::Detector => train_detector_for(cfg, lt, &train_set, &test_set, models)?,
            Model::Scorer => train_scorers_for(cfg, lt, &train_set, &test_set, models)?,
        }
        println!("{}: trained in {:.1} s", lt.name(), t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn train_unet_for(cfg: &RunConfig, lt: LimbType, train: &[Extracted], test: &[Extracted], models: &Path) -> Result<()> {
    let (net, h, n) = fit_unet(train, &cfg.plan)?;
    let iou = if test.is_empty() {
        None
    } else {
        Some(eval_unet(&net, test)?)
    };
    if let Some((mean, min)) = iou {
        println!(
            "{}: u-net on {n} curated masks, test IoU mean {mean:.4} min {min:.4}",
            lt.name()
        );
    }
    let summary = json!({ "samples": n, "history": history_json(&h), "test_iou": iou.map(|v| v.0) });
    save(&net.to_checkpoint(lt, cfg.seed), models, summary)
}

fn train_detector_for(
    cfg: &RunConfig,
    lt: LimbType,
    train: &[Extracted],
    test: &[Extracted],
    models: &Path,
) -> Result<()> {
    let (det, h) = fit_detector(train, &cfg.plan)?;
    let ev = eval_detector(&det, test)?;
    println!(
        "{}: detector recall {:.4}, combined accuracy {:.4}, primary identity {:.4}, paths {:?}",
        lt.name(),
        ev.recall(),
        ev.combined_accuracy(),
        ev.primary_identity_accuracy(),
        ev.paths
    );
    let summary = json!({
        "history": history_json(&h),
        "test": ev,
        "recall": ev.recall(),
        "combined_accuracy": ev.combined_accuracy(),
    });
    save(&det.to_checkpoint(lt, cfg.seed), models, summary)
}

fn train_scorers_for(
    cfg: &RunConfig,
    lt: LimbType,
    train: &[Extracted],
    test: &[Extracted],
    models: &Path,
) -> Result<()> {
    let fitted = fit_scorers(train, &cfg.plan)?;
    for (task, (sc, h)) in Task::ALL.into_iter().zip(&fitted.scorers) {
        let ev = eval_scorer(sc, &task_crops(test, task))?;
        println!(
            "{} {}: balanced accuracy {:.4}, within one {:.4}",
            lt.name(),
            task.name(),
            ev.exact,
            ev.within_one
        );
        let summary = json!({
            "pretext": history_json(&fitted.pretext),
            "history": history_json(h),
            "trainable_parameters": sc.trainable_count(),
            "total_parameters": sc.total_count(),
            "test_balanced_accuracy": ev.exact,
            "test_within_one": ev.within_one,
            "confusion": ev.confusion.to_csv(),
        });
        save(&sc.to_checkpoint(cfg.seed), models, summary)?;
    }
    Ok(())
}

fn score(c: &Common, cfg: &RunConfig, images: &[PathBuf], models: &Path) -> Result<()> {
    require_inputs(images)?;
    let set = ModelSet::load_dir(models)?;
    let opts = PipelineOptions {
        deterministic: c.deterministic,
    };
    let mut manifest = RunManifest::new(cfg.seed, c.deterministic);
    manifest.checkpoints = set.identities.clone();
    manifest.config = cfg.entries.clone();
    for path in images {
        let limb = limb_of(c.limb, path)?;
        let img = load_gray(path)?;
        let report = run_pipeline(&img, &stem(path)?, limb, &set, &opts)?;
        write_report(&report, &img, &c.out)?;
        manifest.add_report(&report);
        let s = &report.sheet;
        println!(
            "{}: {} joints ({} path, {} mask), narrowing {}, erosion {}, total {}",
            report.image_id,
            report.joints.len(),
            report.identify_path.name(),
            report.mask_source.name(),
            s.total_narrowing,
            s.total_erosion,
            s.overall_total
        );
    }
    manifest.write(&c.out)?;
    Ok(())
}

fn read_score_file(path: &Path, cfg: &RunConfig) -> Result<Vec<ScoreRow>> {
    let f = fs::File::open(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    read_scores(f, &cfg.plan.scales)
}

fn eval(c: &Common, cfg: &RunConfig, truth: &Path, pred: &Path) -> Result<()> {
    let truth_rows = read_score_file(truth, cfg)?;
    let mut pred_rows = Vec::new();
    if pred.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(pred)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".scores.csv"))
            .collect();
        files.sort();
        for f in files {
            pred_rows.extend(read_score_file(&f, cfg)?);
        }
    } else {
        pred_rows = read_score_file(pred, cfg)?;
    }
    let cmp = compare_score_tables(&truth_rows, &pred_rows, &cfg.plan.scales)?;
    if cmp.images == 0 {
        return Err(Error::InvalidArgument("no predicted image matches a truth row".into()));
    }
    for t in &cmp.tasks {
        println!(
            "{} {}: {} joints, balanced accuracy {:.4}, within one {:.4}",
            t.limb.name(),
            t.task.name(),
            t.joints,
            t.exact,
            t.within_one
        );
    }
    println!(
        "{} images, mean absolute total error {:.3}",
        cmp.images, cmp.mean_total_error
    );
    fs::create_dir_all(&c.out)?;
    fs::write(
        c.out.join("eval.json"),
        serde_json::to_string_pretty(&cmp).expect("json"),
    )?;
    Ok(())
}
