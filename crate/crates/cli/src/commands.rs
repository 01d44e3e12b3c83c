use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lidarprop::classify::{load_model, predict, read_dataset, save_model, train as train_model, write_dataset, ClassifierModel, Sample};
use lidarprop::eval::{benchmark, classification_metrics, evaluate_recall};
use lidarprop::filter::fit_min_points_curve;
use lidarprop::ingest::{object_samples, Frame, ObjectClass};
use lidarprop::pipeline::{classify_kept, curve_samples, labelled_proposals, run_frame, FrameResult};
use lidarprop::tune::tune_segmentation;

use crate::bev::{self, View};
use crate::data::{file_digest, text_digest, DataArgs, InputDigest, Source};
use crate::manifest::Manifest;
use crate::settings::{self, Settings};
use crate::{BenchArgs, Common, DetectArgs, EvalArgs, TrainArgs, TuneArgs};

/// Config file, then `--set`, then the subcommand's own flags.
fn settings(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<Settings> {
    let mut overrides = common.set.clone();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    };
    push("seed", common.seed.map(|s| s.to_string()));
    push("threads", common.threads.map(|t| t.to_string()));
    for (k, v) in flags {
        push(k, v);
    }
    let kv = settings::merge(common.config.as_deref(), &overrides)?;
    Settings::from_kv(&kv)
}

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|v| v.to_string())
}

fn path_flag(v: &Option<std::path::PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn init_threads(threads: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        warn!("thread pool already initialised: {e}");
    }
}

fn start(command: &str, s: &Settings, out: &Path, mut inputs: Vec<InputDigest>, extra: &[&Path]) -> Result<()> {
    for p in extra {
        inputs.push(file_digest(p)?);
    }
    Manifest::new(command, s, inputs).write(out, s)?;
    info!("{command}: manifest written to {}", out.join("manifest.json").display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn labelled_frames(data: &DataArgs, s: &Settings) -> Result<(Source, Vec<InputDigest>)> {
    let source = data.source(s.seed)?;
    if !source.labelled {
        bail!("this command needs labelled frames: pass --kitti DIR or --synthetic N");
    }
    let digests = source.digests()?;
    Ok((source, digests))
}

struct FrameSummary {
    id: String,
    points: usize,
    non_ground: usize,
    proposals: usize,
    kept: usize,
    per_class: [usize; ObjectClass::COUNT],
    times: [f64; 4],
}

fn write_detections(result: &FrameResult, classified: bool, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "proposal_id", "class", "probability", "min_x", "min_y", "min_z", "max_x", "max_y", "max_z", "points", "occluded",
    ])?;
    for p in &result.kept {
        let (class, prob) = match p.class() {
            Some((c, pr)) if classified => (c.name().to_string(), format!("{pr:.6}")),
            _ => ("unclassified".to_string(), String::new()),
        };
        let mut row = vec![p.id.to_string(), class, prob];
        row.extend(p.bbox.min.iter().chain(&p.bbox.max).map(|v| format!("{v:.4}")));
        row.push(p.len().to_string());
        row.push(p.occluded.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<ExitCode> {
    let s = settings(&a.common, vec![("model", path_flag(&a.model))])?;
    init_threads(s.threads);
    let out = &a.common.output;
    let source = a.data.source(s.seed)?;
    let model_path = if a.no_classify {
        None
    } else {
        Some(s.model.clone().context("classification needs a model: pass --model FILE or --no-classify")?)
    };
    let extra: Vec<&Path> = model_path.iter().map(|p| p.as_path()).collect();
    start("detect", &s, out, source.digests()?, &extra)?;
    let model = model_path.as_ref().map(load_model).transpose()?;

    let det_dir = out.join("detections");
    std::fs::create_dir_all(&det_dir)?;
    let bev_dir = out.join("bev");
    if a.bev {
        std::fs::create_dir_all(&bev_dir)?;
    }
    let view = View {
        x_range: (s.pipeline.ground.origin[0], s.pipeline.ground.origin[0] + s.pipeline.ground.length),
        y_range: (s.pipeline.ground.origin[1], s.pipeline.ground.origin[1] + s.pipeline.ground.width),
        pixels_per_metre: a.bev_scale,
    };

    let process = |i: usize, item: &crate::data::Item| -> Result<FrameSummary> {
        let frame = source.load(item, s.rings)?;
        let mut r = run_frame(&frame.cloud, &s.pipeline)?;
        if let Some(m) = &model {
            classify_kept(&mut r, m, s.seed.wrapping_add(i as u64))?;
        }
        write_detections(&r, model.is_some(), &det_dir.join(format!("{}.csv", frame.id)))?;
        if a.bev {
            bev::save(&frame.cloud, &r, &view, &bev_dir.join(format!("{}.png", frame.id)))?;
        }
        let mut per_class = [0; ObjectClass::COUNT];
        for p in &r.kept {
            if let Some((c, _)) = p.class() {
                per_class[c.index()] += 1;
            }
        }
        Ok(FrameSummary {
            id: frame.id,
            points: frame.cloud.len(),
            non_ground: r.cloud.len(),
            proposals: r.proposals.len(),
            kept: r.kept.len(),
            per_class,
            times: [r.times.ground, r.times.cluster, r.times.filter, r.times.classify],
        })
    };
    let results: Vec<Result<FrameSummary>> =
        source.items.par_iter().enumerate().map(|(i, item)| process(i, item)).collect();

    let mut w = csv_writer(&out.join("summary.csv"))?;
    let mut header = vec!["frame", "status", "points", "non_ground", "proposals", "kept"];
    header.extend(ObjectClass::ALL.iter().map(|c| c.name()));
    header.extend(["ground_s", "cluster_s", "filter_s", "classify_s", "error"]);
    w.write_record(&header)?;
    let mut failed = 0;
    for (item, r) in source.items.iter().zip(&results) {
        match r {
            Ok(f) => {
                let mut row = vec![f.id.clone(), "ok".into()];
                row.extend([f.points, f.non_ground, f.proposals, f.kept].map(|v| v.to_string()));
                row.extend(f.per_class.iter().map(|v| v.to_string()));
                row.extend(f.times.iter().map(|t| format!("{t:.6}")));
                row.push(String::new());
                w.write_record(&row)?;
            }
            Err(e) => {
                failed += 1;
                log::error!("frame {}: {e:#}", item.id());
                let mut row = vec![item.id(), "failed".into()];
                row.extend(std::iter::repeat_n(String::new(), 4 + ObjectClass::COUNT + 4));
                row.push(format!("{e:#}"));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    let kept: usize = results.iter().flatten().map(|f| f.kept).sum();
    info!("detect: {} frames, {kept} proposals kept, {failed} failed", results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn tune(a: TuneArgs) -> Result<ExitCode> {
    let s = settings(
        &a.common,
        vec![("particles", some(&a.particles)), ("generations", some(&a.generations)), ("iou", some(&a.iou))],
    )?;
    init_threads(s.threads);
    let out = &a.common.output;
    let (source, digests) = labelled_frames(&a.data, &s)?;
    start("tune", &s, out, digests, &[])?;
    let frames = source.load_all(s.rings)?;
    info!(
        "tune: {} frames, {} particles x {} generations",
        frames.len(),
        s.pso.particles,
        s.pso.generations
    );
    let result = tune_segmentation(&frames, &s.pipeline, &s.pso, s.iou)?;
    result.write_history_csv(File::create(out.join("history.csv"))?, &["h_d", "v_d", "d_o"])?;

    let mut tuned = s.clone();
    let [h_d, v_d, d_o] = result.best_position[..] else { unreachable!("three search dimensions") };
    tuned.pipeline.cluster.h_d = h_d;
    tuned.pipeline.cluster.v_d = v_d;
    tuned.pipeline.d_o = d_o;
    if !a.no_curve {
        let fitted = curve_samples(&frames, &tuned.pipeline)
            .and_then(|samples| fit_min_points_curve(&samples, tuned.curve_bin));
        match fitted {
            Ok(c) => {
                info!("tune: minimum-points curve a = {:.3}, k = {:.5}", c.a, c.k);
                c.save(out.join("curve.txt"))?;
                tuned.pipeline.filter.curve = Some(c);
            }
            Err(e) => warn!("tune: no minimum-points curve fitted: {e}"),
        }
    }
    std::fs::write(out.join("tuned.conf"), tuned.to_kv().to_text())?;
    info!("tune: best recall {:.4} at h_d {h_d:.4}, v_d {v_d:.4}, d_o {d_o:.4}", result.best_fitness);
    Ok(ExitCode::SUCCESS)
}

/// Deterministic split of `samples` into (train, validation).
fn split(mut samples: Vec<Sample>, fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let n_val = (samples.len() as f64 * fraction).round() as usize;
    if n_val == 0 {
        return (samples, Vec::new());
    }
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = samples.split_off(samples.len() - n_val);
    (samples, val)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let s = settings(&a.common, vec![("epochs", some(&a.epochs))])?;
    init_threads(s.threads);
    let out = &a.common.output;
    let chosen = [a.dataset.is_some(), a.samples.is_some(), !a.data.is_empty()];
    if chosen.iter().filter(|&&c| c).count() != 1 {
        bail!("pass exactly one training source: --dataset FILE, --samples N, or labelled frames (--kitti/--synthetic)");
    }
    let mut digests = Vec::new();
    let mut files: Vec<&Path> = a.dataset.iter().chain(&a.validation).map(|p| p.as_path()).collect();
    let source = if a.data.is_empty() {
        None
    } else {
        let (src, d) = labelled_frames(&a.data, &s)?;
        digests = d;
        Some(src)
    };
    if let Some(n) = a.samples {
        digests.push(text_digest(format!("synthetic-objects:{n}"), &format!("object_samples {n} seed {}", s.seed)));
    }
    files.dedup();
    start("train", &s, out, digests, &files)?;

    let samples = if let Some(p) = &a.dataset {
        read_dataset(p)?
    } else if let Some(n) = a.samples {
        let mut v = Vec::new();
        for (k, &c) in ObjectClass::ALL.iter().enumerate() {
            for points in object_samples(c, n, s.seed.wrapping_add(k as u64))? {
                v.push(Sample { points, label: c });
            }
        }
        v
    } else {
        let frames = source.expect("frame source").load_all(s.rings)?;
        labelled_proposals(&frames, &s.pipeline, s.iou)?
    };
    if a.save_dataset {
        write_dataset(&samples, out.join("dataset.bin"))?;
    }
    let (train_set, mut validation) = split(samples, s.validation_split, s.seed);
    if let Some(p) = &a.validation {
        validation.extend(read_dataset(p)?);
    }
    let mut counts = [0usize; ObjectClass::COUNT];
    for x in &train_set {
        counts[x.label.index()] += 1;
    }
    info!("train: {} samples {:?}, {} for validation", train_set.len(), counts, validation.len());

    let mut model = ClassifierModel::new(&s.classifier, s.seed)?;
    let report = train_model(&mut model, &train_set, &validation, &s.training)?;
    save_model(&model, out.join("model.bin"))?;
    let mut w = csv_writer(&out.join("training.csv"))?;
    w.write_record(["epoch", "steps", "loss", "train_accuracy", "validation_accuracy"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.steps.to_string(),
            format!("{:.6}", e.loss),
            format!("{:.6}", e.train_accuracy),
            e.validation_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    if let Some(e) = report.epochs.last() {
        info!("train: {} epochs, loss {:.4}, train accuracy {:.4}", report.epochs.len(), e.loss, e.train_accuracy);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let s = settings(&a.common, vec![("iou", some(&a.iou)), ("model", path_flag(&a.model))])?;
    init_threads(s.threads);
    let out = &a.common.output;
    if a.data.is_empty() && a.dataset.is_none() {
        bail!("nothing to evaluate: pass labelled frames (--kitti/--synthetic) or --dataset FILE");
    }
    if a.dataset.is_some() && s.model.is_none() {
        bail!("--dataset needs a model to score");
    }
    let (source, digests) = if a.data.is_empty() { (None, Vec::new()) } else {
        let (src, d) = labelled_frames(&a.data, &s)?;
        (Some(src), d)
    };
    let files: Vec<&Path> = s.model.iter().chain(&a.dataset).map(|p| p.as_path()).collect();
    start("eval", &s, out, digests, &files)?;
    let model = s.model.as_ref().map(load_model).transpose()?;

    let frames: Vec<Frame> = match &source {
        Some(src) => src.load_all(s.rings)?,
        None => Vec::new(),
    };
    if !frames.is_empty() {
        let report = evaluate_recall(&frames, &s.pipeline, s.iou)?;
        report.write_csv(File::create(out.join("recall.csv"))?)?;
        info!(
            "eval: recall {:.4} ({} of {}), {:.2} proposals per frame",
            report.recall,
            report.true_positives,
            report.true_positives + report.false_negatives,
            report.proposal_count_mean
        );
        if s.pipeline.filtering {
            let raw = lidarprop::pipeline::PipelineParams { filtering: false, ..s.pipeline.clone() };
            let unfiltered = evaluate_recall(&frames, &raw, s.iou)?;
            unfiltered.write_csv(File::create(out.join("recall_unfiltered.csv"))?)?;
            info!(
                "eval: without filtering recall {:.4}, {:.2} proposals per frame",
                unfiltered.recall, unfiltered.proposal_count_mean
            );
        }
    }
    if let Some(m) = &model {
        let samples = match &a.dataset {
            Some(p) => read_dataset(p)?,
            None => labelled_proposals(&frames, &s.pipeline, s.iou)?,
        };
        if samples.is_empty() {
            bail!("no samples to classify");
        }
        let points: Vec<&[lidarprop::Point3]> = samples.iter().map(|x| x.points.as_slice()).collect();
        let preds = predict(m, &points, s.seed)?;
        let probs: Vec<_> = preds.iter().map(|p| p.probs).collect();
        let labels: Vec<_> = samples.iter().map(|x| x.label).collect();
        let metrics = classification_metrics(&probs, &labels)?;
        metrics.write_summary_csv(File::create(out.join("classification.csv"))?)?;
        metrics.write_curves_csv(File::create(out.join("curves.csv"))?)?;
        if !metrics.absent.is_empty() {
            warn!("eval: no samples of {:?}; their AP is undefined", metrics.absent);
        }
        info!(
            "eval: accuracy {:.4}, mAP {} over {} samples",
            metrics.accuracy,
            metrics.map.map_or("undefined".into(), |m| format!("{m:.4}")),
            samples.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let s = settings(&a.common, vec![("model", path_flag(&a.model)), ("warmup", some(&a.warmup))])?;
    // Timing is single-threaded unless asked otherwise.
    let threads = if s.threads == 0 { 1 } else { s.threads };
    let out = &a.common.output;
    let source = a.data.source(s.seed)?;
    let s = Settings { threads, ..s };
    let files: Vec<&Path> = s.model.iter().map(|p| p.as_path()).collect();
    start("bench", &s, out, source.digests()?, &files)?;
    let model = s.model.as_ref().map(load_model).transpose()?;
    let frames = source.load_all(s.rings)?;
    let report = benchmark(&frames, &s.pipeline, model.as_ref(), threads, s.warmup)?;
    report.write_csv(File::create(out.join("timing.csv"))?)?;
    info!(
        "bench: {} frames on {threads} thread(s): ground {:.2} ms, cluster {:.2} ms, filter {:.2} ms, classify {:.2} ms, total {:.2} ms",
        report.frames,
        1e3 * report.mean.ground,
        1e3 * report.mean.cluster,
        1e3 * report.mean.filter,
        1e3 * report.mean.classify,
        1e3 * report.end_to_end
    );
    Ok(ExitCode::SUCCESS)
}
