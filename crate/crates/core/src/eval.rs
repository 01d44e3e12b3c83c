//! Proposal recall, classification metrics and stage timing.

use std::io::Write;

use rayon::prelude::*;

use crate::classify::ClassifierModel;
use crate::error::{Error, Result};
use crate::geom::Box3D;
use crate::ingest::{Frame, ObjectClass};
use crate::pipeline::{classify_kept, run_frame, PipelineParams, StageTimes};

/// Intersection over union of two axis-aligned boxes; 0 when the union has
/// no volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// One-to-one matching of ground-truth boxes to proposals, taking pairs in
/// order of decreasing IoU. Only pairs with IoU at or above `threshold`
/// (and above zero) match. Returns the matched proposal per ground truth.
pub fn greedy_match(gt: &[Box3D], proposals: &[Box3D], threshold: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (g, gb) in gt.iter().enumerate() {
        for (p, pb) in proposals.iter().enumerate() {
            let iou = iou_3d(gb, pb);
            if iou > 0.0 && iou >= threshold {
                pairs.push((iou, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = vec![None; gt.len()];
    let mut used = vec![false; proposals.len()];
    for (_, g, p) in pairs {
        if matched[g].is_none() && !used[p] {
            matched[g] = Some(p);
            used[p] = true;
        }
    }
    matched
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecall {
    pub id: String,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub proposals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub recall: f64,
    /// Mean proposals per frame over the whole set.
    pub proposal_count_mean: f64,
    pub frames: Vec<FrameRecall>,
}

impl RecallReport {
    pub fn from_frames(frames: Vec<FrameRecall>) -> Result<Self> {
        let tp: usize = frames.iter().map(|f| f.true_positives).sum();
        let fn_: usize = frames.iter().map(|f| f.false_negatives).sum();
        if tp + fn_ == 0 {
            return Err(Error::NoGroundTruth);
        }
        let proposals: usize = frames.iter().map(|f| f.proposals).sum();
        Ok(Self {
            true_positives: tp,
            false_negatives: fn_,
            recall: tp as f64 / (tp + fn_) as f64,
            proposal_count_mean: proposals as f64 / frames.len() as f64,
            frames,
        })
    }

    /// Per-frame rows followed by a `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "true_positives", "false_negatives", "proposals", "recall"])?;
        for f in &self.frames {
            let n = f.true_positives + f.false_negatives;
            let r = if n == 0 { String::new() } else { format!("{:.6}", f.true_positives as f64 / n as f64) };
            w.write_record([f.id.clone(), f.true_positives.to_string(), f.false_negatives.to_string(), f.proposals.to_string(), r])?;
        }
        w.write_record([
            "total".to_string(),
            self.true_positives.to_string(),
            self.false_negatives.to_string(),
            format!("{:.3}", self.proposal_count_mean),
            format!("{:.6}", self.recall),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Runs the proposal pipeline on every frame and scores the kept proposals
/// against the object-class ground truth.
pub fn evaluate_recall(frames: &[Frame], params: &PipelineParams, iou_threshold: f64) -> Result<RecallReport> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Config(format!("IoU threshold must lie in (0, 1), got {iou_threshold}")));
    }
    if frames.iter().all(|f| f.targets().next().is_none()) {
        return Err(Error::NoGroundTruth);
    }
    let rows = frames
        .par_iter()
        .map(|f| {
            let result = run_frame(&f.cloud, params)?;
            let gt: Vec<Box3D> = f.targets().map(|o| o.bbox).collect();
            let boxes: Vec<Box3D> = result.kept.iter().map(|p| p.bbox).collect();
            let tp = greedy_match(&gt, &boxes, iou_threshold).iter().flatten().count();
            Ok(FrameRecall { id: f.id.clone(), true_positives: tp, false_negatives: gt.len() - tp, proposals: boxes.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    RecallReport::from_frames(rows)
}

/// `(false positive rate, true positive rate)` points from a threshold sweep
/// over the distinct scores, starting at `(0, 0)` and ending at `(1, 1)`.
/// `None` unless both outcomes occur.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<Vec<(f64, f64)>> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut pts = vec![(0.0, 0.0)];
    sweep(scores, positive, |tp, fp| pts.push((fp as f64 / n as f64, tp as f64 / p as f64)));
    Some(pts)
}

/// `(recall, precision)` points from a threshold sweep, preceded by the
/// first point's precision at recall 0. `None` without positives.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Option<Vec<(f64, f64)>> {
    let p = positive.iter().filter(|&&b| b).count();
    if p == 0 {
        return None;
    }
    let mut pts = Vec::new();
    sweep(scores, positive, |tp, fp| pts.push((tp as f64 / p as f64, tp as f64 / (tp + fp) as f64)));
    pts.insert(0, (0.0, pts[0].1));
    Some(pts)
}

/// Calls `emit(tp, fp)` after each group of equal scores, highest first.
fn sweep(scores: &[f64], positive: &[bool], mut emit: impl FnMut(usize, usize)) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        if order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]) {
            emit(tp, fp);
        }
    }
}

/// Trapezoid area under a curve whose points are ordered by x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCurves {
    pub class: ObjectClass,
    pub roc: Option<Vec<(f64, f64)>>,
    pub prc: Option<Vec<(f64, f64)>>,
    pub roc_auc: Option<f64>,
    /// Area under the precision-recall curve; `None` when the class has no
    /// labelled samples.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassCurves>,
    /// Mean AP over the object classes that occur in the labels.
    pub map: Option<f64>,
    /// Object classes left out of the mean for lack of samples.
    pub absent: Vec<ObjectClass>,
}

impl ClassificationMetrics {
    /// `class,curve,x,y` rows for every ROC and PRC point.
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "curve", "x", "y"])?;
        for c in &self.per_class {
            for (name, pts) in [("roc", &c.roc), ("prc", &c.prc)] {
                for (x, y) in pts.iter().flatten() {
                    w.write_record([c.class.name(), name, &format!("{x:.6}"), &format!("{y:.6}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `class,ap,roc_auc` rows, then `accuracy` and `map`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "class", "value"])?;
        w.write_record(["accuracy", "", &format!("{:.6}", self.accuracy)])?;
        w.write_record(["map", "", &opt(self.map)])?;
        for c in &self.per_class {
            w.write_record(["ap", c.class.name(), &opt(c.ap)])?;
            w.write_record(["roc_auc", c.class.name(), &opt(c.roc_auc)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accuracy of the argmax class plus one-vs-rest ROC and precision-recall
/// curves for every class.
pub fn classification_metrics(probs: &[[f64; ObjectClass::COUNT]], labels: &[ObjectClass]) -> Result<ClassificationMetrics> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Config(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let argmax = |p: &[f64; ObjectClass::COUNT]| {
        p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty")
    };
    let correct = probs.iter().zip(labels).filter(|(p, l)| argmax(p) == l.index()).count();
    let per_class: Vec<ClassCurves> = ObjectClass::ALL
        .iter()
        .map(|&class| {
            let scores: Vec<f64> = probs.iter().map(|p| p[class.index()]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            let roc = roc_curve(&scores, &positive);
            let prc = pr_curve(&scores, &positive);
            ClassCurves {
                class,
                roc_auc: roc.as_deref().map(trapezoid_area),
                ap: prc.as_deref().map(trapezoid_area),
                roc,
                prc,
            }
        })
        .collect();
    let objects: Vec<&ClassCurves> = per_class.iter().filter(|c| c.class.is_object()).collect();
    let aps: Vec<f64> = objects.iter().filter_map(|c| c.ap).collect();
    let absent = objects.iter().filter(|c| c.ap.is_none()).map(|c| c.class).collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / probs.len() as f64,
        map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        per_class,
        absent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    /// Mean seconds per measured frame.
    pub mean: StageTimes,
    /// Mean wall-clock seconds of the whole per-frame pipeline.
    pub end_to_end: f64,
    pub frames: usize,
    pub warmup: usize,
    pub threads: usize,
    pub mean_points: f64,
    pub mean_proposals: f64,
}

impl TimingReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "mean_seconds"])?;
        let m = &self.mean;
        for (name, v) in [
            ("ground", m.ground),
            ("cluster", m.cluster),
            ("ground_and_cluster", m.ground + m.cluster),
            ("filter", m.filter),
            ("classify", m.classify),
            ("end_to_end", self.end_to_end),
        ] {
            w.write_record([name, &format!("{v:.6}")])?;
        }
        w.write_record(["frames", &self.frames.to_string()])?;
        w.write_record(["warmup", &self.warmup.to_string()])?;
        w.write_record(["threads", &self.threads.to_string()])?;
        w.write_record(["mean_points", &format!("{:.1}", self.mean_points)])?;
        w.write_record(["mean_proposals", &format!("{:.2}", self.mean_proposals)])?;
        w.flush()?;
        Ok(())
    }
}

/// Times the pipeline frame by frame on a dedicated pool of `threads`
/// workers. The first `warmup` frames run but are not measured.
pub fn benchmark(
    frames: &[Frame],
    params: &PipelineParams,
    model: Option<&ClassifierModel>,
    threads: usize,
    warmup: usize,
) -> Result<TimingReport> {
    if frames.len() <= warmup {
        return Err(Error::NoMeasuredFrames(warmup));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    pool.install(|| {
        let mut sum = StageTimes::default();
        let (mut end_to_end, mut points, mut proposals) = (0.0, 0usize, 0usize);
        for (i, f) in frames.iter().enumerate() {
            let t0 = std::time::Instant::now();
            let mut r = run_frame(&f.cloud, params)?;
            if let Some(m) = model {
                classify_kept(&mut r, m, i as u64)?;
            }
            let elapsed = t0.elapsed().as_secs_f64();
            if i < warmup {
                continue;
            }
            end_to_end += elapsed;
            sum.ground += r.times.ground;
            sum.cluster += r.times.cluster;
            sum.filter += r.times.filter;
            sum.classify += r.times.classify;
            points += f.cloud.len();
            proposals += r.kept.len();
        }
        let n = (frames.len() - warmup) as f64;
        Ok(TimingReport {
            mean: StageTimes {
                ground: sum.ground / n,
                cluster: sum.cluster / n,
                filter: sum.filter / n,
                classify: sum.classify / n,
            },
            end_to_end: end_to_end / n,
            frames: frames.len() - warmup,
            warmup,
            threads: threads.max(1),
            mean_points: points as f64 / n,
            mean_proposals: proposals as f64 / n,
        })
    })
}
