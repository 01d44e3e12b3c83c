//! Ground removal, clustering, filtering and classification of one frame.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::classify::{predict, ClassifierModel, Sample};
use crate::cluster::{cluster_distance, cluster_distance_exhaustive, cluster_scan, ClusterParams};
use crate::error::{Error, Result};
use crate::filter::{apply_filters, build_proposals, FilterParams, Proposal};
use crate::geom::PointCloud;
use crate::ground::{build_ground_grid, postprocess_grid, remove_ground, GroundGridConfig, GroundRemovalReport};
use crate::eval::greedy_match;
use crate::geom::Box3D;
use crate::ingest::{Frame, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Scan-line segments linked across adjacent rings.
    Scan,
    /// Euclidean connected components on a spatial grid.
    Distance,
    /// Euclidean connected components over all point pairs.
    DistanceExhaustive,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Scan => "scan",
            Backend::Distance => "distance",
            Backend::DistanceExhaustive => "distance-exhaustive",
        })
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scan" => Ok(Backend::Scan),
            "distance" => Ok(Backend::Distance),
            "distance-exhaustive" => Ok(Backend::DistanceExhaustive),
            _ => Err(format!("unknown clustering backend {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub ground: GroundGridConfig,
    /// Points up to this height above the cell's ground estimate are ground.
    pub d_o: f64,
    pub cluster: ClusterParams,
    pub filter: FilterParams,
    pub backend: Backend,
    /// When false every cluster is kept.
    pub filtering: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            ground: GroundGridConfig::default(),
            d_o: 0.26,
            cluster: ClusterParams::default(),
            filter: FilterParams::default(),
            backend: Backend::Scan,
            filtering: true,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.ground.validate()?;
        self.cluster.validate()?;
        self.filter.validate()?;
        if !(self.d_o >= 0.0 && self.d_o.is_finite()) {
            return Err(Error::Config(format!("d_o must be non-negative, got {}", self.d_o)));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub ground: f64,
    pub cluster: f64,
    pub filter: f64,
    pub classify: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.ground + self.cluster + self.filter + self.classify
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    /// Points left after ground removal; proposal indices refer to it.
    pub cloud: PointCloud,
    pub ground: GroundRemovalReport,
    /// Every cluster, before filtering.
    pub proposals: Vec<Proposal>,
    /// Survivors of filtering, with occlusion labels.
    pub kept: Vec<Proposal>,
    pub times: StageTimes,
}

impl FrameResult {
    pub fn kept_ids(&self) -> Vec<usize> {
        self.kept.iter().map(|p| p.id).collect()
    }
}

/// Removes the ground from `cloud` and returns the remaining points.
pub fn ground_stage(cloud: &PointCloud, params: &PipelineParams) -> Result<(PointCloud, GroundRemovalReport)> {
    let grid = postprocess_grid(&build_ground_grid(cloud, &params.ground)?);
    Ok(remove_ground(cloud, &grid, params.d_o))
}

/// Proposals for one cloud: ground removal, clustering, then filtering
/// when enabled.
pub fn run_frame(cloud: &PointCloud, params: &PipelineParams) -> Result<FrameResult> {
    params.validate()?;
    let t0 = Instant::now();
    let (rest, ground) = ground_stage(cloud, params)?;
    let t1 = Instant::now();
    let clusters = match params.backend {
        _ if rest.is_empty() => Vec::new(),
        Backend::Scan => cluster_scan(&rest, &params.cluster)?,
        Backend::Distance => cluster_distance(&rest, params.cluster.t_d)?,
        Backend::DistanceExhaustive => cluster_distance_exhaustive(&rest, params.cluster.t_d)?,
    };
    let t2 = Instant::now();
    let proposals = build_proposals(&rest, clusters)?;
    let kept = if params.filtering { apply_filters(proposals.clone(), &params.filter) } else { proposals.clone() };
    let t3 = Instant::now();
    let times = StageTimes {
        ground: (t1 - t0).as_secs_f64(),
        cluster: (t2 - t1).as_secs_f64(),
        filter: (t3 - t2).as_secs_f64(),
        classify: 0.0,
    };
    Ok(FrameResult { cloud: rest, ground, proposals, kept, times })
}

/// Scores every kept proposal with the classifier.
pub fn classify_kept(result: &mut FrameResult, model: &ClassifierModel, seed: u64) -> Result<()> {
    let t0 = Instant::now();
    let points =
        result.kept.iter().map(|p| result.cloud.select(&p.cluster.indices)).collect::<Result<Vec<_>>>()?;
    let preds = predict(model, &points, seed)?;
    for (p, pred) in result.kept.iter_mut().zip(preds) {
        p.scores = Some(pred.probs);
    }
    result.times.classify = t0.elapsed().as_secs_f64();
    Ok(())
}

/// `(|x| of the box centre, non-ground points inside the box)` for every
/// labelled object with at least one point, as input to the minimum-points
/// curve fit.
pub fn curve_samples(frames: &[Frame], params: &PipelineParams) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for f in frames {
        let (rest, _) = ground_stage(&f.cloud, params)?;
        for o in f.targets() {
            let n = rest.points().iter().filter(|p| o.bbox.contains(p.xyz())).count();
            if n > 0 {
                out.push((o.bbox.center()[0].abs(), n as f64));
            }
        }
    }
    Ok(out)
}

/// Classifier samples from the kept proposals of every frame: a proposal
/// matched to a labelled object takes its class, the rest are background.
pub fn labelled_proposals(frames: &[Frame], params: &PipelineParams, iou_threshold: f64) -> Result<Vec<Sample>> {
    let per_frame = frames
        .par_iter()
        .map(|f| {
            let result = run_frame(&f.cloud, params)?;
            let targets: Vec<_> = f.targets().collect();
            let gt: Vec<Box3D> = targets.iter().map(|o| o.bbox).collect();
            let boxes: Vec<Box3D> = result.kept.iter().map(|p| p.bbox).collect();
            let mut labels = vec![ObjectClass::Background; boxes.len()];
            for (g, m) in greedy_match(&gt, &boxes, iou_threshold).into_iter().enumerate() {
                if let Some(p) = m {
                    labels[p] = targets[g].class;
                }
            }
            result
                .kept
                .iter()
                .zip(labels)
                .map(|(p, label)| Ok(Sample { points: result.cloud.select(&p.cluster.indices)?, label }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}
