//! Proposal classification with a small point-set network.

mod io;
mod network;
mod optim;
mod train;

pub use io::{dataset_from_bytes, dataset_to_bytes, load_model, model_from_bytes, model_to_bytes, read_dataset, save_model, write_dataset};
pub use network::{nll_loss, Block, ClassifierModel, ForwardCache, Gradients, Linear, Mode, Tower};
pub use optim::{learning_rate, Adam};
pub use train::{batch_from_samples, predict, train, EpochMetrics, Prediction, Sample, TrainingConfig, TrainingReport};

use std::f64::consts::FRAC_PI_4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::ingest::ObjectClass;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Points per proposal after resampling.
    pub n_points: usize,
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub n_classes: usize,
    /// Dropout keep probability on the head's hidden layers.
    pub keep_prob: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub use_tnet: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            n_points: 100,
            point_widths: vec![64, 128, 1024],
            head_widths: vec![512, 256],
            n_classes: ObjectClass::COUNT,
            keep_prob: 0.7,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            use_tnet: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_points >= 1
            && !self.point_widths.is_empty()
            && self.point_widths.iter().chain(&self.head_widths).all(|&w| w > 0)
            && self.n_classes == ObjectClass::COUNT
            && self.keep_prob > 0.0
            && self.keep_prob <= 1.0
            && self.bn_eps > 0.0
            && (0.0..1.0).contains(&self.bn_momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid classifier configuration {self:?}")))
        }
    }
}

/// Centres the points on their centroid and scales the farthest one to
/// unit distance. Coincident points all map to the origin.
pub fn normalize_proposal(points: &[Point3]) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to normalize"));
    }
    let n = points.len() as f64;
    let c = points.iter().fold([0.0; 3], |a, p| [a[0] + p.x, a[1] + p.y, a[2] + p.z]).map(|v| v / n);
    let centred: Vec<Point3> = points.iter().map(|p| Point3::new(p.x - c[0], p.y - c[1], p.z - c[2])).collect();
    let r = centred.iter().map(|p| p.range()).fold(0.0, f64::max);
    if r == 0.0 {
        return Ok(centred);
    }
    Ok(centred.into_iter().map(|p| Point3::new(p.x / r, p.y / r, p.z / r)).collect())
}

/// Rotates about z by `theta`, then scales by `scale`.
pub fn augment_with(points: &[Point3], theta: f64, scale: f64) -> Vec<Point3> {
    let (s, c) = theta.sin_cos();
    points
        .iter()
        .map(|p| Point3::new(scale * (c * p.x - s * p.y), scale * (s * p.x + c * p.y), scale * p.z))
        .collect()
}

/// Random rotation in `[-pi/4, pi/4]` about z and scale in `[0.95, 1.05]`.
/// Returns the points with the drawn angle and scale.
pub fn augment(points: &[Point3], seed: u64) -> (Vec<Point3>, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random_range(-FRAC_PI_4..=FRAC_PI_4);
    let scale = rng.random_range(0.95..=1.05);
    (augment_with(points, theta, scale), theta, scale)
}
