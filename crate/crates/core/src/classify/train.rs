use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, normalize_proposal, Adam, ClassifierModel, Mode};
use crate::error::{Error, Result};
use crate::geom::{sample_points, Point3};
use crate::ingest::ObjectClass;

/// One labelled proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub points: Vec<Point3>,
    pub label: ObjectClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Stop once training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            decay_rate: 0.8,
            decay_steps: 18570,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            augment: true,
            target_accuracy: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate > 0.0 && self.decay_rate > 0.0 && self.decay_rate <= 1.0 && self.batch_size >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Derives a per-use seed from a base seed and two counters.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Resamples, normalizes and (optionally) augments each point set into a
/// `B x n_points x 3` batch. `seeds[i]` drives sample `i`.
pub fn batch_from_samples(samples: &[&[Point3]], n_points: usize, seeds: &[u64], augmented: bool) -> Result<Array3<f64>> {
    let mut batch = Array3::zeros((samples.len(), n_points, 3));
    for (s, (pts, &seed)) in samples.iter().zip(seeds).enumerate() {
        let mut p = normalize_proposal(&sample_points(pts, n_points, seed)?)?;
        if augmented {
            p = augment(&p, mix(seed, 1, 0)).0;
        }
        for (i, q) in p.iter().enumerate() {
            batch[[s, i, 0]] = q.x;
            batch[[s, i, 1]] = q.y;
            batch[[s, i, 2]] = q.z;
        }
    }
    Ok(batch)
}

/// Class decision for one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: ObjectClass,
    pub probability: f64,
    pub probs: [f64; ObjectClass::COUNT],
}

/// Inference over point sets, 32 at a time. Resampling of proposal `i` is
/// seeded from `(seed, i)`, so results do not depend on batching.
pub fn predict<P: AsRef<[Point3]>>(model: &ClassifierModel, proposals: &[P], seed: u64) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(proposals.len());
    let idx: Vec<usize> = (0..proposals.len()).collect();
    for chunk in idx.chunks(32) {
        let pts: Vec<&[Point3]> = chunk.iter().map(|&i| proposals[i].as_ref()).collect();
        let seeds: Vec<u64> = chunk.iter().map(|&i| mix(seed, i as u64, 2)).collect();
        let batch = batch_from_samples(&pts, model.config.n_points, &seeds, false)?;
        let probs = model.forward(&batch, Mode::Infer)?;
        for row in probs.rows() {
            let mut p = [0.0; ObjectClass::COUNT];
            p.iter_mut().zip(row).for_each(|(d, s)| *d = *s);
            let (i, &best) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("five classes");
            out.push(Prediction { class: ObjectClass::from_index(i).expect("class index"), probability: best, probs: p });
        }
    }
    Ok(out)
}

fn accuracy(model: &ClassifierModel, samples: &[Sample], seed: u64) -> Result<f64> {
    let pts: Vec<&[Point3]> = samples.iter().map(|s| s.points.as_slice()).collect();
    let pred = predict(model, &pts, seed)?;
    let correct = pred.iter().zip(samples).filter(|(p, s)| p.class == s.label).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch training with Adam. Batches are reshuffled every epoch;
/// every random choice derives from `cfg.seed`.
pub fn train(
    model: &mut ClassifierModel,
    samples: &[Sample],
    validation: &[Sample],
    cfg: &TrainingConfig,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    if let Some(s) = samples.iter().chain(validation).find(|s| s.points.is_empty()) {
        return Err(Error::Config(format!("a {} sample has no points", s.label)));
    }
    let mut adam = Adam::new(model);
    let mut step = 0u64;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 3)));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let pts: Vec<&[Point3]> = chunk.iter().map(|&i| samples[i].points.as_slice()).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix(cfg.seed ^ step, i as u64, 4)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label.index()).collect();
            let batch = batch_from_samples(&pts, model.config.n_points, &seeds, cfg.augment)?;
            let cache = model.forward_cached(&batch, Mode::Train { dropout_seed: mix(cfg.seed, step, 5) })?;
            loss_sum += super::nll_loss(&cache.probs, &labels);
            batches += 1;
            let grads = model.backward(&cache, &labels);
            adam.step(model, &grads, step, cfg);
            model.apply_batch_stats(&cache);
            step += 1;
        }
        let train_accuracy = accuracy(model, samples, cfg.seed)?;
        let validation_accuracy =
            if validation.is_empty() { None } else { Some(accuracy(model, validation, cfg.seed)?) };
        log::debug!("epoch {epoch}: loss {:.4} train acc {train_accuracy:.3}", loss_sum / batches as f64);
        epochs.push(EpochMetrics { epoch, loss: loss_sum / batches as f64, train_accuracy, validation_accuracy, steps: step });
        if cfg.target_accuracy.is_some_and(|t| train_accuracy >= t) {
            break;
        }
    }
    Ok(TrainingReport { epochs, steps: step })
}
