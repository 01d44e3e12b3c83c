//! Particle swarm search over the segmentation parameters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::evaluate_recall;
use crate::ingest::Frame;
use crate::pipeline::PipelineParams;

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    /// Inertia weight.
    pub alpha: f64,
    /// Pull towards the global best.
    pub lambda: f64,
    /// Pull towards the particle's own best.
    pub theta: f64,
    pub particles: usize,
    pub generations: usize,
    /// Search interval per dimension; its length sets the dimension.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    /// Evaluate the particles of a generation on the rayon pool.
    pub parallel: bool,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.72,
            lambda: 1.49,
            theta: 1.49,
            particles: 50,
            generations: 1000,
            bounds: vec![(0.0, 1.2); 3],
            seed: 0,
            parallel: true,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.particles >= 1
            && self.generations >= 1
            && !self.bounds.is_empty()
            && self.bounds.iter().all(|&(lo, hi)| lo < hi && lo.is_finite() && hi.is_finite())
            && [self.alpha, self.lambda, self.theta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid swarm configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    /// Swarm state after the last generation.
    pub particles: Vec<Particle>,
}

impl PsoResult {
    /// `generation,best_fitness,x0,x1,...`.
    pub fn write_history_csv<W: Write>(&self, out: W, names: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["generation".to_string(), "best_fitness".to_string()];
        let dims = self.best_position.len();
        header.extend((0..dims).map(|k| names.get(k).map_or_else(|| format!("x{k}"), |s| s.to_string())));
        w.write_record(&header)?;
        for h in &self.history {
            let mut row = vec![h.generation.to_string(), format!("{:.9}", h.best_fitness)];
            row.extend(h.best_position.iter().map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A swarm whose every particle draws from its own stream of the master
/// seed, so evaluation order cannot change the outcome.
pub struct Swarm {
    cfg: PsoConfig,
    particles: Vec<Particle>,
    rngs: Vec<ChaCha8Rng>,
    best: Option<(Vec<f64>, f64)>,
    generation: usize,
}

fn uniform_position(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()
}

impl Swarm {
    /// Positions uniform in the bounds; velocities uniform in half the
    /// interval width either way.
    pub fn new(cfg: &PsoConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rngs = Vec::with_capacity(cfg.particles);
        let mut particles = Vec::with_capacity(cfg.particles);
        for i in 0..cfg.particles {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let position = uniform_position(&mut rng, &cfg.bounds);
            let velocity = cfg
                .bounds
                .iter()
                .map(|&(lo, hi)| {
                    let h = (hi - lo) / 2.0;
                    rng.random_range(-h..=h)
                })
                .collect();
            particles.push(Particle { best_position: position.clone(), position, velocity, best_fitness: f64::NEG_INFINITY });
            rngs.push(rng);
        }
        Ok(Self { cfg: cfg.clone(), particles, rngs, best: None, generation: 0 })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(p, f)| (p.as_slice(), *f))
    }

    /// Evaluates every particle, updates the bests, then moves the swarm.
    /// Particles that leave the bounds are re-drawn uniformly inside them;
    /// their velocity is kept.
    pub fn step<F>(&mut self, objective: &F) -> GenerationRecord
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let fitness: Vec<f64> = if self.cfg.parallel {
            self.particles.par_iter().map(|p| objective(&p.position)).collect()
        } else {
            self.particles.iter().map(|p| objective(&p.position)).collect()
        };
        for (p, &f) in self.particles.iter_mut().zip(&fitness) {
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
            if self.best.as_ref().is_none_or(|(_, b)| f > *b) {
                self.best = Some((p.position.clone(), f));
            }
        }
        let (g, gf) = self.best.clone().unwrap_or_else(|| (self.particles[0].position.clone(), f64::NEG_INFINITY));
        let record = GenerationRecord { generation: self.generation, best_fitness: gf, best_position: g.clone() };
        let c = &self.cfg;
        for (p, rng) in self.particles.iter_mut().zip(&mut self.rngs) {
            let mut out = false;
            for k in 0..p.position.len() {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                p.velocity[k] = c.alpha * p.velocity[k]
                    + c.lambda * r1 * (g[k] - p.position[k])
                    + c.theta * r2 * (p.best_position[k] - p.position[k]);
                p.position[k] += p.velocity[k];
                let (lo, hi) = c.bounds[k];
                out |= !(lo..=hi).contains(&p.position[k]);
            }
            if out {
                p.position = uniform_position(rng, &c.bounds);
            }
        }
        self.generation += 1;
        record
    }
}

/// Maximizes `objective` over the configured box.
pub fn pso_optimize<F>(objective: F, cfg: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut swarm = Swarm::new(cfg)?;
    let history: Vec<GenerationRecord> = (0..cfg.generations).map(|_| swarm.step(&objective)).collect();
    let last = history.last().expect("at least one generation");
    Ok(PsoResult {
        best_position: last.best_position.clone(),
        best_fitness: last.best_fitness,
        history,
        particles: swarm.particles,
    })
}

/// Recall of the pipeline with `[h_d, v_d, d_o]` substituted into `base`.
pub fn recall_objective(position: &[f64], frames: &[Frame], base: &PipelineParams, iou_threshold: f64) -> Result<f64> {
    let &[h_d, v_d, d_o] = position else {
        return Err(Error::Config(format!("expected [h_d, v_d, d_o], got {} values", position.len())));
    };
    let mut params = base.clone();
    params.cluster.h_d = h_d;
    params.cluster.v_d = v_d;
    params.d_o = d_o;
    Ok(evaluate_recall(frames, &params, iou_threshold)?.recall)
}

/// Searches `[h_d, v_d, d_o]` for the highest recall. Positions the
/// pipeline rejects (a zero threshold) score zero.
pub fn tune_segmentation(frames: &[Frame], base: &PipelineParams, cfg: &PsoConfig, iou_threshold: f64) -> Result<PsoResult> {
    if cfg.bounds.len() != 3 {
        return Err(Error::Config("segmentation search needs three bounds: h_d, v_d, d_o".into()));
    }
    // Surface missing ground truth and bad base parameters up front.
    evaluate_recall(frames, base, iou_threshold)?;
    pso_optimize(|x| recall_objective(x, frames, base, iou_threshold).unwrap_or(0.0), cfg)
}
