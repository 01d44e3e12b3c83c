use super::{ClassifierModel, Gradients, TrainingConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Staircase exponential decay: `initial * decay^floor(step / decay_steps)`.
pub fn learning_rate(step: u64, cfg: &TrainingConfig) -> f64 {
    cfg.learning_rate * cfg.decay_rate.powi((step / cfg.decay_steps.max(1)) as i32)
}

/// Adam moment estimates for every trainable tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &ClassifierModel) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|(_, s)| s.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update; `step` counts from zero.
    pub fn step(&mut self, model: &mut ClassifierModel, grads: &Gradients, step: u64, cfg: &TrainingConfig) {
        let lr = learning_rate(step, cfg);
        let t = (step + 1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let grads = grads.parameters();
        for (((p, (_, g)), m), v) in model.parameters_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            }
        }
    }
}
