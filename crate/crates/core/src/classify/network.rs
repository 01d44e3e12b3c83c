//! Point-set classifier: input transform network, shared per-point layers,
//! max-pooling and a dense head, with hand-written backpropagation.

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClassifierConfig;
use crate::error::{Error, Result};

/// Bias-free dense layer followed by batch normalization and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub w: Array2<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl Block {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: glorot(inputs, outputs, rng),
            gamma: Array1::ones(outputs),
            beta: Array1::zeros(outputs),
            running_mean: Array1::zeros(outputs),
            running_var: Array1::ones(outputs),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
            running_mean: Array1::zeros(self.gamma.len()),
            running_var: Array1::zeros(self.gamma.len()),
        }
    }
}

/// Dense layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Per-point blocks, max-pool, head blocks and an output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub point: Vec<Block>,
    pub head: Vec<Block>,
    pub out: Linear,
}

impl Tower {
    fn new(cfg: &ClassifierConfig, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut point = Vec::new();
        let mut width = 3;
        for &w in &cfg.point_widths {
            point.push(Block::new(width, w, rng));
            width = w;
        }
        let mut head = Vec::new();
        for &w in &cfg.head_widths {
            head.push(Block::new(width, w, rng));
            width = w;
        }
        Self { point, head, out: Linear { w: glorot(width, outputs, rng), b: Array1::zeros(outputs) } }
    }

    fn zeros_like(&self) -> Self {
        Self {
            point: self.point.iter().map(Block::zeros_like).collect(),
            head: self.head.iter().map(Block::zeros_like).collect(),
            out: Linear { w: Array2::zeros(self.out.w.raw_dim()), b: Array1::zeros(self.out.b.len()) },
        }
    }
}

fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
    Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..limit))
}

/// Network parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    /// Predicts a 3x3 transform applied to the input points.
    pub tnet: Option<Tower>,
    pub main: Tower,
}

/// Parameter gradients share the model's layout; running statistics stay zero.
pub type Gradients = ClassifierModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Infer,
}

struct BlockCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
    /// Post-ReLU activation, before dropout.
    out: Array2<f64>,
    /// Dropout multipliers (0 or 1/keep).
    mask: Option<Array2<f64>>,
}

struct TowerCache {
    point: Vec<BlockCache>,
    argmax: Array2<usize>,
    rows: usize,
    head: Vec<BlockCache>,
    head_out: Array2<f64>,
}

/// Intermediate values of a forward pass, consumed by the backward pass.
pub struct ForwardCache {
    batch: usize,
    n_points: usize,
    input: Array2<f64>,
    transform: Option<Array3<f64>>,
    tnet: Option<TowerCache>,
    main: TowerCache,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    /// Per-sample 3x3 input transforms, when the model has a transform net.
    pub fn transforms(&self) -> Option<&Array3<f64>> {
        self.transform.as_ref()
    }

    /// True when both passes pick the same max-pool rows and the same active
    /// ReLU units, i.e. they lie in one smooth piece of the loss.
    pub fn same_activation_pattern(&self, other: &ForwardCache) -> bool {
        fn tower_eq(a: &TowerCache, b: &TowerCache) -> bool {
            let relu = |x: &[BlockCache], y: &[BlockCache]| {
                x.len() == y.len()
                    && x.iter().zip(y).all(|(p, q)| {
                        p.out.shape() == q.out.shape() && p.out.iter().zip(&q.out).all(|(u, v)| (*u > 0.0) == (*v > 0.0))
                    })
            };
            a.argmax == b.argmax && relu(&a.point, &b.point) && relu(&a.head, &b.head)
        }
        let tnet = match (&self.tnet, &other.tnet) {
            (Some(a), Some(b)) => tower_eq(a, b),
            (None, None) => true,
            _ => false,
        };
        tnet && tower_eq(&self.main, &other.main)
    }
}

fn block_forward(b: &Block, x: Array2<f64>, train: bool, eps: f64) -> (Array2<f64>, BlockCache) {
    let z = x.dot(&b.w);
    let (mean, var) = if train {
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        (mean, var)
    } else {
        (b.running_mean.clone(), b.running_var.clone())
    };
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = (z - &mean) * &inv_std;
    let out = (&xhat * &b.gamma + &b.beta).mapv(|v| v.max(0.0));
    let cache = BlockCache { input: x, xhat, inv_std, mean, var, out: out.clone(), mask: None };
    (out, cache)
}

/// Returns the gradient with respect to the block input.
fn block_backward(b: &Block, c: &BlockCache, d_out: Array2<f64>, g: &mut Block) -> Array2<f64> {
    let mut dy = d_out;
    Zip::from(&mut dy).and(&c.out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    g.gamma += &(&dy * &c.xhat).sum_axis(Axis(0));
    g.beta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &b.gamma;
    let m = dxhat.nrows() as f64;
    let sum = dxhat.sum_axis(Axis(0));
    let sum_x = (&dxhat * &c.xhat).sum_axis(Axis(0));
    let dz = ((dxhat * m - &sum) - &c.xhat * &sum_x) * &(&c.inv_std / m);
    g.w += &c.input.t().dot(&dz);
    dz.dot(&b.w.t())
}

fn tower_forward(
    t: &Tower,
    x: Array2<f64>,
    batch: usize,
    n_points: usize,
    train: bool,
    eps: f64,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> (Array2<f64>, TowerCache) {
    let mut h = x;
    let mut point = Vec::with_capacity(t.point.len());
    for b in &t.point {
        let (out, cache) = block_forward(b, h, train, eps);
        point.push(cache);
        h = out;
    }
    let width = h.ncols();
    let mut pooled = Array2::from_elem((batch, width), f64::NEG_INFINITY);
    let mut argmax = Array2::zeros((batch, width));
    for s in 0..batch {
        for r in s * n_points..(s + 1) * n_points {
            let row = h.row(r);
            for c in 0..width {
                if row[c] > pooled[[s, c]] {
                    pooled[[s, c]] = row[c];
                    argmax[[s, c]] = r;
                }
            }
        }
    }
    let rows = h.nrows();
    drop(h);
    let mut h = pooled;
    let mut head = Vec::with_capacity(t.head.len());
    let mut dropout = dropout;
    for b in &t.head {
        let (mut out, mut cache) = block_forward(b, h, train, eps);
        if let Some((rng, keep)) = dropout.as_mut() {
            let keep = *keep;
            let mask = Array2::from_shape_simple_fn(out.raw_dim(), || {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            out *= &mask;
            cache.mask = Some(mask);
        }
        head.push(cache);
        h = out;
    }
    let logits = h.dot(&t.out.w) + &t.out.b;
    (logits, TowerCache { point, argmax, rows, head, head_out: h })
}

/// Returns the gradient with respect to the tower input.
fn tower_backward(t: &Tower, c: &TowerCache, d_logits: &Array2<f64>, g: &mut Tower) -> Array2<f64> {
    g.out.w += &c.head_out.t().dot(d_logits);
    g.out.b += &d_logits.sum_axis(Axis(0));
    let mut d = d_logits.dot(&t.out.w.t());
    for ((b, cache), gb) in t.head.iter().zip(&c.head).zip(g.head.iter_mut()).rev() {
        if let Some(mask) = &cache.mask {
            d *= mask;
        }
        d = block_backward(b, cache, d, gb);
    }
    let mut dh = Array2::zeros((c.rows, d.ncols()));
    for ((s, col), &r) in c.argmax.indexed_iter() {
        dh[[r, col]] += d[[s, col]];
    }
    let mut d = dh;
    for ((b, cache), gb) in t.point.iter().zip(&c.point).zip(g.point.iter_mut()).rev() {
        d = block_backward(b, cache, d, gb);
    }
    d
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean negative log-probability of the true labels. Probabilities are
/// clamped at `1e-12`.
pub fn nll_loss(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels.iter().enumerate().map(|(i, &y)| -probs[[i, y]].max(1e-12).ln()).sum::<f64>() / n
}

impl ClassifierModel {
    /// Freshly initialized network; the transform net starts at identity.
    pub fn new(config: &ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tnet = config.use_tnet.then(|| {
            let mut t = Tower::new(config, 9, &mut rng);
            t.out.w.fill(0.0);
            t.out.b = Array1::from(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
            t
        });
        let main = Tower::new(config, config.n_classes, &mut rng);
        Ok(Self { config: config.clone(), tnet, main })
    }

    pub fn zeros_like(&self) -> Gradients {
        Self { config: self.config.clone(), tnet: self.tnet.as_ref().map(Tower::zeros_like), main: self.main.zeros_like() }
    }

    fn check_batch(&self, batch: &Array3<f64>) -> Result<()> {
        if batch.dim().0 == 0 || batch.dim().1 == 0 || batch.dim().2 != 3 {
            return Err(Error::Config(format!("batch shape {:?} is not B x N x 3", batch.dim())));
        }
        Ok(())
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, batch: &Array3<f64>, mode: Mode) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch, mode)?.probs)
    }

    /// Input transforms, one 3x3 matrix per sample.
    pub fn tnet_forward(&self, batch: &Array3<f64>, mode: Mode) -> Result<Array3<f64>> {
        self.check_batch(batch)?;
        let (b, n, _) = batch.dim();
        let Some(t) = &self.tnet else {
            let mut eye = Array3::zeros((b, 3, 3));
            for s in 0..b {
                for k in 0..3 {
                    eye[[s, k, k]] = 1.0;
                }
            }
            return Ok(eye);
        };
        let x = batch.to_shape((b * n, 3)).expect("contiguous batch").to_owned();
        let train = matches!(mode, Mode::Train { .. });
        let (logits, _) = tower_forward(t, x, b, n, train, self.config.bn_eps, None);
        Ok(logits.into_shape_with_order((b, 3, 3)).expect("nine outputs"))
    }

    pub fn forward_cached(&self, batch: &Array3<f64>, mode: Mode) -> Result<ForwardCache> {
        self.check_batch(batch)?;
        let (b, n, _) = batch.dim();
        let eps = self.config.bn_eps;
        let train = matches!(mode, Mode::Train { .. });
        let input = batch.to_shape((b * n, 3)).expect("contiguous batch").to_owned();
        let (x, transform, tnet) = match &self.tnet {
            Some(t) => {
                let (logits, cache) = tower_forward(t, input.clone(), b, n, train, eps, None);
                let tr = logits.into_shape_with_order((b, 3, 3)).expect("nine outputs");
                let mut x = Array2::zeros((b * n, 3));
                for s in 0..b {
                    let rows = s * n..(s + 1) * n;
                    let xs = input.slice(ndarray::s![rows.clone(), ..]).dot(&tr.index_axis(Axis(0), s));
                    x.slice_mut(ndarray::s![rows, ..]).assign(&xs);
                }
                (x, Some(tr), Some(cache))
            }
            None => (input.clone(), None, None),
        };
        let mut rng;
        let dropout = match mode {
            Mode::Train { dropout_seed } if self.config.keep_prob < 1.0 => {
                rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                Some((&mut rng, self.config.keep_prob))
            }
            _ => None,
        };
        let (logits, main) = tower_forward(&self.main, x, b, n, train, eps, dropout);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier logits".into()));
        }
        let probs = softmax_rows(&logits);
        Ok(ForwardCache { batch: b, n_points: n, input, transform, tnet, main, probs })
    }

    /// Gradients of the mean NLL loss of a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Gradients {
        self.backward_scaled(cache, labels, 1.0)
    }

    /// Gradients of `scale` times the mean NLL loss.
    pub fn backward_scaled(&self, cache: &ForwardCache, labels: &[usize], scale: f64) -> Gradients {
        let mut g = self.zeros_like();
        let b = cache.batch;
        let mut d_logits = cache.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            d_logits[[i, y]] -= 1.0;
        }
        d_logits *= scale / b as f64;
        let dx = tower_backward(&self.main, &cache.main, &d_logits, &mut g.main);
        if let (Some(t), Some(tc), Some(_), Some(gt)) = (&self.tnet, &cache.tnet, &cache.transform, g.tnet.as_mut()) {
            let n = cache.n_points;
            let mut d_t = Array2::zeros((b, 9));
            for s in 0..b {
                let rows = s * n..(s + 1) * n;
                let x = cache.input.slice(ndarray::s![rows.clone(), ..]);
                let dxs = dx.slice(ndarray::s![rows, ..]);
                let dm = x.t().dot(&dxs);
                for (k, v) in dm.iter().enumerate() {
                    d_t[[s, k]] = *v;
                }
            }
            tower_backward(t, tc, &d_t, gt);
        }
        g
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics.
    pub fn apply_batch_stats(&mut self, cache: &ForwardCache) {
        let m = self.config.bn_momentum;
        let fold = |tower: &mut Tower, tc: &TowerCache| {
            for (b, c) in tower.point.iter_mut().chain(tower.head.iter_mut()).zip(tc.point.iter().chain(&tc.head)) {
                b.running_mean = &b.running_mean * m + &c.mean * (1.0 - m);
                b.running_var = &b.running_var * m + &c.var * (1.0 - m);
            }
        };
        fold(&mut self.main, &cache.main);
        if let (Some(t), Some(tc)) = (self.tnet.as_mut(), cache.tnet.as_ref()) {
            fold(t, tc);
        }
    }

    /// Trainable tensors in a fixed order, with names.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        self.tensors(false).into_iter().map(|(n, _, s)| (n, s)).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut(false).into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, s)| s.len()).sum()
    }

    /// Named tensors with shapes; running statistics included when `all`.
    pub fn tensors(&self, all: bool) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        let towers = self.tnet.iter().map(|t| ("tnet", t)).chain([("main", &self.main)]);
        for (name, t) in towers {
            for (part, blocks) in [("point", &t.point), ("head", &t.head)] {
                for (i, b) in blocks.iter().enumerate() {
                    let p = format!("{name}.{part}.{i}");
                    out.push((format!("{p}.w"), b.w.shape().to_vec(), b.w.as_slice().expect("standard layout")));
                    out.push((format!("{p}.gamma"), vec![b.gamma.len()], b.gamma.as_slice().expect("contiguous")));
                    out.push((format!("{p}.beta"), vec![b.beta.len()], b.beta.as_slice().expect("contiguous")));
                    if all {
                        out.push((format!("{p}.running_mean"), vec![b.gamma.len()], b.running_mean.as_slice().expect("contiguous")));
                        out.push((format!("{p}.running_var"), vec![b.gamma.len()], b.running_var.as_slice().expect("contiguous")));
                    }
                }
            }
            out.push((format!("{name}.out.w"), t.out.w.shape().to_vec(), t.out.w.as_slice().expect("standard layout")));
            out.push((format!("{name}.out.b"), vec![t.out.b.len()], t.out.b.as_slice().expect("contiguous")));
        }
        out
    }

    pub fn tensors_mut(&mut self, all: bool) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let mut out = Vec::new();
        let towers = self.tnet.iter_mut().map(|t| ("tnet", t)).chain([("main", &mut self.main)]);
        for (name, t) in towers {
            for (part, blocks) in [("point", &mut t.point), ("head", &mut t.head)] {
                for (i, b) in blocks.iter_mut().enumerate() {
                    let p = format!("{name}.{part}.{i}");
                    let n = b.gamma.len();
                    let shape = b.w.shape().to_vec();
                    out.push((format!("{p}.w"), shape, b.w.as_slice_mut().expect("standard layout")));
                    out.push((format!("{p}.gamma"), vec![n], b.gamma.as_slice_mut().expect("contiguous")));
                    out.push((format!("{p}.beta"), vec![n], b.beta.as_slice_mut().expect("contiguous")));
                    if all {
                        out.push((format!("{p}.running_mean"), vec![n], b.running_mean.as_slice_mut().expect("contiguous")));
                        out.push((format!("{p}.running_var"), vec![n], b.running_var.as_slice_mut().expect("contiguous")));
                    }
                }
            }
            let shape = t.out.w.shape().to_vec();
            let n = t.out.b.len();
            out.push((format!("{name}.out.w"), shape, t.out.w.as_slice_mut().expect("standard layout")));
            out.push((format!("{name}.out.b"), vec![n], t.out.b.as_slice_mut().expect("contiguous")));
        }
        out
    }
}
