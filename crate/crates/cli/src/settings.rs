//! Run settings: a `key = value` file, then `--set` overrides, then the
//! dedicated flags. Unknown keys are rejected so typos do not pass silently.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lidarprop::classify::{ClassifierConfig, TrainingConfig};
use lidarprop::filter::MinPointsCurve;
use lidarprop::ground::HeightRule;
use lidarprop::kv::{parse_numbers, KvFile};
use lidarprop::pipeline::PipelineParams;
use lidarprop::tune::PsoConfig;

pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "rings",
    "warmup",
    "iou",
    // ground
    "grid_origin_x",
    "grid_origin_y",
    "grid_length",
    "grid_width",
    "cell_length",
    "cell_width",
    "bin_width",
    "ground_ratio",
    "height_rule",
    "d_o",
    // clustering
    "backend",
    "t_d",
    "h_d",
    "v_d",
    "mini_points",
    // filtering
    "filtering",
    "max_length",
    "max_width",
    "min_height",
    "theta_t_deg",
    "curve",
    "curve_a",
    "curve_k",
    "curve_bin",
    // classifier
    "model",
    "n_points",
    "point_widths",
    "head_widths",
    "keep_prob",
    "use_tnet",
    "learning_rate",
    "decay_rate",
    "decay_steps",
    "batch_size",
    "epochs",
    "augment",
    "target_accuracy",
    "validation_split",
    // swarm
    "particles",
    "generations",
    "alpha",
    "lambda",
    "theta",
    "bounds",
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Beam count used to recover rings of raw velodyne files.
    pub rings: usize,
    pub warmup: usize,
    pub iou: f64,
    pub pipeline: PipelineParams,
    /// Distance bin width of the minimum-points curve fit, metres.
    pub curve_bin: f64,
    pub model: Option<PathBuf>,
    pub classifier: ClassifierConfig,
    pub training: TrainingConfig,
    pub validation_split: f64,
    pub pso: PsoConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            rings: 64,
            warmup: 3,
            iou: 0.25,
            pipeline: PipelineParams::default(),
            curve_bin: 0.5,
            model: None,
            classifier: ClassifierConfig::default(),
            training: TrainingConfig::default(),
            validation_split: 0.0,
            pso: PsoConfig::default(),
        }
    }
}

/// Merges the config file with `KEY=VALUE` overrides; later entries win.
pub fn merge(config: Option<&Path>, overrides: &[(String, String)]) -> Result<KvFile> {
    let mut kv = match config {
        Some(p) => KvFile::read(p).with_context(|| format!("reading config {}", p.display()))?,
        None => KvFile::new(),
    };
    for key in kv.keys() {
        if !KEYS.contains(&key) {
            bail!("{}: unknown key `{key}`", kv.path().display());
        }
    }
    for (k, v) in overrides {
        if !KEYS.contains(&k.as_str()) {
            bail!("unknown setting `{k}`");
        }
        kv.set(k, v);
    }
    Ok(kv)
}

pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn get<T: FromStr>(kv: &KvFile, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.parse_value(key)? {
        *slot = v;
    }
    Ok(())
}

fn get_bool(kv: &KvFile, key: &str, slot: &mut bool) -> Result<()> {
    if let Some(v) = kv.get(key) {
        *slot = match v {
            "true" | "yes" | "on" | "1" => true,
            "false" | "no" | "off" | "0" => false,
            _ => bail!("`{key}` expects true or false, got {v:?}"),
        };
    }
    Ok(())
}

fn get_widths(kv: &KvFile, key: &str, slot: &mut Vec<usize>) -> Result<()> {
    if let Some(v) = kv.get(key) {
        *slot = v
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("`{key}` expects whole numbers, got {v:?}"))?;
    }
    Ok(())
}

impl Settings {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut s = Settings::default();
        get(kv, "seed", &mut s.seed)?;
        get(kv, "threads", &mut s.threads)?;
        get(kv, "rings", &mut s.rings)?;
        get(kv, "warmup", &mut s.warmup)?;
        get(kv, "iou", &mut s.iou)?;

        let p = &mut s.pipeline;
        get(kv, "grid_origin_x", &mut p.ground.origin[0])?;
        get(kv, "grid_origin_y", &mut p.ground.origin[1])?;
        get(kv, "grid_length", &mut p.ground.length)?;
        get(kv, "grid_width", &mut p.ground.width)?;
        get(kv, "cell_length", &mut p.ground.cell_length)?;
        get(kv, "cell_width", &mut p.ground.cell_width)?;
        get(kv, "bin_width", &mut p.ground.bin_width)?;
        get(kv, "ground_ratio", &mut p.ground.ground_ratio)?;
        if let Some(v) = kv.get("height_rule") {
            p.ground.height_rule = HeightRule::from_str(v).map_err(anyhow::Error::msg)?;
        }
        get(kv, "d_o", &mut p.d_o)?;
        if let Some(v) = kv.get("backend") {
            p.backend = v.parse().map_err(anyhow::Error::msg)?;
        }
        get(kv, "t_d", &mut p.cluster.t_d)?;
        get(kv, "h_d", &mut p.cluster.h_d)?;
        get(kv, "v_d", &mut p.cluster.v_d)?;
        get(kv, "mini_points", &mut p.cluster.mini_points)?;
        get_bool(kv, "filtering", &mut p.filtering)?;
        get(kv, "max_length", &mut p.filter.max_length)?;
        get(kv, "max_width", &mut p.filter.max_width)?;
        get(kv, "min_height", &mut p.filter.min_height)?;
        if let Some(deg) = kv.parse_value::<f64>("theta_t_deg")? {
            p.filter.theta_t = deg.to_radians();
        }
        if let Some(path) = kv.get("curve") {
            p.filter.curve = Some(MinPointsCurve::load(path).with_context(|| format!("loading curve {path}"))?);
        }
        match (kv.parse_value::<f64>("curve_a")?, kv.parse_value::<f64>("curve_k")?) {
            (Some(a), Some(k)) => p.filter.curve = Some(MinPointsCurve { a, k }),
            (None, None) => {}
            _ => bail!("`curve_a` and `curve_k` must be given together"),
        }
        p.validate()?;
        get(kv, "curve_bin", &mut s.curve_bin)?;
        if !(s.curve_bin > 0.0) {
            bail!("`curve_bin` must be positive");
        }

        s.model = kv.get("model").map(PathBuf::from);
        let c = &mut s.classifier;
        get(kv, "n_points", &mut c.n_points)?;
        get_widths(kv, "point_widths", &mut c.point_widths)?;
        get_widths(kv, "head_widths", &mut c.head_widths)?;
        get(kv, "keep_prob", &mut c.keep_prob)?;
        get_bool(kv, "use_tnet", &mut c.use_tnet)?;
        c.validate()?;

        let t = &mut s.training;
        get(kv, "learning_rate", &mut t.learning_rate)?;
        get(kv, "decay_rate", &mut t.decay_rate)?;
        get(kv, "decay_steps", &mut t.decay_steps)?;
        get(kv, "batch_size", &mut t.batch_size)?;
        get(kv, "epochs", &mut t.epochs)?;
        get_bool(kv, "augment", &mut t.augment)?;
        if let Some(v) = kv.parse_value::<f64>("target_accuracy")? {
            t.target_accuracy = Some(v);
        }
        t.seed = s.seed;
        t.validate()?;
        get(kv, "validation_split", &mut s.validation_split)?;
        if !(0.0..1.0).contains(&s.validation_split) {
            bail!("`validation_split` must lie in [0, 1)");
        }

        let o = &mut s.pso;
        get(kv, "particles", &mut o.particles)?;
        get(kv, "generations", &mut o.generations)?;
        get(kv, "alpha", &mut o.alpha)?;
        get(kv, "lambda", &mut o.lambda)?;
        get(kv, "theta", &mut o.theta)?;
        if let Some(v) = kv.get("bounds") {
            match parse_numbers(v).as_deref() {
                Some(b) if b.len() == 6 => o.bounds = b.chunks(2).map(|c| (c[0], c[1])).collect(),
                _ => bail!("`bounds` expects six numbers: h_d, v_d and d_o intervals"),
            }
        }
        o.seed = s.seed;
        o.validate()?;
        Ok(s)
    }

    /// Every key with its effective value, loadable with `--config`.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        let p = &self.pipeline;
        let list = |v: &[usize]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ");
        kv.push("seed", self.seed);
        kv.push("threads", self.threads);
        kv.push("rings", self.rings);
        kv.push("warmup", self.warmup);
        kv.push("iou", self.iou);
        kv.push("grid_origin_x", p.ground.origin[0]);
        kv.push("grid_origin_y", p.ground.origin[1]);
        kv.push("grid_length", p.ground.length);
        kv.push("grid_width", p.ground.width);
        kv.push("cell_length", p.ground.cell_length);
        kv.push("cell_width", p.ground.cell_width);
        kv.push("bin_width", p.ground.bin_width);
        kv.push("ground_ratio", p.ground.ground_ratio);
        kv.push(
            "height_rule",
            match p.ground.height_rule {
                HeightRule::LowerEdge => "lower_edge",
                HeightRule::BinMean => "bin_mean",
            },
        );
        kv.push("d_o", p.d_o);
        kv.push("backend", p.backend);
        kv.push("t_d", p.cluster.t_d);
        kv.push("h_d", p.cluster.h_d);
        kv.push("v_d", p.cluster.v_d);
        kv.push("mini_points", p.cluster.mini_points);
        kv.push("filtering", p.filtering);
        kv.push("max_length", p.filter.max_length);
        kv.push("max_width", p.filter.max_width);
        kv.push("min_height", p.filter.min_height);
        kv.push("theta_t_deg", p.filter.theta_t.to_degrees());
        if let Some(c) = p.filter.curve {
            kv.push("curve_a", format!("{:e}", c.a));
            kv.push("curve_k", format!("{:e}", c.k));
        }
        kv.push("curve_bin", self.curve_bin);
        if let Some(m) = &self.model {
            kv.push("model", m.display());
        }
        let c = &self.classifier;
        kv.push("n_points", c.n_points);
        kv.push("point_widths", list(&c.point_widths));
        kv.push("head_widths", list(&c.head_widths));
        kv.push("keep_prob", c.keep_prob);
        kv.push("use_tnet", c.use_tnet);
        let t = &self.training;
        kv.push("learning_rate", t.learning_rate);
        kv.push("decay_rate", t.decay_rate);
        kv.push("decay_steps", t.decay_steps);
        kv.push("batch_size", t.batch_size);
        kv.push("epochs", t.epochs);
        kv.push("augment", t.augment);
        if let Some(a) = t.target_accuracy {
            kv.push("target_accuracy", a);
        }
        kv.push("validation_split", self.validation_split);
        let o = &self.pso;
        kv.push("particles", o.particles);
        kv.push("generations", o.generations);
        kv.push("alpha", o.alpha);
        kv.push("lambda", o.lambda);
        kv.push("theta", o.theta);
        kv.push("bounds", o.bounds.iter().map(|(a, b)| format!("{a} {b}")).collect::<Vec<_>>().join(" "));
        kv
    }
}
