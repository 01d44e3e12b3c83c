//! Model and dataset files.
//!
//! A model file is a text header (configuration, then one `tensor` line per
//! array, then `end`) followed by every tensor as little-endian f64 in header
//! order. A dataset file is a sequence of records: a u8 class, a u32 LE point
//! count and that many f32 LE xyz triples.

use std::fs;
use std::path::Path;

use super::{ClassifierConfig, ClassifierModel, Sample};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::ingest::ObjectClass;

const MAGIC: &str = "lidarprop-model 1";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn model_to_bytes(model: &ClassifierModel) -> Vec<u8> {
    let c = &model.config;
    let mut header = format!(
        "{MAGIC}\nn_points {}\npoint_widths {}\nhead_widths {}\nkeep_prob {}\nbn_eps {}\nbn_momentum {}\nuse_tnet {}\n",
        c.n_points,
        join(&c.point_widths),
        join(&c.head_widths),
        c.keep_prob,
        c.bn_eps,
        c.bn_momentum,
        c.use_tnet
    );
    let tensors = model.tensors(true);
    for (name, shape, _) in &tensors {
        header.push_str(&format!("tensor {name} {}\n", join(shape)));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for (_, _, data) in &tensors {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ClassifierModel> {
    let bad = |msg: String| Error::Model(msg);
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first() != Some(&MAGIC) {
        return Err(bad("missing magic line".into()));
    }
    let mut cfg = ClassifierConfig::default();
    let mut declared = Vec::new();
    for line in &lines[1..] {
        let (key, value) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number in {line:?}")));
        let widths = |v: &str| -> Result<Vec<usize>> {
            v.split_whitespace().map(|w| w.parse().map_err(|_| bad(format!("bad width in {line:?}")))).collect()
        };
        match key {
            "n_points" => cfg.n_points = value.parse().map_err(|_| bad(format!("bad n_points {value:?}")))?,
            "point_widths" => cfg.point_widths = widths(value)?,
            "head_widths" => cfg.head_widths = widths(value)?,
            "keep_prob" => cfg.keep_prob = num(value)?,
            "bn_eps" => cfg.bn_eps = num(value)?,
            "bn_momentum" => cfg.bn_momentum = num(value)?,
            "use_tnet" => cfg.use_tnet = value.parse().map_err(|_| bad(format!("bad use_tnet {value:?}")))?,
            "tensor" => {
                let mut parts = value.split_whitespace();
                let name = parts.next().ok_or_else(|| bad("tensor without name".into()))?.to_string();
                declared.push((name, widths(&parts.collect::<Vec<_>>().join(" "))?));
            }
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
    }
    cfg.validate()?;
    let mut model = ClassifierModel::new(&cfg, 0)?;
    let mut tensors = model.tensors_mut(true);
    if tensors.len() != declared.len() {
        return Err(bad(format!("expected {} tensors, header lists {}", tensors.len(), declared.len())));
    }
    let mut data = &bytes[pos..];
    for ((name, shape, dst), (dname, dshape)) in tensors.iter_mut().zip(&declared) {
        if name != dname || shape != dshape {
            return Err(bad(format!("tensor {dname} {dshape:?} does not match expected {name} {shape:?}")));
        }
        let need = dst.len() * 8;
        if data.len() < need {
            return Err(bad(format!("truncated data for {name}")));
        }
        for (d, chunk) in dst.iter_mut().zip(data[..need].chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        data = &data[need..];
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    Ok(model)
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    model_from_bytes(&fs::read(path)?).map_err(|e| match e {
        Error::Model(msg) => Error::Model(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn dataset_to_bytes(samples: &[Sample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        out.push(s.label.index() as u8);
        out.extend_from_slice(&(s.points.len() as u32).to_le_bytes());
        for p in &s.points {
            for v in [p.x, p.y, p.z] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8], path: &Path) -> Result<Vec<Sample>> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut samples = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 5 {
            return Err(bad(format!("truncated record header in record {}", samples.len())));
        }
        let label = ObjectClass::from_index(rest[0] as usize)
            .ok_or_else(|| bad(format!("unknown class {} in record {}", rest[0], samples.len())))?;
        let count = u32::from_le_bytes(rest[1..5].try_into().expect("4 bytes")) as usize;
        rest = &rest[5..];
        let need = count * 12;
        if rest.len() < need {
            return Err(bad(format!("truncated points in record {}", samples.len())));
        }
        let f = |c: &[u8]| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        let points = rest[..need].chunks_exact(12).map(|c| Point3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12]))).collect();
        rest = &rest[need..];
        samples.push(Sample { points, label });
    }
    Ok(samples)
}

pub fn write_dataset(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_bytes(samples))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    dataset_from_bytes(&fs::read(path)?, path)
}
