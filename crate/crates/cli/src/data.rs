//! Where frames come from, and the digest of those inputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use lidarprop::ingest::{generate_scene, load_velodyne, random_scene_spec, recover_rings, Frame, KittiDataset, RandomSceneConfig, SceneSpec};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Velodyne `.bin` files, or directories holding them. These carry no labels.
    pub inputs: Vec<PathBuf>,
    /// KITTI object root with `velodyne/`, `label_2/` and `calib/`.
    #[arg(long, value_name = "DIR")]
    pub kitti: Option<PathBuf>,
    /// Generate this many random labelled street scenes.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Scene file to use for `--synthetic` instead of random scenes.
    #[arg(long, value_name = "FILE", requires = "synthetic")]
    pub scene: Option<PathBuf>,
    /// Use at most this many frames.
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
}

/// One frame to load.
#[derive(Debug, Clone)]
pub enum Item {
    File(PathBuf),
    Kitti(String),
    Synthetic { id: String, spec: Box<SceneSpec>, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Source {
    pub items: Vec<Item>,
    kitti: Option<KittiDataset>,
    pub labelled: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn velodyne_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "bin"));
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

impl DataArgs {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty() && self.kitti.is_none() && self.synthetic.is_none()
    }

    pub fn source(&self, seed: u64) -> Result<Source> {
        let given = [!self.inputs.is_empty(), self.kitti.is_some(), self.synthetic.is_some()];
        match given.iter().filter(|&&g| g).count() {
            0 => bail!("no input frames: pass velodyne files, --kitti DIR or --synthetic N"),
            1 => {}
            _ => bail!("pass only one of: velodyne files, --kitti, --synthetic"),
        }
        let mut source = if let Some(root) = &self.kitti {
            let ds = KittiDataset::open(root)?;
            let items = ds.frame_ids()?.into_iter().map(Item::Kitti).collect();
            Source { items, kitti: Some(ds), labelled: true }
        } else if let Some(n) = self.synthetic {
            let fixed = self.scene.as_ref().map(SceneSpec::load).transpose().context("reading scene file")?;
            let cfg = RandomSceneConfig::default();
            let items = (0..n as u64)
                .map(|i| {
                    let s = seed.wrapping_add(i);
                    let spec = fixed.clone().unwrap_or_else(|| random_scene_spec(&cfg, s));
                    Item::Synthetic { id: format!("{i:06}"), spec: Box::new(spec), seed: s }
                })
                .collect();
            Source { items, kitti: None, labelled: true }
        } else {
            let mut items = Vec::new();
            for p in &self.inputs {
                items.extend(velodyne_files(p)?.into_iter().map(Item::File));
            }
            Source { items, kitti: None, labelled: false }
        };
        if let Some(n) = self.frames {
            source.items.truncate(n);
        }
        if source.items.is_empty() {
            bail!("the input holds no frames");
        }
        Ok(source)
    }
}

impl Item {
    pub fn id(&self) -> String {
        match self {
            Item::File(p) => p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            Item::Kitti(id) => id.clone(),
            Item::Synthetic { id, .. } => id.clone(),
        }
    }
}

impl Source {
    pub fn load(&self, item: &Item, rings: usize) -> Result<Frame> {
        match item {
            Item::File(p) => {
                let raw = load_velodyne(p).with_context(|| format!("reading {}", p.display()))?;
                let cloud = if raw.is_empty() { raw } else { recover_rings(&raw, rings)? };
                Ok(Frame { id: item.id(), cloud, objects: Vec::new() })
            }
            Item::Kitti(id) => {
                let ds = self.kitti.as_ref().expect("kitti source");
                Ok(ds.load_frame(id, rings).with_context(|| format!("loading KITTI frame {id}"))?)
            }
            Item::Synthetic { id, spec, seed } => Ok(generate_scene(spec, *seed)?.into_frame(id.clone())),
        }
    }

    pub fn load_all(&self, rings: usize) -> Result<Vec<Frame>> {
        use rayon::prelude::*;
        self.items.par_iter().map(|i| self.load(i, rings)).collect()
    }

    /// SHA-256 of every input: file contents, or the scene description and
    /// seed of generated frames.
    pub fn digests(&self) -> Result<Vec<InputDigest>> {
        let mut out = Vec::new();
        for item in &self.items {
            match item {
                Item::File(p) => out.push(file_digest(p)?),
                Item::Kitti(id) => {
                    for p in self.kitti.as_ref().expect("kitti source").frame_files(id) {
                        if p.exists() {
                            out.push(file_digest(&p)?);
                        }
                    }
                }
                Item::Synthetic { id, spec, seed } => {
                    out.push(text_digest(format!("synthetic:{id}"), &format!("{}seed = {seed}\n", spec.to_kv_text())));
                }
            }
        }
        Ok(out)
    }
}

pub fn file_digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest { name: path.display().to_string(), sha256: hex(&Sha256::digest(&bytes)) })
}

/// Digest of generated input, described by `text`.
pub fn text_digest(name: String, text: &str) -> InputDigest {
    InputDigest { name, sha256: hex(&Sha256::digest(text.as_bytes())) }
}

/// Digest over the concatenated per-input digests.
pub fn combined_digest(parts: &[InputDigest]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.name.as_bytes());
        h.update(b"\0");
        h.update(p.sha256.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}
