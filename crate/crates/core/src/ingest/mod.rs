//! Point clouds, labels and calibration from KITTI, ring recovery, and
//! synthetic labelled scenes.

mod kitti;
mod rings;
mod synthetic;

pub use kitti::{
    load_labels, load_velodyne, parse_labels, parse_velodyne, velodyne_bytes, write_velodyne,
    CalibrationSet, KittiDataset, KittiLabel,
};
pub use rings::recover_rings;
pub use synthetic::{
    generate_scene, isolated_objects_spec, object_samples, random_scene_spec, ObjectSpec, PointTag, RandomSceneConfig, MIN_LABELLED_RETURNS,
    Rect, SceneSpec, Shape, SyntheticScene, TerrainPatch,
};

use std::fmt;
use std::str::FromStr;

use crate::geom::{Box3D, PointCloud};

/// Proposal classes, in classifier output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    /// Background, or any labelled type outside the four object classes.
    Background = 0,
    Car = 1,
    Pedestrian = 2,
    Van = 3,
    Cyclist = 4,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Background,
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Van,
        ObjectClass::Cyclist,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// True for the four object-of-interest classes.
    pub fn is_object(self) -> bool {
        self != ObjectClass::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Background => "background",
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Van => "van",
            ObjectClass::Cyclist => "cyclist",
        }
    }

    /// Maps a KITTI `type` field. `DontCare` yields `None`.
    pub fn from_kitti(kind: &str) -> Option<Self> {
        match kind {
            "DontCare" => None,
            "Car" => Some(ObjectClass::Car),
            "Van" => Some(ObjectClass::Van),
            "Pedestrian" => Some(ObjectClass::Pedestrian),
            "Cyclist" => Some(ObjectClass::Cyclist),
            _ => Some(ObjectClass::Background),
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

/// A labelled object with its axis-aligned box in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class: ObjectClass,
    pub bbox: Box3D,
    pub center: [f64; 3],
    /// Original label record, for KITTI-sourced objects.
    pub source: Option<KittiLabel>,
}

/// One evaluation sample: a ringed cloud plus its labelled objects.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub cloud: PointCloud,
    pub objects: Vec<GroundTruthObject>,
}

impl Frame {
    /// Objects of the four object-of-interest classes.
    pub fn targets(&self) -> impl Iterator<Item = &GroundTruthObject> {
        self.objects.iter().filter(|o| o.class.is_object())
    }
}
