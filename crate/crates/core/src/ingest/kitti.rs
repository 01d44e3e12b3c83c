use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Vector3};

use super::{recover_rings, Frame, GroundTruthObject, ObjectClass};
use crate::error::{Error, Result};
use crate::geom::{Box3D, Point3, PointCloud};

const RECORD_BYTES: usize = 16;

/// Reads a KITTI velodyne scan: packed little-endian `f32` quadruples of
/// `(x, y, z, reflectance)`.
pub fn load_velodyne(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    parse_velodyne(&bytes, path)
}

pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("size {} is not a multiple of {RECORD_BYTES} bytes", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes"));
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if ![x, y, z, r].iter().all(|v| v.is_finite()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("record {i} holds a non-finite value"),
            });
        }
        points.push(Point3::with_intensity(x as f64, y as f64, z as f64, r));
    }
    Ok(PointCloud::new(points))
}

/// Serializes a cloud in the velodyne layout. Coordinates are narrowed to
/// `f32`; a missing intensity is written as zero.
pub fn velodyne_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in cloud.points() {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity.unwrap_or(0.0)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, velodyne_bytes(cloud))?;
    Ok(())
}

/// Sensor-to-camera calibration of one KITTI frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    /// Rigid transform from the velodyne frame to the reference camera.
    pub velo_to_cam: Matrix3x4<f64>,
    /// Rectifying rotation of the reference camera.
    pub rect: Matrix3<f64>,
    /// Projection of the rectified left colour camera (`P2`).
    pub projection: Matrix3x4<f64>,
}

impl CalibrationSet {
    pub fn new(
        velo_to_cam: Matrix3x4<f64>,
        rect: Matrix3<f64>,
        projection: Matrix3x4<f64>,
    ) -> Result<Self> {
        let rot = velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned();
        for (name, m) in [("R0_rect", rect), ("Tr_velo_to_cam", rot)] {
            let err = (m * m.transpose() - Matrix3::identity()).abs().max();
            if err > 1e-4 {
                return Err(Error::Calibration(format!(
                    "{name} rotation is not orthonormal (deviation {err:.2e})"
                )));
            }
        }
        Ok(Self { velo_to_cam, rect, projection })
    }

    /// Camera and sensor frames coincide.
    pub fn identity() -> Self {
        Self {
            velo_to_cam: Matrix3x4::identity(),
            rect: Matrix3::identity(),
            projection: Matrix3x4::identity(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut velo_to_cam = None;
        let mut rect = None;
        let mut p0 = None;
        let mut p2 = None;
        for (n, line) in text.lines().enumerate() {
            let Some((key, rest)) = line.split_once(':') else { continue };
            let vals: Vec<f64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("{key}: {e}"),
                })?;
            let want = |len: usize| -> Result<()> {
                if vals.len() != len {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        msg: format!("{key} expects {len} values, got {}", vals.len()),
                    });
                }
                Ok(())
            };
            match key.trim() {
                "Tr_velo_to_cam" => {
                    want(12)?;
                    velo_to_cam = Some(Matrix3x4::from_row_slice(&vals));
                }
                "R0_rect" => {
                    want(9)?;
                    rect = Some(Matrix3::from_row_slice(&vals));
                }
                "P0" => {
                    want(12)?;
                    p0 = Some(Matrix3x4::from_row_slice(&vals));
                }
                "P2" => {
                    want(12)?;
                    p2 = Some(Matrix3x4::from_row_slice(&vals));
                }
                _ => {}
            }
        }
        let missing = |k: &str| Error::Calibration(format!("{}: missing {k}", path.display()));
        Self::new(
            velo_to_cam.ok_or_else(|| missing("Tr_velo_to_cam"))?,
            rect.ok_or_else(|| missing("R0_rect"))?,
            p2.or(p0).ok_or_else(|| missing("P2"))?,
        )
    }

    /// Maps a point from the rectified camera frame into the sensor frame.
    pub fn rect_to_velo(&self, p: [f64; 3]) -> [f64; 3] {
        let rect_inv = self.rect.try_inverse().unwrap_or_else(|| self.rect.transpose());
        let cam = rect_inv * Vector3::from(p);
        let rot = self.velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned();
        let t = self.velo_to_cam.column(3).into_owned();
        let rot_inv = rot.try_inverse().unwrap_or_else(|| rot.transpose());
        let v = rot_inv * (cam - t);
        [v.x, v.y, v.z]
    }

    pub fn velo_to_rect(&self, p: [f64; 3]) -> [f64; 3] {
        let rot = self.velo_to_cam.fixed_view::<3, 3>(0, 0);
        let t = self.velo_to_cam.column(3);
        let v = self.rect * (rot * Vector3::from(p) + t);
        [v.x, v.y, v.z]
    }
}

/// Raw fields of one `label_2` line.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox_2d: [f64; 4],
    /// Height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Bottom-centre in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    /// The eight box corners in the rectified camera frame (y points down).
    pub fn camera_corners(&self) -> [[f64; 3]; 8] {
        let [h, w, l] = self.dimensions;
        let (s, c) = self.rotation_y.sin_cos();
        let xs = [l, l, -l, -l, l, l, -l, -l].map(|v| v / 2.0);
        let ys = [0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h];
        let zs = [w, -w, -w, w, w, -w, -w, w].map(|v| v / 2.0);
        std::array::from_fn(|i| {
            [
                c * xs[i] + s * zs[i] + self.location[0],
                ys[i] + self.location[1],
                -s * xs[i] + c * zs[i] + self.location[2],
            ]
        })
    }
}

fn parse_label_line(line: &str, n: usize, path: &Path) -> Result<KittiLabel> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n, msg };
    if fields.len() < 15 {
        return Err(err(format!("expected at least 15 fields, got {}", fields.len())));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i].parse().map_err(|_| err(format!("field {} ({:?}) is not a number", i + 1, fields[i])))
    };
    Ok(KittiLabel {
        kind: fields[0].to_string(),
        truncated: num(1)?,
        occluded: num(2)? as i32,
        alpha: num(3)?,
        bbox_2d: [num(4)?, num(5)?, num(6)?, num(7)?],
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if fields.len() > 15 { Some(num(15)?) } else { None },
    })
}

/// Parses `label_2` text, converting every box to a sensor-frame AABB of its
/// eight transformed corners. `DontCare` lines are dropped.
pub fn parse_labels(text: &str, calib: &CalibrationSet, path: &Path) -> Result<Vec<GroundTruthObject>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let label = parse_label_line(line, n + 1, path)?;
        let Some(class) = ObjectClass::from_kitti(&label.kind) else { continue };
        let corners = label.camera_corners().map(|c| calib.rect_to_velo(c));
        let bbox = Box3D::enclosing(corners).expect("eight corners");
        let [x, y, z] = label.location;
        let center = calib.rect_to_velo([x, y - label.dimensions[0] / 2.0, z]);
        out.push(GroundTruthObject { class, bbox, center, source: Some(label) });
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>, calib: &CalibrationSet) -> Result<Vec<GroundTruthObject>> {
    let path = path.as_ref();
    parse_labels(&std::fs::read_to_string(path)?, calib, path)
}

/// A KITTI object-detection training split laid out as
/// `velodyne/`, `label_2/` and `calib/` under one root.
#[derive(Debug, Clone)]
pub struct KittiDataset {
    root: PathBuf,
}

impl KittiDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["velodyne", "label_2", "calib"] {
            if !root.join(sub).is_dir() {
                return Err(Error::Format {
                    path: root.clone(),
                    msg: format!("missing `{sub}` directory"),
                });
            }
        }
        Ok(Self { root })
    }

    /// Frame ids (file stems of `velodyne/*.bin`), sorted.
    pub fn frame_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(self.root.join("velodyne"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "bin") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn velodyne_path(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }

    /// Point cloud, label and calibration files of one frame.
    pub fn frame_files(&self, id: &str) -> [PathBuf; 3] {
        [
            self.velodyne_path(id),
            self.root.join("label_2").join(format!("{id}.txt")),
            self.root.join("calib").join(format!("{id}.txt")),
        ]
    }

    /// Loads one frame with rings recovered for `n_rings` beams.
    pub fn load_frame(&self, id: &str, n_rings: usize) -> Result<Frame> {
        let calib = CalibrationSet::load(self.root.join("calib").join(format!("{id}.txt")))?;
        let objects = load_labels(self.root.join("label_2").join(format!("{id}.txt")), &calib)?;
        let raw = load_velodyne(self.velodyne_path(id))?;
        let cloud = if raw.is_empty() { raw } else { recover_rings(&raw, n_rings)? };
        Ok(Frame { id: id.to_string(), cloud, objects })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(vals: [f32; 4]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn parses_hand_built_records() {
        let mut bytes = record([1.0, 2.0, 3.0, 0.5]);
        bytes.extend(record([4.0, 5.0, 6.0, 0.1]));
        let cloud = parse_velodyne(&bytes, Path::new("t.bin")).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[0], Point3::with_intensity(1.0, 2.0, 3.0, 0.5));
        assert_eq!(cloud.points()[1].xyz(), [4.0, 5.0, 6.0]);
        assert_eq!(cloud.points()[1].intensity, Some(0.1));
        assert!(cloud.rings().is_none());
        assert_eq!(velodyne_bytes(&cloud), bytes);
    }

    #[test]
    fn empty_file_is_empty_cloud() {
        assert!(parse_velodyne(&[], Path::new("e.bin")).unwrap().is_empty());
    }

    #[test]
    fn rejects_truncated_and_non_finite() {
        assert!(matches!(parse_velodyne(&[0u8; 17], Path::new("x")), Err(Error::Format { .. })));
        let bytes = record([1.0, f32::NAN, 0.0, 0.0]);
        assert!(matches!(parse_velodyne(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn point_count_is_size_over_sixteen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.bin");
        let bytes: Vec<u8> = (0..37).flat_map(|i| record([i as f32, 0.0, 1.0, 0.2])).collect();
        std::fs::write(&path, &bytes).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(load_velodyne(&path).unwrap().len(), size / 16);
    }

    const CALIB: &str = "P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0
Tr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0
";

    #[test]
    fn identity_calibration_box_at_origin() {
        // Camera frame equals sensor frame: the AABB is the raw corner hull.
        let text = "Car 0.00 0 0.0 0 0 10 10 1.5 1.6 4.0 0.0 0.0 0.0 0.0\n";
        let objs = parse_labels(text, &CalibrationSet::identity(), Path::new("l")).unwrap();
        assert_eq!(objs.len(), 1);
        let b = objs[0].bbox;
        for (got, want) in b.min.iter().zip([-2.0, -1.5, -0.8]) {
            assert!((got - want).abs() < 1e-12, "{b:?}");
        }
        for (got, want) in b.max.iter().zip([2.0, 0.0, 0.8]) {
            assert!((got - want).abs() < 1e-12, "{b:?}");
        }
        assert!((objs[0].center[1] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn axis_permuting_calibration() {
        // cam_x = -velo_y, cam_y = -velo_z, cam_z = velo_x.
        let calib = CalibrationSet::parse(CALIB, Path::new("c")).unwrap();
        let text = "Car 0.00 0 0.0 0 0 10 10 1.5 1.6 4.0 0.0 1.5 10.0 0.0\n";
        let objs = parse_labels(text, &calib, Path::new("l")).unwrap();
        let b = objs[0].bbox;
        let want_min = [9.2, -2.0, -1.5];
        let want_max = [10.8, 2.0, 0.0];
        for k in 0..3 {
            assert!((b.min[k] - want_min[k]).abs() < 1e-9, "{b:?}");
            assert!((b.max[k] - want_max[k]).abs() < 1e-9, "{b:?}");
        }
        let c = objs[0].center;
        assert!((c[0] - 10.0).abs() < 1e-9 && c[1].abs() < 1e-9 && (c[2] + 0.75).abs() < 1e-9);
        let back = calib.velo_to_rect(calib.rect_to_velo([1.0, 2.0, 3.0]));
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_rotates_footprint() {
        let text = "Van 0 0 0 0 0 1 1 2.0 2.0 4.0 0.0 0.0 0.0 1.5707963267948966\n";
        let objs = parse_labels(text, &CalibrationSet::identity(), Path::new("l")).unwrap();
        let [l, _, w] = objs[0].bbox.size();
        // length now lies along the camera z axis
        assert!((l - 2.0).abs() < 1e-9 && (w - 4.0).abs() < 1e-9);
    }

    #[test]
    fn drops_dont_care_and_handles_empty() {
        let calib = CalibrationSet::identity();
        assert!(parse_labels("", &calib, Path::new("l")).unwrap().is_empty());
        let dc = "DontCare -1 -1 -10 0 0 1 1 -1 -1 -1 -1000 -1000 -1000 -10\n";
        assert!(parse_labels(dc, &calib, Path::new("l")).unwrap().is_empty());
        let truck = "Truck 0 0 0 0 0 1 1 3 2.5 8 0 0 20 0\n";
        assert_eq!(parse_labels(truck, &calib, Path::new("l")).unwrap()[0].class, ObjectClass::Background);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "Car 0 0 0 0 0 1 1 1.5 1.6 4 0 0 5 0\nCar 0 0 oops\n";
        match parse_labels(text, &CalibrationSet::identity(), Path::new("l")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let bad = CALIB.replace("R0_rect: 1 0 0", "R0_rect: 1.1 0 0");
        assert!(matches!(CalibrationSet::parse(&bad, Path::new("c")), Err(Error::Calibration(_))));
    }
}
