//! Shared geometric types and primitive point-set operations.
//!
//! Coordinates are in the Velodyne sensor frame: x forward, y left, z up,
//! all in meters.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]` when the source provides one.
    pub intensity: Option<f32>,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, intensity: None }
    }

    pub const fn with_intensity(x: f64, y: f64, z: f64, intensity: f32) -> Self {
        Self { x, y, z, intensity: Some(intensity) }
    }

    #[inline]
    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.intensity.is_none_or(f32::is_finite)
    }

    #[inline]
    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Euclidean distance to the sensor origin.
    #[inline]
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Horizontal bearing about the sensor, in `(-pi, pi]`.
    #[inline]
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Vertical angle above the sensor's horizontal plane.
    #[inline]
    pub fn elevation(&self) -> f64 {
        self.z.atan2(self.x.hypot(self.y))
    }
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Point3::new(x, y, z)
    }
}

/// An ordered point set, optionally carrying the scan ring of every point.
///
/// Within one ring the points keep the sensor's sweep order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    rings: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, rings: None }
    }

    pub fn with_rings(points: Vec<Point3>, rings: Vec<u16>) -> Result<Self> {
        if rings.len() != points.len() {
            return Err(Error::RingLengthMismatch { rings: rings.len(), points: points.len() });
        }
        Ok(Self { points, rings: Some(rings) })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn rings(&self) -> Option<&[u16]> {
        self.rings.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<u16>>) {
        (self.points, self.rings)
    }

    /// Keeps the points whose mask entry is `true`, preserving order and rings.
    pub fn retain_mask(&self, keep: &[bool]) -> PointCloud {
        debug_assert_eq!(keep.len(), self.points.len());
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        let rings = self.rings.as_ref().map(|rings| {
            rings.iter().zip(keep).filter(|(_, &k)| k).map(|(r, _)| *r).collect()
        });
        PointCloud { points, rings }
    }

    /// Copies the selected points in index order.
    pub fn select(&self, indices: &[usize]) -> Result<Vec<Point3>> {
        indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or(Error::IndexOutOfRange { index: i, len: self.points.len() })
            })
            .collect()
    }
}

/// Axis-aligned box in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3D {
    /// Fails unless `min <= max` componentwise.
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(Error::Degenerate(format!("box min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn from_center_size(center: [f64; 3], size: [f64; 3]) -> Self {
        let h = size.map(|s| s.abs() / 2.0);
        Self {
            min: [center[0] - h[0], center[1] - h[1], center[2] - h[2]],
            max: [center[0] + h[0], center[1] + h[1], center[2] + h[2]],
        }
    }

    /// Smallest box containing every point of the iterator.
    pub fn enclosing<I: IntoIterator<Item = [f64; 3]>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Box3D { min: first, max: first };
        for p in it {
            b.expand(p);
        }
        Some(b)
    }

    #[inline]
    pub fn expand(&mut self, p: [f64; 3]) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Extent along x, y and z: length, width and height.
    pub fn size(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn volume(&self) -> f64 {
        let [l, w, h] = self.size();
        l * w * h
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn inflated(&self, margin: f64) -> Box3D {
        Box3D {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    pub fn intersection_volume(&self, other: &Box3D) -> f64 {
        (0..3)
            .map(|k| (self.max[k].min(other.max[k]) - self.min[k].max(other.min[k])).max(0.0))
            .product()
    }

    /// The eight corners, bottom face first.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (a, b) = (self.min, self.max);
        [
            [a[0], a[1], a[2]],
            [b[0], a[1], a[2]],
            [b[0], b[1], a[2]],
            [a[0], b[1], a[2]],
            [a[0], a[1], b[2]],
            [b[0], a[1], b[2]],
            [b[0], b[1], b[2]],
            [a[0], b[1], b[2]],
        ]
    }
}

/// A group of point indices into a source cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub indices: Vec<usize>,
    pub label: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Label-free view of a clustering: each group sorted, groups sorted by
/// their first index. Two clusterings describe the same partition iff their
/// canonical forms are equal.
pub fn canonical_partition(clusters: &[Cluster]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut g = c.indices.clone();
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort();
    groups
}

/// Componentwise bounds of the selected points.
pub fn compute_aabb(cloud: &PointCloud, indices: &[usize]) -> Result<Box3D> {
    if indices.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let pts = cloud.points();
    let mut out: Option<Box3D> = None;
    for &i in indices {
        let p = pts.get(i).ok_or(Error::IndexOutOfRange { index: i, len: pts.len() })?;
        match out.as_mut() {
            Some(b) => b.expand(p.xyz()),
            None => out = Some(Box3D { min: p.xyz(), max: p.xyz() }),
        }
    }
    Ok(out.expect("non-empty"))
}

/// Draws exactly `n` points: without replacement when the input is large
/// enough, with replacement otherwise.
pub fn sample_points(points: &[Point3], n: usize, seed: u64) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to sample"));
    }
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if points.len() >= n {
        Ok(index::sample(&mut rng, points.len(), n).into_iter().map(|i| points[i]).collect())
    } else {
        Ok((0..n).map(|_| points[rng.random_range(0..points.len())]).collect())
    }
}
