//! Distance-based and scan-line clustering of non-ground points.

use std::collections::VecDeque;
use std::io::Write;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Cluster, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Distance threshold of Euclidean clustering.
    pub t_d: f64,
    /// Gap that splits a ring into segments.
    pub h_d: f64,
    /// Distance that links points of adjacent rings.
    pub v_d: f64,
    /// Linked points needed to join two segments.
    pub mini_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { t_d: 0.5, h_d: 0.49, v_d: 0.58, mini_points: 1 }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_d > 0.0 && self.h_d > 0.0 && self.v_d > 0.0 && self.mini_points >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cluster parameters {self:?}")))
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Clusters from a per-point component id, labelled in order of first point.
fn from_components(n: usize, comp: impl Fn(usize) -> usize) -> Vec<Cluster> {
    let mut label_of = vec![usize::MAX; n];
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..n {
        let c = comp(i);
        if label_of[c] == usize::MAX {
            label_of[c] = clusters.len();
            clusters.push(Cluster { indices: Vec::new(), label: clusters.len() });
        }
        clusters[label_of[c]].indices.push(i);
    }
    clusters
}

/// Points bucketed into a uniform grid, stored as sorted `(cell, index)`.
struct CellIndex {
    entries: Vec<([i64; 3], usize)>,
    size: f64,
    use_z: bool,
}

impl CellIndex {
    fn new(points: &[Point3], ids: impl Iterator<Item = usize>, size: f64, use_z: bool) -> Self {
        let mut entries: Vec<([i64; 3], usize)> = ids.map(|i| (Self::key(&points[i], size, use_z), i)).collect();
        entries.sort_unstable();
        Self { entries, size, use_z }
    }

    fn key(p: &Point3, size: f64, use_z: bool) -> [i64; 3] {
        let z = if use_z { (p.z / size).floor() as i64 } else { 0 };
        [(p.x / size).floor() as i64, (p.y / size).floor() as i64, z]
    }

    /// Calls `f` with every stored index in the cells around `p`.
    fn for_near(&self, p: &Point3, mut f: impl FnMut(usize)) {
        let k = Self::key(p, self.size, self.use_z);
        let dz = if self.use_z { -1..=1 } else { 0..=0 };
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in dz.clone() {
                    let cell = [k[0] + dx, k[1] + dy, k[2] + dz];
                    let lo = self.entries.partition_point(|e| e.0 < cell);
                    for e in &self.entries[lo..] {
                        if e.0 != cell {
                            break;
                        }
                        f(e.1);
                    }
                }
            }
        }
    }
}

/// Connected components of the graph linking points closer than `t_d`.
/// Neighbour search uses a uniform grid with cell size `t_d`.
pub fn cluster_distance(cloud: &PointCloud, t_d: f64) -> Result<Vec<Cluster>> {
    positive("T_d", t_d)?;
    let pts = cloud.points();
    let index = CellIndex::new(pts, 0..pts.len(), t_d, true);
    let t2 = t_d * t_d;
    let mut comp = vec![usize::MAX; pts.len()];
    let mut queue = VecDeque::new();
    for seed in 0..pts.len() {
        if comp[seed] != usize::MAX {
            continue;
        }
        comp[seed] = seed;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            index.for_near(&pts[i], |j| {
                if comp[j] == usize::MAX && pts[i].distance_squared(&pts[j]) < t2 {
                    comp[j] = seed;
                    queue.push_back(j);
                }
            });
        }
    }
    Ok(from_components(pts.len(), |i| comp[i]))
}

/// Breadth-first Euclidean clustering that scans every point for each
/// expansion: quadratic, kept as the reference for timing comparisons.
pub fn cluster_distance_exhaustive(cloud: &PointCloud, t_d: f64) -> Result<Vec<Cluster>> {
    positive("T_d", t_d)?;
    let pts = cloud.points();
    let t2 = t_d * t_d;
    let mut comp = vec![usize::MAX; pts.len()];
    let mut queue = VecDeque::new();
    for seed in 0..pts.len() {
        if comp[seed] != usize::MAX {
            continue;
        }
        comp[seed] = seed;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let p = pts[i];
            for (j, q) in pts.iter().enumerate() {
                if comp[j] == usize::MAX && p.distance_squared(q) < t2 {
                    comp[j] = seed;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(from_components(pts.len(), |i| comp[i]))
}

/// A run of azimuth-consecutive points of one ring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub ring: usize,
    pub indices: Vec<usize>,
}

/// Point indices of every ring, in cloud (sweep) order. Ring 0 is the top.
fn ring_members(cloud: &PointCloud) -> Result<Vec<Vec<usize>>> {
    let rings = cloud.rings().ok_or(Error::RingsRequired)?;
    let n_rings = rings.iter().map(|&r| r as usize + 1).max().unwrap_or(0);
    let mut members = vec![Vec::new(); n_rings];
    for (i, &r) in rings.iter().enumerate() {
        members[r as usize].push(i);
    }
    Ok(members)
}

fn split_ring(pts: &[Point3], ring: usize, members: &[usize], h_d: f64) -> Vec<Segment> {
    let mut segs: Vec<Segment> = Vec::new();
    for (k, &i) in members.iter().enumerate() {
        if k == 0 || pts[members[k - 1]].distance(&pts[i]) >= h_d {
            segs.push(Segment { ring, indices: Vec::new() });
        }
        segs.last_mut().expect("segment started").indices.push(i);
    }
    // The sweep is circular: rejoin the runs on either side of the seam.
    if segs.len() > 1 {
        let (first, last) = (members[0], members[members.len() - 1]);
        if pts[last].distance(&pts[first]) < h_d {
            let tail = segs.pop().expect("two segments");
            let head = std::mem::take(&mut segs[0].indices);
            segs[0].indices = tail.indices;
            segs[0].indices.extend(head);
        }
    }
    segs
}

/// Splits every ring into segments at gaps of at least `h_d`. The outer
/// vector is indexed by ring.
pub fn ring_segments(cloud: &PointCloud, h_d: f64) -> Result<Vec<Vec<Segment>>> {
    positive("H_d", h_d)?;
    let members = ring_members(cloud)?;
    let pts = cloud.points();
    Ok(members.par_iter().enumerate().map(|(r, m)| split_ring(pts, r, m, h_d)).collect())
}

/// Scan-line clustering.
///
/// Rings are visited from the top. Each segment of the current ring is
/// tested against the segments of the ring above; it joins every segment
/// that has a partner within `v_d` for at least `mini_points` of its points.
/// When it joins several, their clusters collapse onto the smallest key.
/// Cluster labels are those keys.
pub fn cluster_scan(cloud: &PointCloud, params: &ClusterParams) -> Result<Vec<Cluster>> {
    params.validate()?;
    let segments = ring_segments(cloud, params.h_d)?;
    let pts = cloud.points();
    let n = pts.len();
    let v2 = params.v_d * params.v_d;

    // Points of every live key; emptied when merged away.
    let mut global: Vec<Vec<usize>> = Vec::new();
    // Segment id of each point in the ring above, for neighbour lookups.
    let mut seg_of = vec![usize::MAX; n];
    // (key, segment) of the ring above and of the current ring.
    let mut above: Vec<usize> = Vec::new();
    let mut above_grid: Option<CellIndex> = None;
    let mut prev_ring: Option<usize> = None;
    let mut counts: Vec<usize> = Vec::new();
    let mut touched: Vec<usize> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();

    for (r, ring_segs) in segments.iter().enumerate() {
        if ring_segs.is_empty() {
            continue;
        }
        let adjacent = prev_ring == Some(r.wrapping_sub(1)) && r > 0;
        let mut current: Vec<usize> = Vec::with_capacity(ring_segs.len());
        counts.clear();
        counts.resize(above.len(), 0);
        for seg in ring_segs {
            let mut linked: Vec<usize> = Vec::new();
            if adjacent {
                let grid = above_grid.as_ref().expect("grid of the ring above");
                touched.clear();
                for &i in &seg.indices {
                    seen.clear();
                    grid.for_near(&pts[i], |j| {
                        let s = seg_of[j];
                        if !seen.contains(&s) && pts[i].distance_squared(&pts[j]) < v2 {
                            seen.push(s);
                        }
                    });
                    for &s in &seen {
                        if counts[s] == 0 {
                            touched.push(s);
                        }
                        counts[s] += 1;
                    }
                }
                for &s in &touched {
                    if counts[s] >= params.mini_points {
                        linked.push(s);
                    }
                    counts[s] = 0;
                }
            }
            let mut keys: Vec<usize> = linked.iter().map(|&s| above[s]).collect();
            keys.sort_unstable();
            keys.dedup();
            let key = match keys.first() {
                None => {
                    global.push(Vec::new());
                    global.len() - 1
                }
                Some(&key) => {
                    for &other in &keys[1..] {
                        let mut moved = std::mem::take(&mut global[other]);
                        if moved.len() > global[key].len() {
                            std::mem::swap(&mut moved, &mut global[key]);
                        }
                        global[key].extend(moved);
                        for k in above.iter_mut().chain(current.iter_mut()) {
                            if *k == other {
                                *k = key;
                            }
                        }
                    }
                    key
                }
            };
            global[key].extend_from_slice(&seg.indices);
            current.push(key);
        }
        for (s, seg) in ring_segs.iter().enumerate() {
            for &i in &seg.indices {
                seg_of[i] = s;
            }
        }
        above_grid = Some(CellIndex::new(
            pts,
            ring_segs.iter().flat_map(|s| s.indices.iter().copied()),
            params.v_d,
            false,
        ));
        above = current;
        prev_ring = Some(r);
    }

    Ok(global
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(label, mut indices)| {
            indices.sort_unstable();
            Cluster { indices, label }
        })
        .collect())
}

/// Reference for [`cluster_scan`]: connected components of the explicit
/// segment graph, with every adjacent-ring segment pair tested exhaustively.
pub fn scan_oracle(cloud: &PointCloud, params: &ClusterParams) -> Result<Vec<Cluster>> {
    params.validate()?;
    let rings = ring_segments(cloud, params.h_d)?;
    let pts = cloud.points();
    let segs: Vec<&Segment> = rings.iter().flatten().collect();
    let mut uf = UnionFind::<usize>::new(segs.len());
    let v2 = params.v_d * params.v_d;
    for (a, sa) in segs.iter().enumerate() {
        for (b, sb) in segs.iter().enumerate() {
            if sb.ring + 1 != sa.ring {
                continue;
            }
            let linked = sa
                .indices
                .iter()
                .filter(|&&i| sb.indices.iter().any(|&j| pts[i].distance_squared(&pts[j]) < v2))
                .count();
            if linked >= params.mini_points {
                uf.union(a, b);
            }
        }
    }
    let mut seg_of_point = vec![0usize; pts.len()];
    for (s, seg) in segs.iter().enumerate() {
        for &i in &seg.indices {
            seg_of_point[i] = s;
        }
    }
    Ok(from_components(pts.len(), |i| uf.find(seg_of_point[i])))
}

/// Writes `point_index,cluster_id` rows.
pub fn write_clusters_csv<W: Write>(clusters: &[Cluster], out: W) -> Result<()> {
    let mut rows: Vec<(usize, usize)> =
        clusters.iter().flat_map(|c| c.indices.iter().map(move |&i| (i, c.label))).collect();
    rows.sort_unstable();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point_index", "cluster_id"])?;
    for (i, c) in rows {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
