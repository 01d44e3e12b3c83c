//! Piecewise-constant ground estimation and removal, plus a single-plane
//! RANSAC baseline.

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// How a cell's ground height is read off its qualifying histogram bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightRule {
    /// Lower edge of the bin.
    LowerEdge,
    /// Mean height of the points in the bin. Tracks the surface itself
    /// rather than its lowest noise excursions.
    #[default]
    BinMean,
}

impl std::str::FromStr for HeightRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lower_edge" | "lower-edge" => Ok(HeightRule::LowerEdge),
            "bin_mean" | "bin-mean" => Ok(HeightRule::BinMean),
            _ => Err(format!("unknown height rule {s:?}")),
        }
    }
}

/// Grid geometry and histogram settings. The grid covers
/// `x in [origin[0], origin[0] + length)` and `y in [origin[1], origin[1] + width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundGridConfig {
    pub origin: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub cell_length: f64,
    pub cell_width: f64,
    pub bin_width: f64,
    pub ground_ratio: f64,
    pub height_rule: HeightRule,
}

impl Default for GroundGridConfig {
    fn default() -> Self {
        Self {
            origin: [0.0, -40.0],
            length: 70.0,
            width: 80.0,
            cell_length: 3.5,
            cell_width: 4.0,
            bin_width: 0.15,
            ground_ratio: 0.05,
            height_rule: HeightRule::BinMean,
        }
    }
}

impl GroundGridConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.length > 0.0
            && self.width > 0.0
            && self.cell_length > 0.0
            && self.cell_width > 0.0
            && self.cell_length <= self.length
            && self.cell_width <= self.width
            && self.bin_width > 0.0
            && self.ground_ratio > 0.0
            && self.ground_ratio < 1.0
            && self.origin.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ground grid {self:?}")))
        }
    }

    /// Number of cells along x and y.
    pub fn shape(&self) -> (usize, usize) {
        (
            (self.length / self.cell_length - 1e-9).ceil() as usize,
            (self.width / self.cell_width - 1e-9).ceil() as usize,
        )
    }

    /// Cell `(row, col)` holding `(x, y)`, or `None` outside the region.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let u = x - self.origin[0];
        let v = y - self.origin[1];
        if !(u >= 0.0 && u < self.length && v >= 0.0 && v < self.width) {
            return None;
        }
        let (rows, cols) = self.shape();
        let r = ((u / self.cell_length) as usize).min(rows - 1);
        let c = ((v / self.cell_width) as usize).min(cols - 1);
        Some((r, c))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (row as f64 + 0.5) * self.cell_length,
            self.origin[1] + (col as f64 + 0.5) * self.cell_width,
        ]
    }
}

/// Ground height per cell; `None` marks a cell that received no points.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundGrid {
    cfg: GroundGridConfig,
    rows: usize,
    cols: usize,
    heights: Vec<Option<f64>>,
}

impl GroundGrid {
    /// Grid with explicit heights, row-major over `cfg.shape()`.
    pub fn from_heights(cfg: GroundGridConfig, heights: Vec<Option<f64>>) -> Result<Self> {
        cfg.validate()?;
        let (rows, cols) = cfg.shape();
        if heights.len() != rows * cols {
            return Err(Error::Config(format!(
                "expected {} cell heights, got {}",
                rows * cols,
                heights.len()
            )));
        }
        Ok(Self { cfg, rows, cols, heights })
    }

    pub fn uniform(cfg: GroundGridConfig, height: f64) -> Result<Self> {
        let (rows, cols) = cfg.shape();
        Self::from_heights(cfg, vec![Some(height); rows * cols])
    }

    pub fn config(&self) -> &GroundGridConfig {
        &self.cfg
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn height(&self, row: usize, col: usize) -> Option<f64> {
        self.heights[row * self.cols + col]
    }

    pub fn heights(&self) -> &[Option<f64>] {
        &self.heights
    }

    /// Ground height below a point, if it falls in a non-empty cell.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let (r, c) = self.cfg.cell_of(x, y)?;
        self.height(r, c)
    }

    /// Writes `row,col,height` lines; empty cells have an empty height field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "height"])?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let h = self.height(r, c).map(|h| h.to_string()).unwrap_or_default();
                w.write_record([r.to_string(), c.to_string(), h])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Ground height of one cell from its point heights.
fn cell_height(zs: &[f64], cfg: &GroundGridConfig) -> Option<f64> {
    if zs.is_empty() {
        return None;
    }
    let zmin = zs.iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_bins = ((zmax - zmin) / cfg.bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; n_bins];
    let mut sums = vec![0.0f64; n_bins];
    for &z in zs {
        let b = (((z - zmin) / cfg.bin_width) as usize).min(n_bins - 1);
        counts[b] += 1;
        sums[b] += z;
    }
    // The small slack keeps e.g. 0.05 * 100 from rounding up to 6.
    let needed = ((cfg.ground_ratio * zs.len() as f64 - 1e-9).ceil() as usize).max(1);
    let Some(b) = counts.iter().position(|&c| c >= needed) else {
        return Some(zmin);
    };
    Some(match cfg.height_rule {
        HeightRule::LowerEdge => zmin + b as f64 * cfg.bin_width,
        HeightRule::BinMean => (sums[b] / counts[b] as f64).clamp(zmin, zmax),
    })
}

/// Histogram ground estimate per cell. Cells are processed in parallel.
pub fn build_ground_grid(cloud: &PointCloud, cfg: &GroundGridConfig) -> Result<GroundGrid> {
    cfg.validate()?;
    let (rows, cols) = cfg.shape();
    let n_cells = rows * cols;
    let cell: Vec<Option<usize>> =
        cloud.points().iter().map(|p| cfg.cell_of(p.x, p.y).map(|(r, c)| r * cols + c)).collect();
    // Bucket heights by cell (counting sort).
    let mut start = vec![0usize; n_cells + 1];
    for c in cell.iter().flatten() {
        start[c + 1] += 1;
    }
    for i in 0..n_cells {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut zs = vec![0.0; start[n_cells]];
    for (p, c) in cloud.points().iter().zip(&cell) {
        if let Some(c) = *c {
            zs[fill[c]] = p.z;
            fill[c] += 1;
        }
    }
    let heights = (0..n_cells)
        .into_par_iter()
        .map(|c| cell_height(&zs[start[c]..start[c + 1]], cfg))
        .collect();
    Ok(GroundGrid { cfg: *cfg, rows, cols, heights })
}

/// Lowers every cell to the minimum of its 8-neighbourhood and itself,
/// reading only the input grid. Empty neighbours are ignored; an empty cell
/// with a non-empty neighbour takes the neighbourhood minimum.
pub fn postprocess_grid(grid: &GroundGrid) -> GroundGrid {
    let (rows, cols) = (grid.rows, grid.cols);
    let heights = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut best: Option<f64> = None;
            for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    if let Some(h) = grid.height(rr, cc) {
                        best = Some(best.map_or(h, |b: f64| b.min(h)));
                    }
                }
            }
            best
        })
        .collect();
    GroundGrid { cfg: grid.cfg, rows, cols, heights }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundRemovalReport {
    pub removed: usize,
    pub total: usize,
    pub gamma: f64,
}

impl GroundRemovalReport {
    fn new(removed: usize, total: usize) -> Self {
        let gamma = if total == 0 { 0.0 } else { removed as f64 / total as f64 };
        Self { removed, total, gamma }
    }
}

/// `true` for points classified as ground: inside a non-empty cell and no
/// more than `d_o` above its height.
pub fn ground_mask(cloud: &PointCloud, grid: &GroundGrid, d_o: f64) -> Vec<bool> {
    cloud
        .points()
        .iter()
        .map(|p| grid.height_at(p.x, p.y).is_some_and(|h| p.z <= h + d_o))
        .collect()
}

/// Drops ground points. Survivors keep their order and ring indices.
pub fn remove_ground(cloud: &PointCloud, grid: &GroundGrid, d_o: f64) -> (PointCloud, GroundRemovalReport) {
    let ground = ground_mask(cloud, grid, d_o);
    let removed = ground.iter().filter(|&&g| g).count();
    let keep: Vec<bool> = ground.iter().map(|g| !g).collect();
    (cloud.retain_mask(&keep), GroundRemovalReport::new(removed, cloud.len()))
}

/// Plane `a*x + b*y + c*z + d = 0` with a unit normal pointing up (`c >= 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Plane {
    fn from_normal(n: Vector3<f64>, through: Vector3<f64>) -> Self {
        let mut n = n.normalize();
        if n.z < 0.0 || (n.z == 0.0 && (n.y < 0.0 || (n.y == 0.0 && n.x < 0.0))) {
            n = -n;
        }
        Self { a: n.x, b: n.y, c: n.z, d: -n.dot(&through) }
    }

    /// Signed distance along the upward normal.
    pub fn signed_height(&self, p: &Point3) -> f64 {
        self.a * p.x + self.b * p.y + self.c * p.z + self.d
    }
}

/// Total least-squares plane and the eigenvalues of the scatter, ascending.
fn pca_plane(points: &[Point3]) -> (Plane, [f64; 3]) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(p.xyz())) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(p.xyz()) - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    (Plane::from_normal(normal, mean), order.map(|i| eig.eigenvalues[i]))
}

/// Three-point RANSAC maximizing inliers within `inlier_tol`, followed by a
/// least-squares refit over the winning inliers.
pub fn ransac_plane(cloud: &PointCloud, iterations: usize, inlier_tol: f64, seed: u64) -> Result<Plane> {
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!("plane fit needs 3 points, got {}", pts.len())));
    }
    let (_, ev) = pca_plane(pts);
    if ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2] {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..iterations.max(1) {
        let s = index::sample(&mut rng, pts.len(), 3);
        let [p0, p1, p2] = [s.index(0), s.index(1), s.index(2)].map(|i| Vector3::from(pts[i].xyz()));
        let n = (p1 - p0).cross(&(p2 - p0));
        if n.norm() <= 1e-12 * (p1 - p0).norm().max(1.0) * (p2 - p0).norm().max(1.0) {
            continue;
        }
        let plane = Plane::from_normal(n, p0);
        let inliers = pts.iter().filter(|p| plane.signed_height(p).abs() <= inlier_tol).count();
        if best.is_none_or(|(b, _)| inliers > b) {
            best = Some((inliers, plane));
        }
    }
    let Some((_, plane)) = best else {
        return Err(Error::Degenerate("no non-degenerate sample found".into()));
    };
    let inliers: Vec<Point3> =
        pts.iter().copied().filter(|p| plane.signed_height(p).abs() <= inlier_tol).collect();
    if inliers.len() < 3 {
        return Ok(plane);
    }
    let (refit, ev) = pca_plane(&inliers);
    Ok(if ev[1] > 1e-12 * ev[2] { refit } else { plane })
}

/// One row of a ground-removal comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRow {
    pub offset: f64,
    pub gamma_pwc: f64,
    pub gamma_ransac: f64,
}

/// Removal ratios of the grid model and of a single plane at each offset.
pub fn gamma_sweep(cloud: &PointCloud, grid: &GroundGrid, plane: &Plane, offsets: &[f64]) -> Vec<GammaRow> {
    let pts = cloud.points();
    let total = pts.len();
    // Heights above the respective ground model, computed once.
    let above_grid: Vec<Option<f64>> = pts.iter().map(|p| grid.height_at(p.x, p.y).map(|h| p.z - h)).collect();
    let above_plane: Vec<f64> = pts.iter().map(|p| plane.signed_height(p)).collect();
    offsets
        .iter()
        .map(|&offset| {
            let pwc = above_grid.iter().filter(|h| h.is_some_and(|h| h <= offset)).count();
            let ransac = above_plane.iter().filter(|&&h| h <= offset).count();
            GammaRow {
                offset,
                gamma_pwc: GroundRemovalReport::new(pwc, total).gamma,
                gamma_ransac: GroundRemovalReport::new(ransac, total).gamma,
            }
        })
        .collect()
}
