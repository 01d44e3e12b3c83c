//! Proposal construction and background rejection by size, occlusion and a
//! distance-dependent minimum point count.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{compute_aabb, Box3D, Cluster, PointCloud};
use crate::ingest::ObjectClass;

/// A cluster with the geometry the filters need.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Position in the unfiltered proposal list of the frame.
    pub id: usize,
    pub cluster: Cluster,
    pub bbox: Box3D,
    pub occluded: bool,
    /// Mean distance of the points to the sensor.
    pub range: f64,
    /// Horizontal bearing interval `[left, right]` with `left` in `(-pi, pi]`
    /// and `left <= right < left + 2*pi`. `right` exceeds `pi` when the span
    /// crosses the rear seam.
    pub span: [f64; 2],
    /// Class scores, once classified.
    pub scores: Option<[f64; ObjectClass::COUNT]>,
}

impl Proposal {
    pub fn new(id: usize, cloud: &PointCloud, cluster: Cluster) -> Result<Self> {
        let bbox = compute_aabb(cloud, &cluster.indices)?;
        let pts = cloud.points();
        let range = cluster.indices.iter().map(|&i| pts[i].range()).sum::<f64>() / cluster.len() as f64;
        let span = bearing_span(cluster.indices.iter().map(|&i| pts[i].azimuth()));
        Ok(Self { id, cluster, bbox, occluded: false, range, span, scores: None })
    }

    pub fn len(&self) -> usize {
        self.cluster.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster.is_empty()
    }

    /// Most likely class and its probability, once classified.
    pub fn class(&self) -> Option<(ObjectClass, f64)> {
        let s = self.scores?;
        let (i, p) = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        Some((ObjectClass::from_index(i)?, *p))
    }
}

/// Smallest circular interval holding every bearing: the complement of the
/// largest gap between sorted bearings.
fn bearing_span(bearings: impl Iterator<Item = f64>) -> [f64; 2] {
    let mut b: Vec<f64> = bearings.collect();
    b.sort_by(f64::total_cmp);
    let n = b.len();
    if n == 0 {
        return [0.0, 0.0];
    }
    // Gap after element i, wrapping from the last to the first.
    let mut best = (TAU - (b[n - 1] - b[0]), n - 1);
    for i in 0..n - 1 {
        let gap = b[i + 1] - b[i];
        if gap > best.0 {
            best = (gap, i);
        }
    }
    let start = b[(best.1 + 1) % n];
    [start, start + (TAU - best.0).max(0.0)]
}

pub fn build_proposals(cloud: &PointCloud, clusters: Vec<Cluster>) -> Result<Vec<Proposal>> {
    clusters.into_iter().enumerate().map(|(id, c)| Proposal::new(id, cloud, c)).collect()
}

/// `n_min(d) = a * exp(-k * d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinPointsCurve {
    pub a: f64,
    pub k: f64,
}

impl MinPointsCurve {
    pub fn eval(&self, d: f64) -> f64 {
        self.a * (-self.k * d).exp()
    }

    /// Two numbers, `a` then `k`.
    pub fn to_text(&self) -> String {
        format!("{:e} {:e}\n", self.a, self.k)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let vals: Vec<f64> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        match vals.as_slice() {
            &[a, k] if text.split_whitespace().count() == 2 => Ok(Self { a, k }),
            _ => Err(Error::Format { path: path.to_path_buf(), msg: "expected two numbers `A k`".into() }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub max_length: f64,
    pub max_width: f64,
    pub min_height: f64,
    /// Angular padding on each side of a span, radians.
    pub theta_t: f64,
    /// Without a curve the minimum-points rule is skipped.
    pub curve: Option<MinPointsCurve>,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { max_length: 8.0, max_width: 4.0, min_height: 0.25, theta_t: 0.5f64.to_radians(), curve: None }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let curve_ok = self.curve.is_none_or(|c| c.a > 0.0 && c.k > 0.0);
        if self.max_length > 0.0 && self.max_width > 0.0 && self.min_height > 0.0 && self.theta_t >= 0.0 && curve_ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid filter parameters {self:?}")))
        }
    }
}

/// Keeps proposals no longer than `max_length` (x), no wider than
/// `max_width` (y) and at least `min_height` tall (z).
pub fn size_filter(proposals: Vec<Proposal>, params: &FilterParams) -> Vec<Proposal> {
    proposals
        .into_iter()
        .filter(|p| {
            let [l, w, h] = p.bbox.size();
            l <= params.max_length && w <= params.max_width && h >= params.min_height
        })
        .collect()
}

/// Whether two spans overlap once each is widened by `pad` on both sides.
pub fn spans_overlap(a: [f64; 2], b: [f64; 2], pad: f64) -> bool {
    let wa = a[1] - a[0] + 2.0 * pad;
    let wb = b[1] - b[0] + 2.0 * pad;
    if wa >= TAU || wb >= TAU {
        return true;
    }
    // Offset of b's padded start from a's padded start, in [0, 2*pi).
    let d = ((b[0] - pad) - (a[0] - pad)).rem_euclid(TAU);
    d <= wa || TAU - d <= wb
}

/// Marks a proposal occluded unless no other padded span overlaps its own,
/// or it is strictly nearer than every proposal whose span does.
pub fn label_occlusion(proposals: &mut [Proposal], theta_t: f64) {
    let snapshot: Vec<([f64; 2], f64)> = proposals.iter().map(|p| (p.span, p.range)).collect();
    for (i, p) in proposals.iter_mut().enumerate() {
        p.occluded = snapshot
            .iter()
            .enumerate()
            .any(|(j, &(span, range))| j != i && spans_overlap(p.span, span, theta_t) && !(p.range < range));
    }
}

/// Drops non-occluded proposals with fewer points than the curve demands at
/// their box-centre distance along x. Occluded proposals always pass.
pub fn min_points_filter(proposals: Vec<Proposal>, curve: &MinPointsCurve) -> Vec<Proposal> {
    proposals
        .into_iter()
        .filter(|p| p.occluded || p.len() as f64 >= curve.eval(p.bbox.center()[0].abs()))
        .collect()
}

/// Size filter, then occlusion labelling of the survivors, then the
/// minimum-points rule when a curve is configured.
pub fn apply_filters(proposals: Vec<Proposal>, params: &FilterParams) -> Vec<Proposal> {
    let mut kept = size_filter(proposals, params);
    label_occlusion(&mut kept, params.theta_t);
    match &params.curve {
        Some(curve) => min_points_filter(kept, curve),
        None => kept,
    }
}

/// Fits `n_min(d) = A exp(-k d)` to the per-bin minimum point counts.
///
/// Samples are `(distance, point count)`. Distances are binned at
/// `interval`; each occupied bin contributes its smallest count, placed at
/// the distance of the sample that attains it. The fit is least squares on
/// `ln(count)`.
pub fn fit_min_points_curve(samples: &[(f64, f64)], interval: f64) -> Result<MinPointsCurve> {
    if !(interval > 0.0) {
        return Err(Error::Config(format!("bin interval must be positive, got {interval}")));
    }
    let mut bins: Vec<(i64, f64, f64)> = Vec::new();
    let mut sorted: Vec<(i64, f64, f64)> =
        samples.iter().map(|&(d, m)| ((d / interval).floor() as i64, d, m)).collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (bin, d, m) in sorted {
        match bins.last_mut() {
            Some(last) if last.0 == bin => {
                if m < last.2 {
                    *last = (bin, d, m);
                }
            }
            _ => bins.push((bin, d, m)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::InsufficientBins);
    }
    if let Some(&(_, d, _)) = bins.iter().find(|b| !(b.2 > 0.0)) {
        return Err(Error::NonPositiveCount(d));
    }
    let n = bins.len() as f64;
    let mx = bins.iter().map(|b| b.1).sum::<f64>() / n;
    let my = bins.iter().map(|b| b.2.ln()).sum::<f64>() / n;
    let sxx: f64 = bins.iter().map(|b| (b.1 - mx).powi(2)).sum();
    let sxy: f64 = bins.iter().map(|b| (b.1 - mx) * (b.2.ln() - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientBins);
    }
    let slope = sxy / sxx;
    let k = -slope;
    if !(k > 1e-12) {
        return Err(Error::NonDecreasingFit(k));
    }
    Ok(MinPointsCurve { a: (my - slope * mx).exp(), k })
}

/// Writes `id,min_x,min_y,min_z,max_x,max_y,max_z,count,occluded,kept`.
/// `kept` lists the ids that survived filtering.
pub fn write_proposals_csv<W: Write>(proposals: &[Proposal], kept: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "min_x", "min_y", "min_z", "max_x", "max_y", "max_z", "count", "occluded", "kept"])?;
    for p in proposals {
        let b = p.bbox;
        let mut row: Vec<String> = vec![p.id.to_string()];
        row.extend(b.min.iter().chain(&b.max).map(|v| format!("{v:.4}")));
        row.push(p.len().to_string());
        row.push(p.occluded.to_string());
        row.push(kept.contains(&p.id).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Normalizes an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use proptest::prelude::*;

    fn proposal_at(id: usize, pts: &[[f64; 3]]) -> (PointCloud, Proposal) {
        let cloud = PointCloud::new(pts.iter().map(|&p| Point3::from(p)).collect());
        let cluster = Cluster { indices: (0..pts.len()).collect(), label: id };
        let p = Proposal::new(id, &cloud, cluster).unwrap();
        (cloud, p)
    }

    fn synthetic(id: usize, span: [f64; 2], range: f64, bbox: Box3D, n: usize) -> Proposal {
        Proposal {
            id,
            cluster: Cluster { indices: (0..n).collect(), label: id },
            bbox,
            occluded: false,
            range,
            span,
            scores: None,
        }
    }

    fn boxed(l: f64, w: f64, h: f64) -> Box3D {
        Box3D::from_center_size([10.0, 0.0, h / 2.0], [l, w, h])
    }

    #[test]
    fn size_examples() {
        let p = FilterParams::default();
        let wall = synthetic(0, [0.0, 0.1], 10.0, boxed(20.0, 0.3, 2.0), 100);
        let car = synthetic(1, [0.0, 0.1], 10.0, boxed(4.0, 1.8, 1.5), 100);
        let patch = synthetic(2, [0.0, 0.1], 10.0, boxed(2.0, 2.0, 0.1), 100);
        let kept = size_filter(vec![wall, car.clone(), patch], &p);
        assert_eq!(kept, vec![car]);
    }

    #[test]
    fn occlusion_examples() {
        let b = boxed(1.0, 1.0, 1.0);
        let mut one = vec![synthetic(0, [0.1, 0.2], 5.0, b, 10)];
        label_occlusion(&mut one, 0.01);
        assert!(!one[0].occluded);

        let mut same_bearing = vec![synthetic(0, [0.1, 0.2], 10.0, b, 10), synthetic(1, [0.12, 0.18], 5.0, b, 10)];
        label_occlusion(&mut same_bearing, 0.01);
        assert!(same_bearing[0].occluded);
        assert!(!same_bearing[1].occluded);

        let mut disjoint = vec![synthetic(0, [0.1, 0.2], 10.0, b, 10), synthetic(1, [0.5, 0.6], 5.0, b, 10)];
        label_occlusion(&mut disjoint, 0.01);
        assert!(!disjoint[0].occluded && !disjoint[1].occluded);

        // Padding alone can create an overlap.
        let mut padded = vec![synthetic(0, [0.1, 0.2], 10.0, b, 10), synthetic(1, [0.215, 0.3], 5.0, b, 10)];
        label_occlusion(&mut padded, 0.01);
        assert!(padded[0].occluded);

        let mut tie = vec![synthetic(0, [0.1, 0.2], 7.0, b, 10), synthetic(1, [0.15, 0.25], 7.0, b, 10)];
        label_occlusion(&mut tie, 0.0);
        assert!(tie[0].occluded && tie[1].occluded);
    }

    #[test]
    fn span_across_rear_seam() {
        let (_, p) = proposal_at(0, &[[-10.0, 0.5, 0.0], [-10.0, -0.5, 0.0]]);
        assert!(p.span[0] > 3.0 && p.span[1] > PI, "{:?}", p.span);
        assert!((p.span[1] - p.span[0] - 2.0 * 0.05f64.atan()).abs() < 1e-12);
        let other = [-PI + 0.01, -PI + 0.02];
        assert!(spans_overlap(p.span, other, 0.0));
        assert!(spans_overlap(other, p.span, 0.0));
        assert!(!spans_overlap(p.span, [0.0, 0.1], 0.0));
    }

    #[test]
    fn proposal_geometry() {
        let (_, p) = proposal_at(3, &[[3.0, 4.0, 0.0], [6.0, 8.0, 0.0]]);
        assert_eq!(p.range, 7.5);
        assert_eq!(p.bbox, Box3D::new([3.0, 4.0, 0.0], [6.0, 8.0, 0.0]).unwrap());
        assert!((p.span[0] - (4.0f64).atan2(3.0)).abs() < 1e-12 && (p.span[1] - p.span[0]).abs() < 1e-12);
    }

    #[test]
    fn min_points_examples() {
        let curve = MinPointsCurve { a: 20.0 * (0.1f64 * 10.0).exp(), k: 0.1 };
        assert!((curve.eval(10.0) - 20.0).abs() < 1e-9);
        let b = boxed(1.0, 1.0, 1.0);
        let mut few = synthetic(0, [0.0, 0.1], 10.0, b, 5);
        assert!(min_points_filter(vec![few.clone()], &curve).is_empty());
        few.occluded = true;
        assert_eq!(min_points_filter(vec![few], &curve).len(), 1);
        let exact = MinPointsCurve { a: 20.0, k: 1e-3 };
        let at_origin = synthetic(1, [0.0, 0.1], 0.0, Box3D::from_center_size([0.0, 0.0, 0.5], [1.0, 1.0, 1.0]), 20);
        assert_eq!(min_points_filter(vec![at_origin], &exact).len(), 1);
    }

    #[test]
    fn curve_recovers_exact_exponential() {
        let samples: Vec<(f64, f64)> = (2..120).map(|i| {
            let d = i as f64 * 0.37;
            (d, 1000.0 * (-0.08 * d).exp())
        }).collect();
        let c = fit_min_points_curve(&samples, 0.5).unwrap();
        assert!((c.a - 1000.0).abs() < 1e-6 && (c.k - 0.08).abs() < 1e-6, "{c:?}");
    }

    #[test]
    fn curve_two_point_closed_form() {
        let c = fit_min_points_curve(&[(10.0, 100.0), (20.0, 37.0)], 0.5).unwrap();
        let k = (100.0f64 / 37.0).ln() / 10.0;
        assert!((c.k - k).abs() < 1e-12);
        assert!((c.a - 100.0 * (10.0 * k).exp()).abs() < 1e-9);
    }

    #[test]
    fn curve_uses_per_bin_minimum() {
        let c = fit_min_points_curve(&[(10.1, 500.0), (10.2, 100.0), (20.0, 37.0), (20.3, 90.0)], 0.5).unwrap();
        let k = (100.0f64 / 37.0).ln() / 9.8;
        assert!((c.k - k).abs() < 1e-12);
    }

    #[test]
    fn curve_errors() {
        assert!(matches!(fit_min_points_curve(&[(1.0, 5.0), (1.1, 6.0)], 0.5), Err(Error::InsufficientBins)));
        assert!(matches!(fit_min_points_curve(&[(1.0, 5.0), (3.0, 0.0)], 0.5), Err(Error::NonPositiveCount(_))));
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 50.0)).collect();
        let err = fit_min_points_curve(&flat, 0.5).unwrap_err();
        assert!(matches!(err, Error::NonDecreasingFit(_)));
        assert!(err.to_string().contains("non-decreasing fit"));
    }

    #[test]
    fn curve_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.txt");
        let c = MinPointsCurve { a: 1234.5678901234567, k: 0.0812345678901234 };
        c.save(&path).unwrap();
        assert_eq!(MinPointsCurve::load(&path).unwrap(), c);
        assert!(MinPointsCurve::parse("1 2 3", Path::new("x")).is_err());
    }

    #[test]
    fn proposals_csv() {
        let p = synthetic(4, [0.0, 0.1], 10.0, Box3D::new([0.0; 3], [1.0, 2.0, 3.0]).unwrap(), 7);
        let mut buf = Vec::new();
        write_proposals_csv(&[p], &[4], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("4,0.0000,0.0000,0.0000,1.0000,2.0000,3.0000,7,false,true\n"), "{text}");
    }

    /// Overlap by splitting padded spans at the seam into plain intervals.
    fn overlap_oracle(a: [f64; 2], b: [f64; 2], pad: f64) -> bool {
        let pieces = |s: [f64; 2]| -> Vec<(f64, f64)> {
            let (lo, hi) = (s[0] - pad, s[1] + pad);
            if hi - lo >= TAU {
                return vec![(-PI, PI)];
            }
            let lo = wrap_angle(lo);
            let hi = lo + (s[1] - s[0] + 2.0 * pad);
            if hi > PI {
                vec![(lo, PI), (-PI, hi - TAU)]
            } else {
                vec![(lo, hi)]
            }
        };
        pieces(a).iter().any(|x| pieces(b).iter().any(|y| x.0 <= y.1 && y.0 <= x.1))
    }

    proptest! {
        #[test]
        fn overlap_matches_split_intervals(
            a0 in -3.14f64..3.14, wa in 0.0f64..2.0, b0 in -3.14f64..3.14, wb in 0.0f64..2.0, pad in 0.0f64..0.05,
        ) {
            let a = [a0, a0 + wa];
            let b = [b0, b0 + wb];
            // Skip knife-edge cases where rounding decides.
            let gap = ((b0 - a0).rem_euclid(TAU) - wa - 2.0 * pad).abs()
                .min(((a0 - b0).rem_euclid(TAU) - wb - 2.0 * pad).abs());
            prop_assume!(gap > 1e-9);
            prop_assert_eq!(spans_overlap(a, b, pad), overlap_oracle(a, b, pad));
            prop_assert_eq!(spans_overlap(a, b, pad), spans_overlap(b, a, pad));
        }

        #[test]
        fn occlusion_is_permutation_equivariant(
            items in prop::collection::vec((-3.1f64..3.1, 0.0f64..0.4, 1.0f64..50.0), 1..12),
            rot in 0usize..12,
        ) {
            let b = boxed(1.0, 1.0, 1.0);
            let props: Vec<Proposal> = items.iter().enumerate()
                .map(|(i, &(s, w, r))| synthetic(i, [s, s + w], r, b, 5)).collect();
            let mut a = props.clone();
            label_occlusion(&mut a, 0.01);
            let mut shuffled = props.clone();
            shuffled.rotate_left(rot % props.len());
            shuffled.reverse();
            label_occlusion(&mut shuffled, 0.01);
            for p in &shuffled {
                prop_assert_eq!(p.occluded, a[p.id].occluded);
            }
        }

        #[test]
        fn filters_only_remove(
            items in prop::collection::vec((0.1f64..12.0, 0.1f64..6.0, 0.05f64..3.0, 1usize..200, 1.0f64..40.0), 0..20),
        ) {
            let props: Vec<Proposal> = items.iter().enumerate().map(|(i, &(l, w, h, n, x))| {
                let bbox = Box3D::from_center_size([x, 0.0, h / 2.0], [l, w, h]);
                synthetic(i, [i as f64 * 0.1 - 1.0, i as f64 * 0.1 - 0.95], x, bbox, n)
            }).collect();
            let params = FilterParams { curve: Some(MinPointsCurve { a: 400.0, k: 0.1 }), ..Default::default() };
            let kept = apply_filters(props.clone(), &params);
            prop_assert!(kept.len() <= props.len());
            for p in &kept {
                let orig = &props[p.id];
                prop_assert_eq!(&orig.cluster, &p.cluster);
                prop_assert_eq!(orig.bbox, p.bbox);
            }
        }

        #[test]
        fn fitted_curve_decreases(a in 10.0f64..5000.0, k in 0.01f64..0.3, noise in prop::collection::vec(0.9f64..1.1, 30)) {
            let samples: Vec<(f64, f64)> = noise.iter().enumerate()
                .map(|(i, &e)| (1.0 + i as f64, a * (-k * (1.0 + i as f64)).exp() * e)).collect();
            if let Ok(c) = fit_min_points_curve(&samples, 0.5) {
                prop_assert!(c.k > 0.0);
                prop_assert!(c.eval(1.0) > c.eval(2.0));
            }
        }
    }
}
