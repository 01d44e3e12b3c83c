use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Assigns scan rings by quantizing each point's elevation into `n_rings`
/// equal bins between the observed extremes. Ring 0 holds the highest beam.
/// Points are reordered by ring, then by azimuth within a ring.
pub fn recover_rings(cloud: &PointCloud, n_rings: usize) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot recover rings of an empty cloud"));
    }
    if n_rings == 0 || n_rings > u16::MAX as usize + 1 {
        return Err(Error::Config(format!("ring count {n_rings} out of range")));
    }
    let pts = cloud.points();
    let elev: Vec<f64> = pts.iter().map(|p| p.elevation()).collect();
    let lo = elev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = elev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let ring_of = |e: f64| -> u16 {
        if span <= 0.0 {
            return 0;
        }
        let r = ((hi - e) / span * n_rings as f64).floor() as usize;
        r.min(n_rings - 1) as u16
    };
    let mut keyed: Vec<(u16, f64, usize)> =
        pts.iter().zip(&elev).enumerate().map(|(i, (p, &e))| (ring_of(e), p.azimuth(), i)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let points = keyed.iter().map(|&(_, _, i)| pts[i]).collect();
    let rings = keyed.iter().map(|&(r, _, _)| r).collect();
    PointCloud::with_rings(points, rings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    #[test]
    fn four_constructed_rings_are_recovered() {
        let elevations = [0.02f64, -0.05, -0.12, -0.19];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        // Interleave rings so the input order carries no ring information.
        for step in 0..90 {
            let az = -3.1 + step as f64 * 0.07;
            for (r, &e) in elevations.iter().enumerate().rev() {
                let range = 10.0 + r as f64;
                pts.push(Point3::new(
                    range * e.cos() * az.cos(),
                    range * e.cos() * az.sin(),
                    range * e.sin(),
                ));
                truth.push(r as u16);
            }
        }
        let out = recover_rings(&PointCloud::new(pts.clone()), 4).unwrap();
        let rings = out.rings().unwrap();
        for (p, &r) in out.points().iter().zip(rings) {
            let i = pts.iter().position(|q| q == p).unwrap();
            assert_eq!(truth[i], r);
        }
        assert!(rings.windows(2).all(|w| w[0] <= w[1]));
        for w in out.points().windows(2).zip(rings.windows(2)) {
            if w.1[0] == w.1[1] {
                assert!(w.0[0].azimuth() <= w.0[1].azimuth());
            }
        }
    }

    #[test]
    fn single_point_and_flat_span_map_to_ring_zero() {
        let one = recover_rings(&PointCloud::new(vec![Point3::new(5.0, 1.0, -1.0)]), 64).unwrap();
        assert_eq!(one.rings().unwrap(), &[0]);
        let flat: Vec<Point3> = (1..20).map(|i| Point3::new(i as f64, (i as f64).sin(), 0.0)).collect();
        let out = recover_rings(&PointCloud::new(flat), 64).unwrap();
        assert!(out.rings().unwrap().iter().all(|&r| r == 0));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(recover_rings(&PointCloud::default(), 64).is_err());
    }

    #[test]
    fn relabeling_preserves_the_point_multiset() {
        let pts: Vec<Point3> = (0..200)
            .map(|i| {
                let f = i as f64;
                Point3::new(5.0 + (f * 0.37).sin() * 4.0, (f * 0.11).cos() * 7.0, (f * 0.53).sin())
            })
            .collect();
        let out = recover_rings(&PointCloud::new(pts.clone()), 16).unwrap();
        let key = |p: &Point3| p.xyz().map(f64::to_bits);
        let mut a: Vec<_> = pts.iter().map(key).collect();
        let mut b: Vec<_> = out.points().iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}
