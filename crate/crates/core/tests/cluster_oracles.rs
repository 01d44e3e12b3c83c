use lidarprop::cluster::*;
use lidarprop::{canonical_partition, Point3, PointCloud};
use proptest::prelude::*;

/// Connected components of the `< t_d` graph over the full distance matrix.
fn union_find_partition(points: &[Point3], t_d: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].distance(&points[j]) < t_d {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

fn assert_partition(clusters: &[Vec<usize>], n: usize) {
    let mut seen = vec![false; n];
    for c in clusters {
        for &i in c {
            assert!(!seen[i], "point {i} in two clusters");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "not every point is covered");
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Point3>> {
    // Blobs make multi-point components common.
    (1usize..6, prop::collection::vec((0usize..6, -0.8..0.8f64, -0.8..0.8f64, -0.5..0.5f64), 0..500), any::<u64>())
        .prop_map(|(blobs, offs, seed)| {
            let centers: Vec<[f64; 3]> = (0..blobs)
                .map(|b| {
                    let s = seed.wrapping_add(b as u64 * 7919);
                    [(s % 97) as f64 * 0.1, ((s / 97) % 89) as f64 * 0.1, ((s / 8633) % 13) as f64 * 0.1]
                })
                .collect();
            offs.into_iter()
                .map(|(b, dx, dy, dz)| {
                    let c = centers[b % blobs];
                    Point3::new(c[0] + dx * 3.0, c[1] + dy * 3.0, c[2] + dz * 2.0)
                })
                .collect()
        })
}

/// Points sorted into rings by height band, then by azimuth within a ring.
fn ringed_strategy() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((2.0..8.0f64, -0.6..0.6f64, 0.0..2.4f64), 0..500).prop_map(|raw| {
        let mut pts: Vec<(u16, Point3)> = raw
            .into_iter()
            .map(|(r, az, z)| ((7.0 - (z / 0.3).floor()).max(0.0) as u16, Point3::new(r * az.cos(), r * az.sin(), z)))
            .collect();
        pts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.azimuth().total_cmp(&b.1.azimuth())));
        let (rings, points): (Vec<u16>, Vec<Point3>) = pts.into_iter().unzip();
        PointCloud::with_rings(points, rings).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn distance_clustering_matches_union_find(points in cloud_strategy(), t_d in 0.1..0.8f64) {
        let oracle = union_find_partition(&points, t_d);
        let cloud = PointCloud::new(points);
        let grid = canonical_partition(&cluster_distance(&cloud, t_d).unwrap());
        let exhaustive = canonical_partition(&cluster_distance_exhaustive(&cloud, t_d).unwrap());
        assert_partition(&grid, cloud.len());
        prop_assert_eq!(&grid, &oracle);
        prop_assert_eq!(&exhaustive, &oracle);
    }

    #[test]
    fn scan_clustering_matches_segment_graph(
        cloud in ringed_strategy(),
        h_d in 0.1..0.8f64,
        v_d in 0.1..0.8f64,
        mini_points in 1usize..4,
    ) {
        let params = ClusterParams { h_d, v_d, mini_points, ..Default::default() };
        let scan = canonical_partition(&cluster_scan(&cloud, &params).unwrap());
        let oracle = canonical_partition(&scan_oracle(&cloud, &params).unwrap());
        assert_partition(&scan, cloud.len());
        prop_assert_eq!(scan, oracle);
    }

    #[test]
    fn smaller_threshold_refines(points in cloud_strategy(), a in 0.1..0.8f64, b in 0.1..0.8f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        let cloud = PointCloud::new(points);
        let fine = cluster_distance(&cloud, lo).unwrap();
        let coarse = cluster_distance(&cloud, hi).unwrap();
        let mut owner = vec![usize::MAX; cloud.len()];
        for (k, c) in coarse.iter().enumerate() {
            for &i in &c.indices {
                owner[i] = k;
            }
        }
        for c in &fine {
            prop_assert!(c.indices.iter().all(|&i| owner[i] == owner[c.indices[0]]));
        }
    }

    #[test]
    fn scan_segments_refine_scan_clusters(cloud in ringed_strategy(), h_d in 0.1..0.8f64) {
        let params = ClusterParams { h_d, ..Default::default() };
        let clusters = cluster_scan(&cloud, &params).unwrap();
        let mut owner = vec![usize::MAX; cloud.len()];
        for (k, c) in clusters.iter().enumerate() {
            for &i in &c.indices {
                owner[i] = k;
            }
        }
        for ring in ring_segments(&cloud, h_d).unwrap() {
            for s in ring {
                prop_assert!(s.indices.iter().all(|&i| owner[i] == owner[s.indices[0]]));
            }
        }
    }
}
