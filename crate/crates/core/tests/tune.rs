use lidarprop::ingest::{generate_scene, isolated_objects_spec, Frame};
use lidarprop::pipeline::PipelineParams;
use lidarprop::tune::*;

fn isolated_frames() -> Vec<Frame> {
    (0..2).map(|s| generate_scene(&isolated_objects_spec(), s).unwrap().into_frame(s.to_string())).collect()
}

fn sphere(c: [f64; 3]) -> impl Fn(&[f64]) -> f64 + Sync {
    move |x: &[f64]| -x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

#[test]
fn one_dimensional_parabola() {
    let cfg = PsoConfig { particles: 20, generations: 100, bounds: vec![(0.0, 1.2)], seed: 1, ..Default::default() };
    let r = pso_optimize(|x: &[f64]| -(x[0] - 0.5).powi(2), &cfg).unwrap();
    assert!((r.best_position[0] - 0.5).abs() < 1e-2);
}

#[test]
fn sphere_converges_with_monotone_history() {
    let c = [0.3, 0.9, 0.55];
    for seed in 0..3 {
        let cfg = PsoConfig { particles: 50, generations: 200, seed, ..Default::default() };
        let r = pso_optimize(sphere(c), &cfg).unwrap();
        assert_eq!(r.history.len(), 200);
        assert!(r.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
        for (x, t) in r.best_position.iter().zip(c) {
            assert!((x - t).abs() < 1e-2, "{:?}", r.best_position);
        }
    }
}

#[test]
fn parallel_and_serial_agree_bitwise() {
    let base = PsoConfig { particles: 30, generations: 40, seed: 9, ..Default::default() };
    let par = pso_optimize(sphere([0.1, 0.2, 0.3]), &PsoConfig { parallel: true, ..base.clone() }).unwrap();
    let ser = pso_optimize(sphere([0.1, 0.2, 0.3]), &PsoConfig { parallel: false, ..base }).unwrap();
    assert_eq!(par, ser);
}

#[test]
fn constant_objective_keeps_first_best() {
    let cfg = PsoConfig { particles: 10, generations: 15, seed: 2, ..Default::default() };
    let r = pso_optimize(|_: &[f64]| 1.0, &cfg).unwrap();
    assert!(r.history.iter().all(|h| h.best_fitness == 1.0 && h.best_position == r.history[0].best_position));
}

#[test]
fn positions_stay_in_bounds() {
    let cfg = PsoConfig { particles: 25, generations: 1, alpha: 1.5, lambda: 3.0, theta: 3.0, seed: 4, ..Default::default() };
    let mut swarm = Swarm::new(&cfg).unwrap();
    let f = sphere([5.0, -5.0, 5.0]);
    for _ in 0..50 {
        swarm.step(&f);
        for p in swarm.particles() {
            assert!(p.position.iter().all(|v| (0.0..=1.2).contains(v)));
        }
    }
}

#[test]
fn velocities_decay_without_attraction() {
    let cfg = PsoConfig { particles: 8, generations: 1, alpha: 0.5, lambda: 0.0, theta: 0.0, seed: 3, ..Default::default() };
    let mut swarm = Swarm::new(&cfg).unwrap();
    let f = |_: &[f64]| 0.0;
    let mut prev: Vec<Vec<f64>> = swarm.particles().iter().map(|p| p.velocity.clone()).collect();
    for _ in 0..10 {
        swarm.step(&f);
        for (p, v) in swarm.particles().iter().zip(&prev) {
            for (a, b) in p.velocity.iter().zip(v) {
                assert_eq!(*a, 0.5 * b);
            }
        }
        prev = swarm.particles().iter().map(|p| p.velocity.clone()).collect();
    }
}

#[test]
fn history_csv_has_one_row_per_generation() {
    let cfg = PsoConfig { particles: 5, generations: 10, seed: 0, ..Default::default() };
    let r = pso_optimize(sphere([0.5; 3]), &cfg).unwrap();
    let mut out = Vec::new();
    r.write_history_csv(&mut out, &["h_d", "v_d", "d_o"]).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.starts_with("generation,best_fitness,h_d,v_d,d_o"));
}

#[test]
fn invalid_config_is_rejected() {
    assert!(Swarm::new(&PsoConfig { particles: 0, ..Default::default() }).is_err());
    assert!(Swarm::new(&PsoConfig { bounds: vec![(1.0, 1.0)], ..Default::default() }).is_err());
}

#[test]
fn recall_objective_extremes() {
    let frames = isolated_frames();
    let base = PipelineParams { filtering: false, ..Default::default() };
    let good = recall_objective(&[0.49, 0.58, 0.26], &frames, &base, 0.25).unwrap();
    assert_eq!(good, 1.0);
    let flattened = recall_objective(&[0.49, 0.58, 1.2], &frames, &base, 0.25).unwrap();
    assert!(flattened < 0.2, "{flattened}");
    assert!(recall_objective(&[0.49, 0.58], &frames, &base, 0.25).is_err());
}

#[test]
fn tuning_improves_on_a_bad_start() {
    let frames = isolated_frames();
    let pso = PsoConfig { particles: 5, generations: 4, seed: 1, ..Default::default() };
    let r = tune_segmentation(&frames, &PipelineParams::default(), &pso, 0.25).unwrap();
    assert!(r.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
    assert!(r.best_fitness > 0.5);
}
