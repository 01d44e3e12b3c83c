use lidarprop::classify::*;
use lidarprop::geom::Point3;
use lidarprop::ingest::{object_samples, ObjectClass};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ClassifierConfig {
    ClassifierConfig { n_points: 12, point_widths: vec![8, 16], head_widths: vec![12, 8], ..Default::default() }
}

fn random_batch(b: usize, n: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((b, n, 3), || rng.random_range(-1.0..1.0))
}

/// Randomizes every tensor (including the zero-initialized transform output)
/// so all gradients are generically non-zero.
fn perturbed_model(cfg: &ClassifierConfig, seed: u64) -> ClassifierModel {
    let mut model = ClassifierModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (name, _, t) in model.tensors_mut(false) {
        for v in t.iter_mut() {
            if name.starts_with("tnet.out.w") {
                *v = rng.random_range(-0.3..0.3);
            } else if name.ends_with("gamma") {
                *v = rng.random_range(0.5..1.5);
            } else if name.ends_with("beta") || name.ends_with(".b") {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    model
}

fn loss_at(model: &ClassifierModel, batch: &Array3<f64>, labels: &[usize], seed: u64) -> f64 {
    let probs = model.forward(batch, Mode::Train { dropout_seed: seed }).unwrap();
    nll_loss(&probs, labels)
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = small_config();
    let model = perturbed_model(&cfg, 3);
    let batch = random_batch(6, cfg.n_points, 9);
    let labels = [0, 1, 2, 3, 4, 1];
    let cache = model.forward_cached(&batch, Mode::Train { dropout_seed: 5 }).unwrap();
    let grads = model.backward(&cache, &labels);
    let analytic: Vec<(String, Vec<f64>)> =
        grads.parameters().into_iter().map(|(n, s)| (n, s.to_vec())).collect();

    // Up to 10 entries from every tensor, transform output weights first.
    let mut picks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (t, (name, g)) in analytic.iter().enumerate() {
        let k = g.len().min(10);
        for _ in 0..k {
            picks.push((t, rng.random_range(0..g.len()), name.clone()));
        }
    }
    picks.sort_by_key(|(t, _, name)| (!name.starts_with("tnet.out.w"), *t));
    assert!(picks.len() >= 200, "only {} parameters sampled", picks.len());

    let h = 1e-4;
    let mut worst = 0.0f64;
    for (t, i, name) in &picks {
        let mut m = model.clone();
        m.parameters_mut()[*t][*i] += h;
        let up = loss_at(&m, &batch, &labels, 5);
        m.parameters_mut()[*t][*i] -= 2.0 * h;
        let down = loss_at(&m, &batch, &labels, 5);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[*t].1[*i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        assert!(rel < 1e-3, "{name}[{i}]: analytic {a} numeric {numeric}");
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3);
}

#[test]
fn activation_pattern_detects_region_changes() {
    let cfg = small_config();
    let model = perturbed_model(&cfg, 3);
    let batch = random_batch(6, cfg.n_points, 9);
    let mode = Mode::Train { dropout_seed: 5 };
    let a = model.forward_cached(&batch, mode).unwrap();
    assert!(a.same_activation_pattern(&model.forward_cached(&batch, mode).unwrap()));
    let mut moved = batch.clone();
    moved.mapv_inplace(|v| -v);
    assert!(!a.same_activation_pattern(&model.forward_cached(&moved, mode).unwrap()));
}

#[test]
fn gradients_scale_with_loss() {
    let cfg = small_config();
    let model = perturbed_model(&cfg, 1);
    let batch = random_batch(4, cfg.n_points, 2);
    let labels = [1, 2, 3, 0];
    let cache = model.forward_cached(&batch, Mode::Train { dropout_seed: 0 }).unwrap();
    let g1 = model.backward(&cache, &labels);
    let g2 = model.backward_scaled(&cache, &labels, 2.0);
    for ((_, a), (_, b)) in g1.parameters().iter().zip(g2.parameters()) {
        for (x, y) in a.iter().zip(b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn nll_analytic_values() {
    let uniform = Array2::from_elem((3, 5), 0.2);
    assert!((nll_loss(&uniform, &[0, 3, 4]) - 5f64.ln()).abs() < 1e-9);
    let probs = ndarray::arr2(&[[0.5, 0.5, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25, 0.0]]);
    let expected = -(0.5f64.ln() + 0.25f64.ln()) / 2.0;
    assert!((nll_loss(&probs, &[0, 2]) - expected).abs() < 1e-12);
    assert!((expected - 1.0397).abs() < 1e-4);
    let onehot = ndarray::arr2(&[[0.0, 1.0, 0.0, 0.0, 0.0]]);
    assert_eq!(nll_loss(&onehot, &[1]), 0.0);
    // Zero probability is clamped.
    assert!((nll_loss(&onehot, &[0]) - -(1e-12f64).ln()).abs() < 1e-9);
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainingConfig::default();
    assert_eq!(learning_rate(0, &cfg), 0.0002);
    assert_eq!(learning_rate(18569, &cfg), 0.0002);
    assert_eq!(learning_rate(18570, &cfg), 0.00016);
    assert!((learning_rate(2 * 18570, &cfg) - 0.000128).abs() < 1e-18);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let cfg = small_config();
    let mut model = ClassifierModel::new(&cfg, 0).unwrap();
    let before = model.clone();
    let zeros = model.zeros_like();
    let mut adam = Adam::new(&model);
    adam.step(&mut model, &zeros, 0, &TrainingConfig::default());
    assert_eq!(model, before);
}

#[test]
fn adam_first_step_has_unit_scale() {
    let cfg = small_config();
    let mut model = ClassifierModel::new(&cfg, 0).unwrap();
    let before = model.clone();
    let mut grads = model.zeros_like();
    grads.parameters_mut()[0][3] = 0.37;
    grads.parameters_mut()[1][0] = -5.0;
    let tc = TrainingConfig::default();
    Adam::new(&model).step(&mut model, &grads, 0, &tc);
    let d0 = before.parameters()[0].1[3] - model.parameters()[0].1[3];
    let d1 = before.parameters()[1].1[0] - model.parameters()[1].1[0];
    assert!((d0 - 0.0002).abs() < 1e-9, "{d0}");
    assert!((d1 + 0.0002).abs() < 1e-9, "{d1}");
}

#[test]
fn fresh_transform_is_identity() {
    let model = ClassifierModel::new(&small_config(), 4).unwrap();
    let t = model.tnet_forward(&random_batch(3, 12, 1), Mode::Infer).unwrap();
    for s in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t[[s, i, j]], if i == j { 1.0 } else { 0.0 });
            }
        }
    }
    let perturbed = perturbed_model(&small_config(), 4);
    let t = perturbed.tnet_forward(&random_batch(3, 12, 1), Mode::Infer).unwrap();
    assert!((t[[0, 0, 1]]).abs() > 1e-6);
}

#[test]
fn inference_is_deterministic_and_batch_independent() {
    let model = perturbed_model(&small_config(), 8);
    let batch = random_batch(2, 12, 3);
    let mut doubled = Array3::zeros((3, 12, 3));
    doubled.slice_mut(ndarray::s![0..2, .., ..]).assign(&batch);
    doubled.slice_mut(ndarray::s![2, .., ..]).assign(&batch.slice(ndarray::s![0, .., ..]));
    let a = model.forward(&batch, Mode::Infer).unwrap();
    let b = model.forward(&doubled, Mode::Infer).unwrap();
    assert_eq!(a, model.forward(&batch, Mode::Infer).unwrap());
    for c in 0..5 {
        assert!((b[[0, c]] - b[[2, c]]).abs() < 1e-12);
        assert!((a[[1, c]] - b[[1, c]]).abs() < 1e-12);
    }
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let cfg = small_config();
    let mut model = ClassifierModel::new(&cfg, 2).unwrap();
    let batch = random_batch(8, cfg.n_points, 6);
    let labels = [0, 1, 2, 3, 4, 0, 1, 2];
    let tc = TrainingConfig { learning_rate: 0.002, ..Default::default() };
    let mut adam = Adam::new(&model);
    let mut losses = Vec::new();
    for step in 0..100 {
        let cache = model.forward_cached(&batch, Mode::Train { dropout_seed: 0 }).unwrap();
        losses.push(nll_loss(&cache.probs, &labels));
        let g = model.backward(&cache, &labels);
        adam.step(&mut model, &g, step, &tc);
        model.apply_batch_stats(&cache);
    }
    // 50-step moving average, evaluated at every step.
    let moving: Vec<f64> = losses.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    assert!(moving.windows(2).all(|w| w[1] < w[0]), "{moving:?}");
}

#[test]
fn one_epoch_of_64_samples_takes_two_steps() {
    let cfg = small_config();
    let mut model = ClassifierModel::new(&cfg, 0).unwrap();
    let samples: Vec<Sample> = (0..64)
        .map(|i| Sample { points: object_samples(ObjectClass::ALL[i % 5], 1, i as u64).unwrap()[0].clone(), label: ObjectClass::ALL[i % 5] })
        .collect();
    let tc = TrainingConfig { epochs: 1, ..Default::default() };
    let report = train(&mut model, &samples, &[], &tc).unwrap();
    assert_eq!(report.steps, 2);
    assert_eq!(report.epochs.len(), 1);
    assert!(report.epochs[0].validation_accuracy.is_none());
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config();
    let samples: Vec<Sample> = ObjectClass::ALL
        .iter()
        .flat_map(|&c| object_samples(c, 4, c.index() as u64).unwrap().into_iter().map(move |p| Sample { points: p, label: c }))
        .collect();
    let tc = TrainingConfig { epochs: 3, batch_size: 8, seed: 42, ..Default::default() };
    let mut a = ClassifierModel::new(&cfg, 1).unwrap();
    let mut b = ClassifierModel::new(&cfg, 1).unwrap();
    let ra = train(&mut a, &samples, &samples[..5], &tc).unwrap();
    let rb = train(&mut b, &samples, &samples[..5], &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn training_rejects_empty_dataset() {
    let mut model = ClassifierModel::new(&small_config(), 0).unwrap();
    assert!(train(&mut model, &[], &[], &TrainingConfig::default()).is_err());
}

#[test]
fn predict_reports_argmax() {
    let model = perturbed_model(&small_config(), 2);
    let props = object_samples(ObjectClass::Car, 5, 0).unwrap();
    for p in predict(&model, &props, 0).unwrap() {
        assert!(p.class.index() < 5);
        let max = p.probs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p.probability, max);
        assert_eq!(p.probs[p.class.index()], max);
    }
}

#[test]
fn normalize_examples() {
    let one = normalize_proposal(&[Point3::new(1.0, 1.0, 1.0)]).unwrap();
    assert_eq!(one, vec![Point3::new(0.0, 0.0, 0.0)]);
    let pair = normalize_proposal(&[Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)]).unwrap();
    assert_eq!(pair, vec![Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)]);
    assert!(normalize_proposal(&[]).is_err());
}

#[test]
fn augment_examples() {
    let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-0.5, 0.1, 0.0)];
    assert_eq!(augment_with(&pts, 0.0, 1.0), pts);
    let s = augment_with(&pts, 0.0, 1.05);
    for (a, b) in pts.iter().zip(&s) {
        assert_eq!([b.x, b.y, b.z], [a.x * 1.05, a.y * 1.05, a.z * 1.05]);
    }
    assert_eq!(augment(&pts, 9), augment(&pts, 9));
}

#[test]
fn model_file_round_trip_is_exact() {
    let model = perturbed_model(&small_config(), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
    let mut bytes = model_to_bytes(&model);
    bytes.pop();
    assert!(model_from_bytes(&bytes).is_err());
}

#[test]
fn dataset_file_round_trip() {
    let samples = vec![
        Sample { points: vec![Point3::new(1.5, -2.25, 0.5)], label: ObjectClass::Van },
        Sample { points: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 4.0, 5.0)], label: ObjectClass::Background },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&samples, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), samples);
    let bytes = dataset_to_bytes(&samples);
    assert!(dataset_from_bytes(&bytes[..bytes.len() - 1], &path).is_err());
}

fn points_strategy() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..60)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_points_are_centred_and_unit(points in points_strategy()) {
        let out = normalize_proposal(&points).unwrap();
        let n = out.len() as f64;
        let c = out.iter().fold([0.0; 3], |a, p| [a[0] + p.x, a[1] + p.y, a[2] + p.z]);
        prop_assert!(c.iter().all(|v| (v / n).abs() < 1e-6));
        let r = out.iter().map(|p| p.range()).fold(0.0, f64::max);
        prop_assert!(r == 0.0 || (r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_preserves_distances(points in points_strategy(), theta in -1.0..1.0f64) {
        let r = augment_with(&points, theta, 1.0);
        for i in 0..points.len() {
            for j in 0..points.len() {
                prop_assert!((points[i].distance(&points[j]) - r[i].distance(&r[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn augment_scales_norms_by_drawn_factor(points in points_strategy(), seed in any::<u64>()) {
        let (out, theta, scale) = augment(&points, seed);
        prop_assert!(theta.abs() <= std::f64::consts::FRAC_PI_4 && (0.95..=1.05).contains(&scale));
        for (a, b) in points.iter().zip(&out) {
            prop_assert!((a.range() * scale - b.range()).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_and_permutation_invariance(seed in any::<u64>()) {
        let cfg = small_config();
        let model = perturbed_model(&cfg, seed % 7);
        let batch = random_batch(3, cfg.n_points, seed);
        let probs = model.forward(&batch, Mode::Infer).unwrap();
        for row in probs.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
        let train = model.forward(&batch, Mode::Train { dropout_seed: seed }).unwrap();
        for row in train.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let mut perm: Vec<usize> = (0..cfg.n_points).collect();
        perm.reverse();
        perm.rotate_left((seed % 5) as usize);
        let mut shuffled = batch.clone();
        for s in 0..3 {
            for (i, &j) in perm.iter().enumerate() {
                for k in 0..3 {
                    shuffled[[s, i, k]] = batch[[s, j, k]];
                }
            }
        }
        let again = model.forward(&shuffled, Mode::Infer).unwrap();
        for (a, b) in probs.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
