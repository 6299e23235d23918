use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrain_fe::baseline::{self, NodeModel};
use terrain_fe::fenode::{
    fit_and_score, gram_from_increments, solve_coefficients, train, BasisSet, Coefficients, InnerProduct,
    Regularization, TrainConfig, TransitionBatch,
};
use terrain_fe::net::Mlp;
use terrain_fe::neural_ode::FEATURE_DIM;
use terrain_fe::ode::Rk4;
use terrain_fe::{Control, Dataset, Error, State, Transition};

const LINEAR: [usize; 2] = [FEATURE_DIM, 6];

/// Linear net whose field is `W [vx vy wz v_cmd w_cmd] + b`, heading features unused.
fn linear_net(seed: u64) -> (Mlp, DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..6 * 5).map(|_| rng.random_range(-0.8..0.8)).collect();
    let b: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut p = vec![0.0; FEATURE_DIM * 6 + 6];
    for r in 0..6 {
        for c in 0..5 {
            p[r * FEATURE_DIM + c] = w[r * 5 + c];
        }
    }
    p[FEATURE_DIM * 6..].copy_from_slice(&b);
    let net = Mlp::from_params(&LINEAR, p).unwrap();
    (net, DMatrix::from_row_slice(6, 5, &w), b)
}

/// Closed-form increment of `z' = A z + c` from the augmented matrix exponential.
fn exact_increment(w: &DMatrix<f64>, b: &[f64], x: &State, u: Control, dt: f64) -> Vec<f64> {
    let mut a = DMatrix::<f64>::zeros(6, 6);
    for r in 0..6 {
        for c in 0..3 {
            a[(r, 3 + c)] = w[(r, c)];
        }
    }
    let x0 = nalgebra::DVector::from_row_slice(&x.bodyified().to_array());
    let mut c = &a * &x0;
    for r in 0..6 {
        c[r] += w[(r, 3)] * u.v_cmd + w[(r, 4)] * u.w_cmd + b[r];
    }
    let mut m = DMatrix::<f64>::zeros(7, 7);
    m.view_mut((0, 0), (6, 6)).copy_from(&a);
    m.view_mut((0, 6), (6, 1)).copy_from(&c);
    let e = (m * dt).exp();
    (0..6).map(|r| e[(r, 6)]).collect()
}

fn sample_state(rng: &mut impl Rng) -> State {
    State::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.0..1.0),
    )
}

fn sample_control(rng: &mut impl Rng) -> Control {
    Control::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))
}

#[test]
fn linear_field_matches_matrix_exponential() {
    let (net, w, b) = linear_net(1);
    let basis = BasisSet::from_nets(vec![net.clone()], Rk4::default()).unwrap();
    let node = NodeModel::from_net(net, Rk4::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (x, u) = (sample_state(&mut rng), sample_control(&mut rng));
        let exact = exact_increment(&w, &b, &x, u, 0.1);
        let g = basis.basis_increment(0, &x, u, 0.1).unwrap();
        let n = node.predict_increment(&x, u, 0.1).unwrap();
        for i in 0..6 {
            assert!((g[i] - exact[i]).abs() < 1e-8, "basis dim {i}: {} vs {}", g[i], exact[i]);
            assert!((n[i] - exact[i]).abs() < 1e-8, "node dim {i}");
        }
    }
}

#[test]
fn prediction_is_linear_in_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let basis = BasisSet::init(4, &[16, 16], &mut rng).unwrap();
    let (x, u) = (sample_state(&mut rng), sample_control(&mut rng));
    let a = Coefficients::new(vec![0.3, -1.2, 0.5, 2.0]);
    let b = Coefficients::new(vec![-0.7, 0.1, 1.5, -0.4]);
    let ab = Coefficients::new(a.alpha.iter().zip(&b.alpha).map(|(p, q)| p + q).collect());
    let pa = basis.predict_increment(&a, &x, u, 0.1).unwrap();
    let pb = basis.predict_increment(&b, &x, u, 0.1).unwrap();
    let pab = basis.predict_increment(&ab, &x, u, 0.1).unwrap();
    for i in 0..6 {
        assert!((pab[i] - pa[i] - pb[i]).abs() < 1e-12);
    }
    let zero = basis.predict_increment(&Coefficients::new(vec![0.0; 4]), &x, u, 0.1).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
    let e1 = basis.predict_increment(&Coefficients::new(vec![1.0, 0.0, 0.0, 0.0]), &x, u, 0.1).unwrap();
    assert_eq!(e1, basis.basis_increment(0, &x, u, 0.1).unwrap());
}

#[test]
fn bad_inputs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let basis = BasisSet::init(2, &[8], &mut rng).unwrap();
    let x = State::default();
    assert!(matches!(basis.basis_increment(0, &x, Control::zero(), 0.0), Err(Error::InvalidInput(_))));
    assert!(basis.basis_increment(5, &x, Control::zero(), 0.1).is_err());
    assert!(basis.predict_increment(&Coefficients::new(vec![1.0]), &x, Control::zero(), 0.1).is_err());
    assert!(matches!(
        basis.gram_system(&[], &InnerProduct::default(), Regularization::Fixed(0.0)),
        Err(Error::InvalidInput(_))
    ));
}

fn transitions_from(model: &impl Fn(&State, Control) -> [f64; 6], n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = sample_state(&mut rng).bodyified();
            let u = sample_control(&mut rng);
            Transition { x, u, dt: 0.1, dx: model(&x, u) }
        })
        .collect()
}

#[test]
fn exact_membership_recovers_unit_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let basis = BasisSet::init(3, &[16, 16], &mut rng).unwrap();
    let g1 = |x: &State, u: Control| basis.basis_increment(0, x, u, 0.1).unwrap();
    let data = transitions_from(&g1, 200, 7);
    let ip = InnerProduct::default();
    let alpha = basis.fit(&data, &ip, Regularization::Fixed(0.0)).unwrap();
    assert!((alpha.alpha[0] - 1.0).abs() < 1e-6, "{:?}", alpha.alpha);
    assert!(alpha.alpha[1].abs() < 1e-6 && alpha.alpha[2].abs() < 1e-6);
    assert_eq!(alpha.source_count, 200);

    // Projection property: in-span targets are reproduced on the sample.
    let planted = |x: &State, u: Control| {
        let a = basis.basis_increment(1, x, u, 0.1).unwrap();
        let b = basis.basis_increment(2, x, u, 0.1).unwrap();
        std::array::from_fn(|i| 2.0 * a[i] - 0.5 * b[i])
    };
    let data = transitions_from(&planted, 150, 8);
    let batch = TransitionBatch::new(&data);
    let (alpha, mse) = fit_and_score(&basis, &batch, &batch, &ip, Regularization::Fixed(0.0)).unwrap();
    assert!((alpha[1] - 2.0).abs() < 1e-6 && (alpha[2] + 0.5).abs() < 1e-6, "{alpha:?}");
    assert!(mse <= 1e-10, "query error {mse}");
}

#[test]
fn orthonormalized_analytic_bases_give_identity_gram() {
    // Two analytic increment fields, orthonormalized (Gram-Schmidt) with
    // closed-form moments of the uniform sampling measure, then estimated by
    // Monte Carlo on a fresh draw.
    let f1 = |x: &State, u: Control| [u.v_cmd * 0.1, 0.0, 0.0, x.vx, 0.0, 0.0];
    let f2 = |x: &State, u: Control| [0.0, x.vy, u.w_cmd * 0.1, 0.5 * x.vx, 0.0, x.wz];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(State, Control)> {
        (0..n).map(|_| (sample_state(rng).bodyified(), sample_control(rng))).collect()
    };
    // E[x^2] = h^2 / 3 for x ~ U(-h, h).
    let m2 = |h: f64| h * h / 3.0;
    let f11 = 0.01 * m2(2.0) + m2(1.5);
    let f22 = m2(0.5) + 0.01 * m2(1.0) + 0.25 * m2(1.5) + m2(1.0);
    let f12 = 0.5 * m2(1.5);
    let n1 = f11.sqrt();
    let proj = f12 / f11;
    let n2 = (f22 - 2.0 * proj * f12 + proj * proj * f11).sqrt();
    let basis_fn = |x: &State, u: Control| -> [[f64; 6]; 2] {
        let (p, q) = (f1(x, u), f2(x, u));
        [
            std::array::from_fn(|i| p[i] / n1),
            std::array::from_fn(|i| (q[i] - proj * p[i]) / n2),
        ]
    };
    let fresh = draw(&mut rng, 50000);
    let mut incs = vec![Array2::zeros((fresh.len(), 6)), Array2::zeros((fresh.len(), 6))];
    for (r, (x, u)) in fresh.iter().enumerate() {
        let g = basis_fn(x, *u);
        for j in 0..2 {
            for d in 0..6 {
                incs[j][[r, d]] = g[j][d];
            }
        }
    }
    let targets = Array2::zeros((fresh.len(), 6));
    let sys = gram_from_increments(&incs, &targets, &InnerProduct::default(), Regularization::Fixed(0.0)).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((sys.gram[[i, j]] - expect).abs() < 1e-2, "G[{i},{j}] = {}", sys.gram[[i, j]]);
        }
    }
    assert!(sys.rhs.iter().all(|v| *v == 0.0));
    let alpha = solve_coefficients(&sys).unwrap();
    assert!(alpha.alpha.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn coefficient_spread_shrinks_with_more_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let basis = BasisSet::init(3, &[8], &mut rng).unwrap();
    let truth = terrain_fe::sim::TruthModel::new(Default::default(), 0.5);
    let target = |x: &State, u: Control| truth.increment(x, u, 0.1);
    let ip = InnerProduct::default();
    let reg = Regularization::default();
    let reference = basis.fit(&transitions_from(&target, 20000, 999), &ip, reg).unwrap();
    let dev = |m: usize, seed: u64| {
        let a = basis.fit(&transitions_from(&target, m, seed), &ip, reg).unwrap();
        a.alpha.iter().zip(&reference.alpha).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    };
    let median = |m: usize| {
        let mut d: Vec<f64> = (0..20).map(|s| dev(m, 100 + s)).collect();
        d.sort_by(f64::total_cmp);
        (d[9] + d[10]) / 2.0
    };
    let (small, large) = (median(25), median(100));
    assert!(large < small, "median deviation {small} at m=25 vs {large} at m=100");
}

fn family_dataset(c: f64, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..n)
        .map(|_| {
            let vx = rng.random_range(-1.0..1.0);
            let x = State::new(0.0, 0.0, 0.0, vx, 0.0, 0.0);
            let mut dx = [0.0; 6];
            dx[3] = vx * ((c * 0.1f64).exp() - 1.0);
            Transition {
                x,
                u: Control::zero(),
                dt: 0.1,
                dx,
            }
        })
        .collect();
    Dataset {
        terrain_id: format!("c{c}"),
        theta: 0.0,
        transitions,
    }
}

#[test]
fn learns_scalar_linear_family() {
    let train_sets: Vec<Dataset> = [-1.0, 0.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &c)| family_dataset(c, 400, i as u64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut basis = BasisSet::init(2, &[16, 16], &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 600,
        batch_per_dataset: 32,
        lr: 1e-2,
        lr_final: 1e-4,
        ..TrainConfig::default()
    };
    let history = train(&mut basis, &train_sets, None, None, &cfg).unwrap();
    assert_eq!(history.len(), 600);
    for (i, c) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        let support = TransitionBatch::from_dataset(&family_dataset(c, 100, 50 + i as u64));
        let query = TransitionBatch::from_dataset(&family_dataset(c, 200, 60 + i as u64));
        let (_, mse) = fit_and_score(&basis, &support, &query, &InnerProduct::default(), cfg.regularization).unwrap();
        assert!(mse < 1e-4, "c = {c}: query MSE {mse}");
    }
}

#[test]
fn zero_dynamics_drive_loss_to_zero() {
    let zero = |d: Dataset| Dataset {
        transitions: d
            .transitions
            .into_iter()
            .map(|t| Transition { dx: [0.0; 6], ..t })
            .collect(),
        ..d
    };
    let sets = vec![zero(family_dataset(1.0, 100, 1)), zero(family_dataset(-1.0, 100, 2))];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut basis = BasisSet::init(2, &[8], &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_per_dataset: 16,
        ..TrainConfig::default()
    };
    let history = train(&mut basis, &sets, None, None, &cfg).unwrap();
    assert!(history.iter().all(|r| r.train_mse == 0.0));
    let alpha = basis.fit(&sets[0].transitions, &InnerProduct::default(), cfg.regularization).unwrap();
    assert!(alpha.norm() < 1e-12);

    let mut node = NodeModel::init(&[8], &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        lr: 1e-2,
        ..cfg
    };
    let history = baseline::train(&mut node, &sets, None, None, &cfg).unwrap();
    assert!(history.last().unwrap().train_mse < 1e-4 * history[0].train_mse.max(1e-12), "{:?}", history.last());
}

#[test]
fn training_rejects_single_dataset() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut basis = BasisSet::init(2, &[8], &mut rng).unwrap();
    let err = train(&mut basis, &[family_dataset(1.0, 10, 0)], None, None, &TrainConfig::default());
    assert!(matches!(err, Err(Error::InvalidInput(_))));
}

#[test]
fn divergence_is_reported_with_epoch() {
    let mut sets = vec![family_dataset(1.0, 50, 0), family_dataset(-1.0, 50, 1)];
    sets[1].transitions[0].dx[0] = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut basis = BasisSet::init(2, &[8], &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_per_dataset: 50,
        ..TrainConfig::default()
    };
    match train(&mut basis, &sets, None, None, &cfg) {
        Err(Error::TrainingFailure { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected training failure, got {other:?}"),
    }
}

#[test]
fn baseline_learns_single_linear_system() {
    let sys = family_dataset(-1.0, 400, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut node = NodeModel::init(&[16, 16], &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 600,
        batch_per_dataset: 32,
        lr: 1e-2,
        lr_final: 1e-4,
        ..TrainConfig::default()
    };
    baseline::train(&mut node, std::slice::from_ref(&sys), None, None, &cfg).unwrap();
    let val = TransitionBatch::from_dataset(&family_dataset(-1.0, 200, 77));
    let mse = node.mse(&val);
    assert!(mse < 1e-4, "validation MSE {mse}");
}

#[test]
fn deterministic_per_seed() {
    let sets = vec![family_dataset(1.0, 100, 0), family_dataset(-1.0, 100, 1)];
    let cfg = TrainConfig {
        epochs: 5,
        batch_per_dataset: 16,
        ..TrainConfig::default()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut basis = BasisSet::init(2, &[8], &mut rng).unwrap();
        let h = train(&mut basis, &sets, None, None, &cfg).unwrap();
        (basis, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    let bits = |h: &[terrain_fe::fenode::LossRecord]| h.iter().map(|r| r.train_mse.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ha), bits(&hb));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let basis = BasisSet::init(3, &[12, 12], &mut rng).unwrap();
    let path = dir.path().join("basis.json");
    basis.save(&path).unwrap();
    let loaded = BasisSet::load(&path).unwrap();
    let (x, u) = (sample_state(&mut rng), sample_control(&mut rng));
    for j in 0..3 {
        let a = basis.basis_increment(j, &x, u, 0.1).unwrap();
        let b = loaded.basis_increment(j, &x, u, 0.1).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    // The baseline cannot be loaded from a basis checkpoint or vice versa.
    assert!(matches!(NodeModel::load(&path), Err(Error::Checkpoint(_))));
    let node = NodeModel::init(&[12, 12], &mut rng).unwrap();
    let node_path = dir.path().join("node.json");
    node.save(&node_path).unwrap();
    assert_eq!(NodeModel::load(&node_path).unwrap(), node);
    assert!(matches!(BasisSet::load(&node_path), Err(Error::Checkpoint(_))));

    let text = std::fs::read_to_string(&path).unwrap();
    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, text.replacen("\"format_version\":1", "\"format_version\":99", 1)).unwrap();
    let err = BasisSet::load(&wrong).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(BasisSet::load(&truncated), Err(Error::Checkpoint(_))));
    assert!(matches!(BasisSet::load(&dir.path().join("absent.json")), Err(Error::MissingInput(_))));
}
