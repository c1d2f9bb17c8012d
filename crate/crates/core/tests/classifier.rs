use bt_classifier::classifier::{init, load_model, save_model, train, Adam, Dataset, MlpConfig, MlpModel};
use bt_classifier::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, d: usize, classes: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    let y = (0..n).map(|i| i % classes).collect();
    (x, y)
}

fn loss(model: &MlpModel, x: &Array2<f64>, y: &[usize]) -> f64 {
    model.gradients(x.view(), y).unwrap().0
}

/// Central difference on one parameter, selected by `pick`.
fn numeric(model: &MlpModel, x: &Array2<f64>, y: &[usize], pick: impl Fn(&mut MlpModel) -> &mut f64) -> f64 {
    let h = 1e-6;
    let mut plus = model.clone();
    *pick(&mut plus) += h;
    let mut minus = model.clone();
    *pick(&mut minus) -= h;
    (loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-3)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for normalize in [false, true] {
        let cfg = MlpConfig {
            hidden_dim: 4,
            seed: 3,
            normalize_features: normalize,
            ..MlpConfig::new(5, 3)
        };
        let mut model = init(&cfg).unwrap();
        model.b1.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        model.b2[1] = -0.2;
        let (x, y) = random_batch(7, 5, 3, 11);
        let (_, g) = model.gradients(x.view(), &y).unwrap();

        for ((i, j), &a) in g.w1.indexed_iter() {
            let n = numeric(&model, &x, &y, |m| &mut m.w1[[i, j]]);
            assert!(close(a, n), "w1[{i},{j}]: {a} vs {n}");
        }
        for (i, &a) in g.b1.indexed_iter() {
            let n = numeric(&model, &x, &y, |m| &mut m.b1[i]);
            assert!(close(a, n), "b1[{i}]: {a} vs {n}");
        }
        for ((i, j), &a) in g.w2.indexed_iter() {
            let n = numeric(&model, &x, &y, |m| &mut m.w2[[i, j]]);
            assert!(close(a, n), "w2[{i},{j}]: {a} vs {n}");
        }
        for (i, &a) in g.b2.indexed_iter() {
            let n = numeric(&model, &x, &y, |m| &mut m.b2[i]);
            assert!(close(a, n), "b2[{i}]: {a} vs {n}");
        }
    }
}

#[test]
fn small_step_decreases_the_loss_on_a_fixed_batch() {
    let cfg = MlpConfig::new(6, 2);
    let mut model = init(&cfg).unwrap();
    let (x, y) = random_batch(16, 6, 2, 5);
    let before = loss(&model, &x, &y);
    let mut adam = Adam::new(1e-3, &model);
    let (_, g) = model.gradients(x.view(), &y).unwrap();
    adam.step(&mut model, &g);
    assert!(loss(&model, &x, &y) < before);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (x, y) = random_batch(64, 5, 2, 9);
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let data = Dataset::new(&rows, y).unwrap();
    let cfg = MlpConfig {
        max_epochs: 10,
        ..MlpConfig::new(5, 2)
    };
    let a = train(init(&cfg).unwrap(), &data, &data, &cfg).unwrap();
    let b = train(init(&cfg).unwrap(), &data, &data, &cfg).unwrap();
    assert_eq!(a, b);
    let other = MlpConfig { seed: 1, ..cfg.clone() };
    let c = train(init(&other).unwrap(), &data, &data, &other).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn saved_model_loads_bit_for_bit_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.model");
    let model = init(&MlpConfig::new(8, 3)).unwrap();
    save_model(&path, &model).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);

    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    json["w1"][0] = serde_json::json!(123.0);
    std::fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Contract(_) | Error::Validation(_))));

    std::fs::write(&path, b"not json").unwrap();
    assert!(load_model(&path).is_err());
}
