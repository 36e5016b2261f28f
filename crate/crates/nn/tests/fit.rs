use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacgap_nn::{Adam, AdamConfig, Linear, Module, TensorArchive};

fn target(x: &Array2<f32>) -> Array2<f32> {
    let a = ndarray::arr2(&[[0.5f32, -1.0, 2.0], [1.5, 0.25, -0.5]]);
    x.dot(&a.t()) + &ndarray::arr1(&[0.3f32, -0.7])
}

/// One full-batch MSE step; returns the loss before the update.
fn step(layer: &mut Linear, opt: &mut Adam, x: &Array2<f32>) -> f32 {
    let y_true = target(x);
    layer.zero_grad();
    let (y, input) = layer.forward(x);
    let diff = &y - &y_true;
    let n = diff.len() as f32;
    let loss = diff.iter().map(|d| d * d).sum::<f32>() / n;
    layer.backward(&input, &(diff * (2.0 / n)), true);
    opt.step(layer, 0.05);
    loss
}

fn save(layer: &Linear, opt: &Adam, path: &Path) {
    let mut a = TensorArchive::new();
    for (name, v) in layer.named_values("model") {
        a.insert(name, v);
    }
    for (name, v) in opt.named_state("adam") {
        a.insert(name, v);
    }
    a.metadata.insert("steps".into(), opt.steps.to_string());
    a.save(path).unwrap();
}

fn load(path: &Path) -> (Linear, Adam) {
    let a = TensorArchive::load(path).unwrap();
    let mut layer = Linear::new(3, 2);
    layer.visit_params_mut("model", &mut |name, p| p.value = a.get(name).unwrap().clone());
    let mut opt = Adam::new(AdamConfig::default());
    let steps = a.meta("steps").unwrap().parse().unwrap();
    opt.restore_state(&layer, "adam", steps, &|k| a.get(k).ok().cloned()).unwrap();
    (layer, opt)
}

#[test]
fn adam_fits_a_linear_map_and_resumes_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array2::from_shape_fn((32, 3), |_| rng.random_range(-1.0f32..1.0));
    let mut layer = Linear::new(3, 2);
    layer.init_he(&mut rng);
    let mut opt = Adam::new(AdamConfig::default());

    let first = step(&mut layer, &mut opt, &x);
    for _ in 0..99 {
        step(&mut layer, &mut opt, &x);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.safetensors");
    save(&layer, &opt, &path);
    let (mut resumed, mut resumed_opt) = load(&path);

    let mut last = 0.0;
    for _ in 0..400 {
        last = step(&mut layer, &mut opt, &x);
        let other = step(&mut resumed, &mut resumed_opt, &x);
        assert_eq!(last, other);
    }
    assert!(last < 1e-4 * first, "loss {first} -> {last}");
    assert_eq!(layer.named_values(""), resumed.named_values(""));
}
