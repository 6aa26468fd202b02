use ndarray::Array2;
use qcloud::nn::{
    Activation, CategoricalQNet, DenseLayer, Layer, NoisyDenseLayer, QNetConfig, Support,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn nudge(layer: &mut Layer, tensor: usize, idx: usize, delta: f64) {
    let mut t = 0;
    layer.visit_params(&mut |_, p, _| {
        if t == tensor {
            p[idx] += delta;
        }
        t += 1;
    });
}

/// Checks parameter and input gradients of `sum(layer(x) * g)`. Returns the worst error.
fn check_layer(mut layer: Layer, rng: &mut ChaCha8Rng) -> f64 {
    let x = random(rng, 5, layer.fan_in());
    let g = random(rng, 5, layer.fan_out());
    layer.zero_grad();
    layer.forward(x.view()).unwrap();
    let gx = layer.backward(g.view()).unwrap();

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit_params(&mut |name, _, grads| analytic.push((name.to_owned(), grads.to_vec())));

    let loss = |l: &Layer, x: &Array2<f64>| (l.infer(x.view()).unwrap() * &g).sum();
    let mut worst = 0.0f64;
    for (t, (name, grads)) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            nudge(&mut layer, t, j, H);
            let up = loss(&layer, &x);
            nudge(&mut layer, t, j, -2.0 * H);
            let down = loss(&layer, &x);
            nudge(&mut layer, t, j, H);
            let e = rel_err(a, (up - down) / (2.0 * H));
            assert!(
                e < TOL,
                "{name}[{j}]: analytic {a}, numeric {}",
                (up - down) / (2.0 * H)
            );
            worst = worst.max(e);
        }
    }
    for ((i, j), &a) in gx.indexed_iter() {
        let mut xp = x.clone();
        xp[[i, j]] += H;
        let mut xm = x.clone();
        xm[[i, j]] -= H;
        let n = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * H);
        let e = rel_err(a, n);
        assert!(e < TOL, "input[{i},{j}]: analytic {a}, numeric {n}");
        worst = worst.max(e);
    }
    worst
}

#[test]
fn dense_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for act in [Activation::Identity, Activation::Relu] {
        let layer = Layer::Dense(DenseLayer::new(&mut rng, 6, 4, act));
        check_layer(layer, &mut rng);
    }
}

#[test]
fn noisy_layer_gradients_including_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for act in [Activation::Identity, Activation::Relu] {
        let mut l = NoisyDenseLayer::new(&mut rng, 6, 4, act);
        l.resample_noise(&mut rng);
        check_layer(Layer::Noisy(l), &mut rng);
    }
}

/// Full network with the training loss: importance-weighted cross-entropy between fixed
/// target distributions and the chosen actions' predicted distributions.
#[test]
fn categorical_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for noisy in [false, true] {
        let cfg = QNetConfig {
            input_dim: 5,
            hidden: vec![7, 6],
            num_actions: 3,
            support: Support::new(-10.0, 10.0, 4).unwrap(),
            noisy,
        };
        let mut net = CategoricalQNet::new(cfg, &mut rng).unwrap();
        net.resample_noise(&mut rng);
        let b = 4;
        let atoms = 4;
        let x = random(&mut rng, b, 5);
        let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..1.0)).collect();
        let targets = Array2::from_shape_fn((b, atoms), |_| rng.random_range(0.0..1.0));
        let targets = &targets
            / &targets
                .sum_axis(ndarray::Axis(1))
                .insert_axis(ndarray::Axis(1));

        let loss = |net: &CategoricalQNet| {
            let p = net.infer(x.view()).unwrap();
            let mut l = 0.0;
            for i in 0..b {
                for k in 0..atoms {
                    l -= weights[i] * targets[[i, k]] * p[[i, actions[i], k]].ln();
                }
            }
            l / b as f64
        };

        net.zero_grad();
        let p = net.forward(x.view()).unwrap();
        let mut grad = Array2::zeros((b, 3 * atoms));
        for i in 0..b {
            for k in 0..atoms {
                grad[[i, actions[i] * atoms + k]] =
                    weights[i] * (p[[i, actions[i], k]] - targets[[i, k]]) / b as f64;
            }
        }
        net.backward(grad.view()).unwrap();

        let n_layers = net.layers().len();
        for li in 0..n_layers {
            let mut analytic = Vec::new();
            net.layers_mut()[li]
                .visit_params(&mut |name, _, g| analytic.push((name.to_owned(), g.to_vec())));
            for (t, (name, grads)) in analytic.iter().enumerate() {
                for (j, &a) in grads.iter().enumerate() {
                    nudge(&mut net.layers_mut()[li], t, j, H);
                    let up = loss(&net);
                    nudge(&mut net.layers_mut()[li], t, j, -2.0 * H);
                    let down = loss(&net);
                    nudge(&mut net.layers_mut()[li], t, j, H);
                    let n = (up - down) / (2.0 * H);
                    assert!(
                        rel_err(a, n) < TOL,
                        "noisy={noisy} layer {li} {name}[{j}]: analytic {a}, numeric {n}"
                    );
                }
            }
        }
    }
}
