use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        }
    }

    fn backprop(self, grad_out: ArrayView2<f64>, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                let mut g = grad_out.to_owned();
                g.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::Identity => grad_out.to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
struct Cache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn check_width(x: &ArrayView2<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::usage(format!(
            "input width {} does not match layer fan-in {expected}",
            x.ncols()
        )));
    }
    Ok(())
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += b;
    y
}

/// Plain fully connected layer, `y = act(x W^T + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
    pub grad_weights: Array2<f64>,
    pub grad_biases: Array1<f64>,
    cache: Option<Cache>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = uniform_init(rng, fan_out, fan_in, bound);
        let biases = uniform_init(rng, 1, fan_out, bound).remove_axis(Axis(0));
        Self::from_parts(weights, biases, activation)
    }

    pub fn from_parts(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Self {
        DenseLayer {
            grad_weights: Array2::zeros(weights.raw_dim()),
            grad_biases: Array1::zeros(biases.raw_dim()),
            weights,
            biases,
            activation,
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(&x, self.fan_in())?;
        Ok(self
            .activation
            .apply(&affine(x, &self.weights, &self.biases)))
    }

    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(&x, self.fan_in())?;
        let pre = affine(x, &self.weights, &self.biases);
        let out = self.activation.apply(&pre);
        self.cache = Some(Cache {
            input: x.to_owned(),
            pre,
        });
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::usage("backward called before forward"))?;
        let g = self.activation.backprop(grad_out, &cache.pre);
        self.grad_weights += &g.t().dot(&cache.input);
        self.grad_biases += &g.sum_axis(Axis(0));
        Ok(g.dot(&self.weights))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_biases.fill(0.0);
    }
}

/// Linear layer with factorized Gaussian parameter noise:
/// `W = mu_w + sigma_w * (eps_out eps_in^T)`, `b = mu_b + sigma_b * eps_out`.
#[derive(Debug, Clone)]
pub struct NoisyDenseLayer {
    pub mu_w: Array2<f64>,
    pub sigma_w: Array2<f64>,
    pub mu_b: Array1<f64>,
    pub sigma_b: Array1<f64>,
    pub eps_in: Array1<f64>,
    pub eps_out: Array1<f64>,
    pub activation: Activation,
    pub grad_mu_w: Array2<f64>,
    pub grad_sigma_w: Array2<f64>,
    pub grad_mu_b: Array1<f64>,
    pub grad_sigma_b: Array1<f64>,
    cache: Option<(Cache, Array2<f64>)>,
}

/// `sign(x) * sqrt(|x|)` applied to standard normal draws.
pub fn factorized_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || {
        let x: f64 = StandardNormal.sample(rng);
        x.signum() * x.abs().sqrt()
    })
}

impl NoisyDenseLayer {
    pub const SIGMA0: f64 = 0.5;

    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let sigma = Self::SIGMA0 / (fan_in as f64).sqrt();
        let mu_w = uniform_init(rng, fan_out, fan_in, bound);
        let mu_b = uniform_init(rng, 1, fan_out, bound).remove_axis(Axis(0));
        let mut layer = NoisyDenseLayer {
            sigma_w: Array2::from_elem((fan_out, fan_in), sigma),
            sigma_b: Array1::from_elem(fan_out, sigma),
            eps_in: Array1::zeros(fan_in),
            eps_out: Array1::zeros(fan_out),
            grad_mu_w: Array2::zeros((fan_out, fan_in)),
            grad_sigma_w: Array2::zeros((fan_out, fan_in)),
            grad_mu_b: Array1::zeros(fan_out),
            grad_sigma_b: Array1::zeros(fan_out),
            mu_w,
            mu_b,
            activation,
            cache: None,
        };
        layer.resample_noise(rng);
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.mu_w.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.mu_w.nrows()
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.eps_in = factorized_noise(rng, self.fan_in());
        self.eps_out = factorized_noise(rng, self.fan_out());
    }

    pub fn zero_noise(&mut self) {
        self.eps_in.fill(0.0);
        self.eps_out.fill(0.0);
    }

    fn noise_outer(&self) -> Array2<f64> {
        let col = self.eps_out.view().insert_axis(Axis(1));
        let row = self.eps_in.view().insert_axis(Axis(0));
        &col * &row
    }

    /// The weight matrix and bias under the current noise sample.
    pub fn effective_params(&self) -> (Array2<f64>, Array1<f64>) {
        let w = &self.mu_w + &(&self.sigma_w * &self.noise_outer());
        let b = &self.mu_b + &(&self.sigma_b * &self.eps_out);
        (w, b)
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(&x, self.fan_in())?;
        let (w, b) = self.effective_params();
        Ok(self.activation.apply(&affine(x, &w, &b)))
    }

    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(&x, self.fan_in())?;
        let (w, b) = self.effective_params();
        let pre = affine(x, &w, &b);
        let out = self.activation.apply(&pre);
        self.cache = Some((
            Cache {
                input: x.to_owned(),
                pre,
            },
            w,
        ));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (cache, w) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::usage("backward called before forward"))?;
        let g = self.activation.backprop(grad_out, &cache.pre);
        let gw = g.t().dot(&cache.input);
        let gb = g.sum_axis(Axis(0));
        self.grad_sigma_w += &(&gw * &self.noise_outer());
        self.grad_mu_w += &gw;
        self.grad_sigma_b += &(&gb * &self.eps_out);
        self.grad_mu_b += &gb;
        Ok(g.dot(w))
    }

    pub fn zero_grad(&mut self) {
        self.grad_mu_w.fill(0.0);
        self.grad_sigma_w.fill(0.0);
        self.grad_mu_b.fill(0.0);
        self.grad_sigma_b.fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Noisy(NoisyDenseLayer),
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Dense(l) => l.fan_in(),
            Layer::Noisy(l) => l.fan_in(),
        }
    }

    pub fn fan_out(&self) -> usize {
        match self {
            Layer::Dense(l) => l.fan_out(),
            Layer::Noisy(l) => l.fan_out(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Noisy(l) => l.activation,
        }
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Layer::Dense(l) => l.infer(x),
            Layer::Noisy(l) => l.infer(x),
        }
    }

    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Noisy(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Noisy(l) => l.backward(grad_out),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Dense(l) => l.zero_grad(),
            Layer::Noisy(l) => l.zero_grad(),
        }
    }

    /// Visits `(name, values, grads)` for every parameter tensor in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[f64])) {
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        match self {
            Layer::Dense(l) => {
                f(
                    "weights",
                    s2(&mut l.weights),
                    l.grad_weights.as_slice().unwrap(),
                );
                f(
                    "biases",
                    s1(&mut l.biases),
                    l.grad_biases.as_slice().unwrap(),
                );
            }
            Layer::Noisy(l) => {
                f("mu_w", s2(&mut l.mu_w), l.grad_mu_w.as_slice().unwrap());
                f(
                    "sigma_w",
                    s2(&mut l.sigma_w),
                    l.grad_sigma_w.as_slice().unwrap(),
                );
                f("mu_b", s1(&mut l.mu_b), l.grad_mu_b.as_slice().unwrap());
                f(
                    "sigma_b",
                    s1(&mut l.sigma_b),
                    l.grad_sigma_b.as_slice().unwrap(),
                );
            }
        }
    }

    pub fn num_params(&self) -> usize {
        let (i, o) = (self.fan_in(), self.fan_out());
        match self {
            Layer::Dense(_) => i * o + o,
            Layer::Noisy(_) => 2 * (i * o + o),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = NoisyDenseLayer::new(&mut rng, 3, 2, Activation::Relu);
        let x = array![[0.3, -0.2, 1.0], [0.5, 0.5, -0.5]];
        l.forward(x.view()).unwrap();
        let gin = l.backward(Array2::zeros((2, 2)).view()).unwrap();
        assert!(gin.iter().all(|&v| v == 0.0));
        assert!(l
            .grad_mu_w
            .iter()
            .chain(l.grad_sigma_w.iter())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = DenseLayer::new(&mut rng, 3, 2, Activation::Identity);
        let x = array![[1.0, 2.0, 3.0]];
        let g = array![[0.5, -1.0]];
        l.forward(x.view()).unwrap();
        l.backward(g.view()).unwrap();
        let expected = g.t().dot(&x);
        assert_eq!(l.grad_weights, expected);
        assert_eq!(l.grad_biases, array![0.5, -1.0]);
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = DenseLayer::new(&mut rng, 2, 2, Activation::Relu);
        assert!(matches!(
            l.backward(Array2::zeros((1, 2)).view()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_noise_equals_dense_with_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noisy = NoisyDenseLayer::new(&mut rng, 4, 3, Activation::Relu);
        noisy.zero_noise();
        let dense =
            DenseLayer::from_parts(noisy.mu_w.clone(), noisy.mu_b.clone(), Activation::Relu);
        let x = uniform_init(&mut rng, 5, 4, 1.0);
        assert_eq!(
            noisy.infer(x.view()).unwrap(),
            dense.infer(x.view()).unwrap()
        );
    }

    #[test]
    fn zero_sigma_makes_noise_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut l = NoisyDenseLayer::new(&mut rng, 4, 3, Activation::Identity);
        l.sigma_w.fill(0.0);
        l.sigma_b.fill(0.0);
        let x = uniform_init(&mut rng, 2, 4, 1.0);
        let a = l.infer(x.view()).unwrap();
        l.resample_noise(&mut rng);
        assert_eq!(a, l.infer(x.view()).unwrap());
    }

    #[test]
    fn width_mismatch_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = DenseLayer::new(&mut rng, 3, 2, Activation::Relu);
        assert!(l.infer(Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn factorized_noise_statistics() {
        // Products eps_out[i] * eps_in[j] of f(x) = sign(x) sqrt|x| draws have mean 0 and
        // variance (E|x|)^2 = 2/pi.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let a = factorized_noise(&mut rng, n);
        let b = factorized_noise(&mut rng, n);
        let prods: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let mean = prods.iter().sum::<f64>() / n as f64;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
        let expected_var = 2.0 / std::f64::consts::PI;
        assert!(
            mean.abs() < 5.0 * (expected_var / n as f64).sqrt(),
            "mean {mean}"
        );
        assert!((var / expected_var - 1.0).abs() < 0.05, "var {var}");
    }
}
