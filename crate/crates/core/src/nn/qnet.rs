use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer, Layer, NoisyDenseLayer};
use crate::error::{Error, Result};

pub const PARAM_FORMAT_VERSION: u32 = 1;

/// Fixed, evenly spaced value support `z_1..z_N` on `[v_min, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub atoms: usize,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, atoms: usize) -> Result<Self> {
        if !(v_min < v_max) || atoms < 2 {
            return Err(Error::usage(
                "support needs v_min < v_max and at least two atoms",
            ));
        }
        Ok(Support {
            v_min,
            v_max,
            atoms,
        })
    }

    pub fn delta_z(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let dz = self.delta_z();
        (0..self.atoms)
            .map(|k| self.v_min + k as f64 * dz)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_actions: usize,
    pub support: Support,
    /// Use noisy layers for hidden and head layers.
    pub noisy: bool,
}

/// MLP producing, for each action, a softmax distribution over the value support.
#[derive(Debug, Clone)]
pub struct CategoricalQNet {
    config: QNetConfig,
    layers: Vec<Layer>,
    atoms: Vec<f64>,
    forward_done: bool,
}

/// Per-action softmax over atom logits laid out as `[batch, actions * atoms]`.
pub fn softmax_atoms(logits: &Array2<f64>, num_actions: usize, atoms: usize) -> Array3<f64> {
    let batch = logits.nrows();
    let mut out = logits
        .to_owned()
        .into_shape_with_order((batch, num_actions, atoms))
        .expect("logit width is actions * atoms");
    for mut row in out.lanes_mut(Axis(2)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

impl CategoricalQNet {
    pub fn new<R: Rng + ?Sized>(config: QNetConfig, rng: &mut R) -> Result<Self> {
        if config.input_dim == 0 || config.num_actions == 0 {
            return Err(Error::usage(
                "network needs nonzero input and action counts",
            ));
        }
        let mut layers = Vec::with_capacity(config.hidden.len() + 1);
        let mut fan_in = config.input_dim;
        let out_dim = config.num_actions * config.support.atoms;
        let widths = config
            .hidden
            .iter()
            .copied()
            .chain(std::iter::once(out_dim));
        let n = config.hidden.len();
        for (i, fan_out) in widths.enumerate() {
            let act = if i < n {
                Activation::Relu
            } else {
                Activation::Identity
            };
            layers.push(if config.noisy {
                Layer::Noisy(NoisyDenseLayer::new(rng, fan_in, fan_out, act))
            } else {
                Layer::Dense(DenseLayer::new(rng, fan_in, fan_out, act))
            });
            fan_in = fan_out;
        }
        Ok(CategoricalQNet {
            atoms: config.support.values(),
            config,
            layers,
            forward_done: false,
        })
    }

    /// Assembles a network from explicit layers (used for loading and tests).
    pub fn from_layers(config: QNetConfig, layers: Vec<Layer>) -> Result<Self> {
        let mut width = config.input_dim;
        for l in &layers {
            if l.fan_in() != width {
                return Err(Error::usage("layer widths do not chain"));
            }
            width = l.fan_out();
        }
        if width != config.num_actions * config.support.atoms {
            return Err(Error::usage("head width must equal actions * atoms"));
        }
        Ok(CategoricalQNet {
            atoms: config.support.values(),
            config,
            layers,
            forward_done: false,
        })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Raw head logits without caching.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for l in &self.layers {
            h = l.infer(h.view())?;
        }
        Ok(h)
    }

    /// Atom probabilities `[batch, actions, atoms]` without caching activations.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array3<f64>> {
        let logits = self.logits(x)?;
        Ok(softmax_atoms(
            &logits,
            self.config.num_actions,
            self.config.support.atoms,
        ))
    }

    /// Like [`infer`](Self::infer) but caches activations for a following `backward`.
    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Array3<f64>> {
        let mut h = x.to_owned();
        for l in &mut self.layers {
            h = l.forward(h.view())?;
        }
        self.forward_done = true;
        Ok(softmax_atoms(
            &h,
            self.config.num_actions,
            self.config.support.atoms,
        ))
    }

    /// Backpropagates a gradient w.r.t. the head logits (`[batch, actions * atoms]`),
    /// accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: ArrayView2<f64>) -> Result<Array2<f64>> {
        if !self.forward_done {
            return Err(Error::usage("backward called before forward"));
        }
        let mut g = grad_logits.to_owned();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(g.view())?;
        }
        Ok(g)
    }

    /// Expected values `Q(s, a) = sum_k z_k p_k(s, a)` as `[batch, actions]`.
    pub fn expected_q(&self, probs: &Array3<f64>) -> Array2<f64> {
        let z = ndarray::ArrayView1::from(&self.atoms[..]);
        let (b, a, n) = probs.dim();
        probs
            .to_shape((b * a, n))
            .expect("contiguous probabilities")
            .dot(&z)
            .into_shape_with_order((b, a))
            .expect("batch * actions")
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            if let Layer::Noisy(n) = l {
                n.resample_noise(rng);
            }
        }
    }

    pub fn zero_noise(&mut self) {
        for l in &mut self.layers {
            if let Layer::Noisy(n) = l {
                n.zero_noise();
            }
        }
    }

    /// Visits every parameter tensor as `(qualified name, values, grads)`.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&mut |name, v, g| f(&format!("layer{i}.{name}"), v, g));
        }
    }

    pub fn param_file(&mut self) -> ParamFile {
        let mut tensors = Vec::new();
        let shapes: Vec<Vec<Vec<usize>>> = self.layers.iter().map(param_shapes).collect();
        let mut idx = 0;
        let flat_shapes: Vec<Vec<usize>> = shapes.into_iter().flatten().collect();
        self.visit_params(&mut |name, v, _| {
            tensors.push(NamedTensor {
                name: name.to_owned(),
                shape: flat_shapes[idx].clone(),
                data: v.to_vec(),
            });
            idx += 1;
        });
        ParamFile {
            format_version: PARAM_FORMAT_VERSION,
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        if file.format_version != PARAM_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter format version {}",
                file.format_version
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = CategoricalQNet::new(file.config.clone(), &mut rng)?;
        net.zero_noise();
        let expected: Vec<Vec<usize>> = net.layers.iter().flat_map(param_shapes).collect();
        if expected.len() != file.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, file has {}",
                expected.len(),
                file.tensors.len()
            )));
        }
        let mut err = None;
        let mut idx = 0;
        net.visit_params(&mut |name, v, _| {
            let t = &file.tensors[idx];
            if t.name != name || t.shape != expected[idx] || t.data.len() != v.len() {
                err.get_or_insert_with(|| {
                    Error::Format(format!("tensor {idx} ({}) does not match {name}", t.name))
                });
            } else {
                v.copy_from_slice(&t.data);
            }
            idx += 1;
        });
        match err {
            Some(e) => Err(e),
            None => Ok(net),
        }
    }
}

fn param_shapes(l: &Layer) -> Vec<Vec<usize>> {
    let (i, o) = (l.fan_in(), l.fan_out());
    match l {
        Layer::Dense(_) => vec![vec![o, i], vec![o]],
        Layer::Noisy(_) => vec![vec![o, i], vec![o, i], vec![o], vec![o]],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized network: configuration plus named parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format_version: u32,
    pub config: QNetConfig,
    pub tensors: Vec<NamedTensor>,
}

/// Selects the `[batch, atoms]` slice for one action per row.
pub fn gather_actions(probs: &Array3<f64>, actions: &[usize]) -> Array2<f64> {
    let (b, _, n) = probs.dim();
    let mut out = Array2::zeros((b, n));
    for (i, &a) in actions.iter().enumerate() {
        out.row_mut(i).assign(&probs.slice(s![i, a, ..]));
    }
    out
}
