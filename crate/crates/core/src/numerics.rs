//! Dense feed-forward networks with analytic backpropagation and Adam.
//!
//! Networks store weights as `out x in` matrices. Batched passes take inputs
//! as `batch x in` row matrices so a minibatch goes through each layer as a
//! single matrix product.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `tanh` through a single `exp`; within 1e-15 of `f64::tanh` everywhere
/// and several times faster, which matters because training is dominated
/// by hidden-layer activations.
#[inline]
fn tanh(z: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A feed-forward network: a chain of affine maps each followed by an
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Partial derivatives for every parameter of a [`DenseNet`], laid out like it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::InvalidArgument("bias length != layer width".into()));
            }
            if !layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NumericalFault("non-finite network parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Multilayer perceptron with tanh hidden layers and a linear head.
    ///
    /// Weights use orthogonal initialization: hidden layers with gain
    /// `sqrt(2)`, the head with `head_gain`. Biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, head_gain: f64, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &width in hidden {
            layers.push(Layer {
                weight: orthogonal(width, fan_in, std::f64::consts::SQRT_2, rng),
                bias: Array1::zeros(width),
                activation: Activation::Tanh,
            });
            fan_in = width;
        }
        layers.push(Layer {
            weight: orthogonal(output, fan_in, head_gain, rng),
            bias: Array1::zeros(output),
            activation: Activation::Identity,
        });
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("forward input", self.input_dim(), x.len())?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut next = layer.bias.to_vec();
            for (out, row) in next.iter_mut().zip(layer.weight.rows()) {
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(&current) {
                    acc += w * v;
                }
                *out = layer.activation.apply(*out + acc);
            }
            current = next;
        }
        Ok(current)
    }

    /// Forward pass over a `batch x input_dim` matrix.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        check_dim("forward_batch input", self.input_dim(), x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let input = activations.last().expect("nonempty");
            let mut z = input.dot(&layer.weight.t());
            z += &layer.bias;
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradient of `sum_b upstream[b] . output[b]` with respect to every
    /// parameter, given the cache of a batched forward pass.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Gradient> {
        let out = cache.output();
        check_dim("backward upstream width", self.output_dim(), upstream.ncols())?;
        check_dim("backward upstream rows", out.nrows(), upstream.nrows())?;
        check_dim("backward cache depth", self.layers.len() + 1, cache.activations.len())?;

        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                Zip::from(&mut delta)
                    .and(&cache.activations[i + 1])
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            let input = &cache.activations[i];
            weights.push(delta.t().dot(input));
            biases.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                delta = delta.dot(&layer.weight);
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradient { weights, biases })
    }

    /// Single-input gradient of `upstream . forward(x)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradient> {
        check_dim("backward input", self.input_dim(), x.len())?;
        check_dim("backward upstream", self.output_dim(), upstream.len())?;
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row view");
        let cache = self.forward_batch(xb)?;
        self.backward_batch(&cache, ub)
    }

    /// All parameters flattened layer by layer: weights row-major, then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("set_parameters", self.num_parameters(), flat.len())?;
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient {
            weights: self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    fn congruent(&self, g: &Gradient) -> bool {
        g.weights.len() == self.layers.len()
            && g.biases.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(g.weights.iter().zip(&g.biases))
                .all(|(l, (w, b))| l.weight.dim() == w.dim() && l.bias.len() == b.len())
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    // Orthonormalize along the shorter side with modified Gram-Schmidt.
    let (n_vec, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let value = if rows <= cols { basis[r][c] } else { basis[c][r] };
        gain * value
    })
}

impl Gradient {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    /// Flattened in the same order as [`DenseNet::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            *w *= factor;
            *b *= factor;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm {
            self.scale(max_norm / (norm + 1e-12));
        }
        norm
    }
}

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Gradient,
    second_moment: Gradient,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            first_moment: net.zero_gradient(),
            second_moment: net.zero_gradient(),
            step: 0,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update to `net` (gradient descent on `grad`).
///
/// A gradient with non-finite entries is rejected and neither the network
/// nor the optimizer state changes.
pub fn adam_step(net: &mut DenseNet, grad: &Gradient, state: &mut AdamState) -> Result<()> {
    if !net.congruent(grad) || !net.congruent(&state.first_moment) {
        return Err(Error::InvalidArgument("gradient shape does not match network".into()));
    }
    if !grad.is_finite() {
        return Err(Error::NumericalFault("non-finite gradient".into()));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let t = state.step as i32;
    let step_size = state.learning_rate / (1.0 - b1.powi(t));
    let v_correction = 1.0 / (1.0 - b2.powi(t));

    let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step_size * *m / ((*v * v_correction).sqrt() + eps);
    };
    for (i, layer) in net.layers.iter_mut().enumerate() {
        Zip::from(&mut layer.weight)
            .and(&mut state.first_moment.weights[i])
            .and(&mut state.second_moment.weights[i])
            .and(&grad.weights[i])
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&mut state.first_moment.biases[i])
            .and(&mut state.second_moment.biases[i])
            .and(&grad.biases[i])
            .for_each(update);
    }
    Ok(())
}

/// Serializable form of a network: layer shapes plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&DenseNet> for Vec<LayerRecord> {
    fn from(net: &DenseNet) -> Self {
        net.layers
            .iter()
            .map(|l| LayerRecord {
                input: l.input_dim(),
                output: l.output_dim(),
                activation: l.activation,
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect()
    }
}

impl TryFrom<Vec<LayerRecord>> for DenseNet {
    type Error = Error;

    fn try_from(records: Vec<LayerRecord>) -> Result<Self> {
        let layers = records
            .into_iter()
            .map(|r| {
                let weight = Array2::from_shape_vec((r.output, r.input), r.weight)
                    .map_err(|e| Error::InvalidArgument(format!("weight shape: {e}")))?;
                check_dim("layer bias", r.output, r.bias.len())?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(r.bias),
                    activation: r.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> DenseNet {
        DenseNet::new(vec![Layer {
            weight,
            bias,
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::new(vec![
            Layer::zeros(3, 5, Activation::Tanh),
            Layer::zeros(5, 2, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn tanh_matches_std() {
        for i in -40_000..=40_000 {
            let z = i as f64 * 5e-4;
            assert!((tanh(z) - z.tanh()).abs() < 1e-15, "{z}");
        }
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn scalar_tanh_layer() {
        let net = single(array![[1.0]], array![0.0], Activation::Tanh);
        let y = net.forward(&[0.5]).unwrap()[0];
        assert!((y - 0.5f64.tanh()).abs() < 1e-15);
        assert!((y - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(net.backward(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn rejects_unchained_layers() {
        let err = DenseNet::new(vec![
            Layer::zeros(3, 4, Activation::Tanh),
            Layer::zeros(5, 1, Activation::Identity),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::mlp(3, &[8, 8], 2, 1.0, &mut rng);
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_closed_form() {
        let net = single(array![[1.0, -2.0], [0.5, 3.0]], array![0.1, 0.2], Activation::Identity);
        let x = [0.7, -1.3];
        let u = [2.0, -0.5];
        let g = net.backward(&x, &u).unwrap();
        for (r, ur) in u.iter().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                assert_eq!(g.weights[0][[r, c]], ur * xc);
            }
            assert_eq!(g.biases[0][r], *ur);
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::mlp(3, &[16, 16], 2, 0.5, &mut rng);
        let xs = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let cache = net.forward_batch(xs.view()).unwrap();
        for (row, out) in xs.rows().into_iter().zip(cache.output().rows()) {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(out.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthogonal(4, 10, 1.0, &mut rng);
        let gram = w.dot(&w.t());
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expected).abs() < 1e-12);
            }
        }
        let tall = orthogonal(10, 3, 2.0, &mut rng);
        let gram = tall.t().dot(&tall);
        assert!((gram[[1, 1]] - 4.0).abs() < 1e-12);
        assert!(gram[[0, 2]].abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = DenseNet::mlp(2, &[4], 1, 1.0, &mut rng);
        let before = net.parameters();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let zero = net.zero_gradient();
        for _ in 0..5 {
            adam_step(&mut net, &zero, &mut state).unwrap();
        }
        assert_eq!(net.parameters(), before);
        assert_eq!(state.step(), 5);
    }

    #[test]
    fn adam_first_step_is_unit_scaled() {
        let mut net = single(array![[0.0]], array![0.0], Activation::Identity);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&net, cfg);
        let grad = Gradient {
            weights: vec![array![[1.0]]],
            biases: vec![array![1.0]],
        };
        adam_step(&mut net, &grad, &mut state).unwrap();
        // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((net.layers()[0].weight[[0, 0]] - expected).abs() < 1e-15);
        assert!((net.layers()[0].bias[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::mlp(3, &[6], 2, 1.0, &mut rng);
        let grad = net.backward(&[0.3, 0.1, -0.2], &[1.0, -1.0]).unwrap();
        let mut a = net.clone();
        let mut b = net.clone();
        let mut sa = AdamState::new(&net, AdamConfig::default());
        let mut sb = sa.clone();
        adam_step(&mut a, &grad, &mut sa).unwrap();
        adam_step(&mut b, &grad, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = single(array![[0.5]], array![0.0], Activation::Identity);
        let mut state = AdamState::new(&net, AdamConfig::default());
        let grad = Gradient {
            weights: vec![array![[f64::NAN]]],
            biases: vec![array![0.0]],
        };
        let before = net.clone();
        assert!(matches!(
            adam_step(&mut net, &grad, &mut state),
            Err(Error::NumericalFault(_))
        ));
        assert_eq!(net, before);
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn clip_norm_caps_global_norm() {
        let mut g = Gradient {
            weights: vec![array![[3.0]]],
            biases: vec![array![4.0]],
        };
        let before = g.clip_norm(0.5);
        assert_eq!(before, 5.0);
        assert!((g.l2_norm() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn flat_parameters_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::mlp(3, &[5], 2, 1.0, &mut rng);
        let mut other = DenseNet::mlp(3, &[5], 2, 1.0, &mut rng);
        other.set_parameters(&net.parameters()).unwrap();
        assert_eq!(net, other);
        let records: Vec<LayerRecord> = (&net).into();
        let back = DenseNet::try_from(records).unwrap();
        assert_eq!(back, net);
    }
}
