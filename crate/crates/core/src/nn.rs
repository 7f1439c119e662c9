//! Feedforward Q-network with hand-written backpropagation and Adam.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};
use crate::graph::GraphSpec;
use crate::ranking::Phi;
use crate::samples::SampleSet;
use crate::seed::rng_from_seed;

/// Hidden-layer nonlinearity; the output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Fully connected layer, weights row-major `[outputs][inputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::InvalidParameter(format!(
                "layer {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
                inputs * outputs,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Dense {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut Vec<f64>, relu: bool) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let z = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
            out.push(if relu { z.max(0.0) } else { z });
        }
    }
}

/// Maps a feature vector to a scalar Q estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Per-layer gradients, same shapes as the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl QNetwork {
    /// Randomly initialized network with layer widths `widths` (input first,
    /// output last); parameters uniform in `+-1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer widths {widths:?}")));
        }
        let mut rng = rng_from_seed(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                let bias = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Dense::new(fan_in, fan_out, weights, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QNetwork {
            layers,
            activation: Activation::Relu,
        })
    }

    /// `Omega -> 50 Omega -> Omega -> 1` for the given feature schema.
    pub fn for_schema(schema: FeatureSchema, seed: u64) -> Self {
        let w = schema.width();
        QNetwork::new(&[w, 50 * w, w, 1], seed).expect("valid widths")
    }

    /// Network from explicit layers; consecutive widths must chain and end in 1.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidParameter(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        if layers.last().map(|l| l.outputs) != Some(1) {
            return Err(Error::InvalidParameter("output layer must have width 1".into()));
        }
        Ok(QNetwork {
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &FeatureVector) -> Result<f64> {
        self.forward_slice(x.as_slice())
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_width() {
            return Err(Error::Schema {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// Forward pass without the width check.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_width());
        let mut a = Vec::with_capacity(256);
        let mut b = Vec::with_capacity(256);
        let last = self.layers.len() - 1;
        self.layers[0].apply(x, &mut a, last != 0);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            layer.apply(&a, &mut b, i != last);
            std::mem::swap(&mut a, &mut b);
        }
        a[0]
    }

    /// Multiplies every parameter of the output layer by `factor`, scaling
    /// all outputs by it.
    pub fn scale_output(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w *= factor);
        last.bias.iter_mut().for_each(|b| *b *= factor);
    }

    /// Mean squared error over `(xs, ys)` and its gradient.
    pub fn loss_and_gradients(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Gradients) {
        assert_eq!(xs.len(), ys.len());
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let m = xs.len() as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        let mut delta = Vec::new();
        let mut prev = Vec::new();
        for (x, &y) in xs.iter().zip(ys) {
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for (i, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(i + 1);
                layer.apply(&head[i], &mut tail[0], i != last);
            }
            let err = acts[self.layers.len()][0] - y;
            loss += err * err;
            delta.clear();
            delta.push(2.0 * err / m);
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let gw = &mut grads.weights[i];
                let gb = &mut grads.bias[i];
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if i == 0 {
                    break;
                }
                prev.clear();
                prev.resize(layer.inputs, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative on the hidden activations feeding this layer
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut prev);
            }
        }
        (loss / m, grads)
    }

    pub fn mse(&self, xs: &[&[f64]], ys: &[f64]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let e = self.eval(x) - y;
                e * e
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Overwrites the bias of the scalar output unit.
    pub fn set_output_bias(&mut self, b: f64) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.bias.fill(b);
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Adaptive moment estimation over all network parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let flat = grads
            .weights
            .iter()
            .zip(&grads.bias)
            .flat_map(|(w, b)| w.iter().chain(b));
        for (((p, g), m), v) in net.params_mut().zip(flat).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Fits `net` to `<xs, ys>` for `iterations` full-batch Adam steps; returns
/// the per-step loss (measured before each step, plus the final loss).
pub fn fit(net: &mut QNetwork, opt: &mut Adam, xs: &[&[f64]], ys: &[f64], iterations: usize) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(iterations + 1);
    for step in 0..iterations {
        let (loss, grads) = net.loss_and_gradients(xs, ys);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        trace.push(loss);
        opt.step(net, &grads);
    }
    let loss = net.mse(xs, ys);
    if !loss.is_finite() {
        return Err(Error::Divergence { step: iterations, loss });
    }
    trace.push(loss);
    Ok(trace)
}

/// Supervised regression of `Q*` targets.
pub fn train_supervised(net: &QNetwork, samples: &SampleSet, cfg: &TrainConfig) -> Result<(QNetwork, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    if samples.schema.width() != net.input_width() {
        return Err(Error::Schema {
            expected: net.input_width(),
            got: samples.schema.width(),
        });
    }
    let xs: Vec<&[f64]> = samples.x.iter().map(FeatureVector::as_slice).collect();
    let mut trained = net.clone();
    let mut opt = Adam::new(trained.param_count(), cfg.learning_rate);
    let trace = fit(&mut trained, &mut opt, &xs, &samples.y, cfg.iterations)?;
    Ok((trained, trace))
}

/// Analytic vs central-difference gradients of the squared error at one point.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn gradient_check(net: &QNetwork, x: &[f64], y: f64) -> Result<GradCheck> {
    const H: f64 = 1e-5;
    if x.len() != net.input_width() {
        return Err(Error::Schema {
            expected: net.input_width(),
            got: x.len(),
        });
    }
    let (_, grads) = net.loss_and_gradients(&[x], &[y]);
    let analytic = grads.flatten();
    let base = net.params();
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + H;
        probe.set_params(&params);
        let plus = probe.mse(&[x], &[y]);
        params[i] = base[i] - H;
        probe.set_params(&params);
        let minus = probe.mse(&[x], &[y]);
        params[i] = base[i];
        numeric.push((plus - minus) / (2.0 * H));
    }
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_relative_error,
        analytic,
        numeric,
    })
}

/// How a saved model was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Phi>,
    /// `(O, D)` pairs the training samples were drawn from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(usize, usize)>,
    /// Restart index kept out of the candidates that were fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<usize>,
    pub init_seed: u64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    pub learning_rate: f64,
}

/// A trained network together with its feature schema and normalization unit.
#[derive(Clone, Debug, PartialEq)]
pub struct QModel {
    pub net: QNetwork,
    pub schema: FeatureSchema,
    /// Distances and targets were divided by this radius.
    pub norm_radius: f64,
    pub provenance: ModelProvenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: FeatureSchema,
    omega: usize,
    layer_widths: Vec<usize>,
    activation: Activation,
    norm_radius: f64,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    provenance: ModelProvenance,
}

impl QModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema: self.schema,
            omega: self.net.input_width(),
            layer_widths: self.net.widths(),
            activation: self.net.activation,
            norm_radius: self.norm_radius,
            weights: self.net.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.net.layers.iter().map(|l| l.bias.clone()).collect(),
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.omega != file.schema.width() || file.layer_widths.first() != Some(&file.omega) {
            return Err(Error::Format(format!(
                "schema {} needs {} inputs, document declares {} / {:?}",
                file.schema,
                file.schema.width(),
                file.omega,
                file.layer_widths
            )));
        }
        if file.weights.len() + 1 != file.layer_widths.len() || file.biases.len() != file.weights.len() {
            return Err(Error::Format("layer arrays do not match layer widths".into()));
        }
        let layers = file
            .layer_widths
            .windows(2)
            .zip(file.weights.into_iter().zip(file.biases))
            .map(|(w, (weights, bias))| Dense::new(w[0], w[1], weights, bias))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut net = QNetwork::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
        net.activation = file.activation;
        Ok(QModel {
            net,
            schema: file.schema,
            norm_radius: file.norm_radius,
            provenance: file.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        QModel::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::Provenance;

    fn tiny() -> QNetwork {
        // 2 -> 2 -> 1 with hand-set weights
        QNetwork::from_layers(vec![
            Dense::new(2, 2, vec![1.0, 0.0, 0.5, -1.0], vec![0.0, 0.25]).unwrap(),
            Dense::new(2, 1, vec![2.0, -1.0], vec![0.5]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn hand_computed_forward() {
        let net = tiny();
        // hidden = relu([1, 0.5*1 - 2 + 0.25]) = [1, 0]; out = 2 - 0 + 0.5
        assert_eq!(net.forward_slice(&[1.0, 2.0]).unwrap(), 2.5);
        // hidden = relu([0.2, 0.1 + 0.1 + 0.25]) = [0.2, 0.45]; out = 0.4 - 0.45 + 0.5
        assert!((net.forward_slice(&[0.2, -0.1]).unwrap() - 0.45).abs() < 1e-12);
        assert!(matches!(net.forward_slice(&[1.0]), Err(Error::Schema { expected: 2, got: 1 })));
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut net = QNetwork::for_schema(FeatureSchema::DistAndStretch, 3);
        net.scale_output(0.0);
        assert_eq!(net.forward_slice(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(net.widths(), vec![4, 200, 4, 1]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = QNetwork::new(&[3, 8, 3, 1], 5).unwrap();
        let check = gradient_check(&net, &[0.3, -0.7, 1.1], 0.4).unwrap();
        assert!(check.max_relative_error <= 1e-4, "{}", check.max_relative_error);
    }

    #[test]
    fn single_linear_layer_gradient_is_exact() {
        let net = QNetwork::from_layers(vec![Dense::new(3, 1, vec![0.2, -0.4, 0.9], vec![0.1]).unwrap()]).unwrap();
        let check = gradient_check(&net, &[1.5, 0.25, -2.0], 0.3).unwrap();
        for (a, n) in check.analytic.iter().zip(&check.numeric) {
            assert!((a - n).abs() <= 1e-7 * a.abs().max(1.0));
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let net = QNetwork::new(&[2, 6, 2, 1], 8).unwrap();
        let x = [0.4, 1.3];
        let y = net.eval(&x);
        let check = gradient_check(&net, &x, y).unwrap();
        assert!(check.analytic.iter().all(|g| g.abs() < 1e-8));
        assert!(check.numeric.iter().all(|g| g.abs() < 1e-8));
    }

    fn set_of(points: &[([f64; 2], f64)]) -> SampleSet {
        let mut s = SampleSet::empty(FeatureSchema::DistOnly);
        for (x, y) in points {
            s.push(
                FeatureVector::new(FeatureSchema::DistOnly, x).unwrap(),
                *y,
                Provenance { graph_seed: 0, v: 0, u: 0, origin: 0, dest: 0 },
            );
        }
        s
    }

    #[test]
    fn memorizes_a_single_sample() {
        let net = QNetwork::for_schema(FeatureSchema::DistOnly, 1);
        let samples = set_of(&[([1.5, 0.7], -2.2)]);
        let (_, trace) = train_supervised(&net, &samples, &TrainConfig { iterations: 3000, ..Default::default() }).unwrap();
        assert!(*trace.last().unwrap() <= 1e-6, "{}", trace.last().unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let net = QNetwork::for_schema(FeatureSchema::DistOnly, 2);
        let samples = set_of(&[([1.0, 0.5], -1.0), ([2.0, 1.5], -2.5), ([0.3, 0.9], -1.4)]);
        let cfg = TrainConfig { iterations: 200, ..Default::default() };
        let (a, _) = train_supervised(&net, &samples, &cfg).unwrap();
        let (b, _) = train_supervised(&net, &samples, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn training_rejects_empty_and_mismatched_sets() {
        let net = QNetwork::for_schema(FeatureSchema::DistAndStretch, 2);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_supervised(&net, &SampleSet::empty(FeatureSchema::DistAndStretch), &cfg),
            Err(Error::Empty(_))
        ));
        let samples = set_of(&[([1.0, 0.5], -1.0)]);
        assert!(matches!(train_supervised(&net, &samples, &cfg), Err(Error::Schema { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let net = QNetwork::for_schema(FeatureSchema::DistOnly, 2);
        let samples = set_of(&[([1.0, 0.5], f64::NAN)]);
        assert!(matches!(
            train_supervised(&net, &samples, &TrainConfig::default()),
            Err(Error::Divergence { step: 0, .. })
        ));
    }

    #[test]
    fn model_file_roundtrip_is_exact() {
        let model = QModel {
            net: QNetwork::for_schema(FeatureSchema::DistAndStretch, 77),
            schema: FeatureSchema::DistAndStretch,
            norm_radius: 1000.0,
            provenance: ModelProvenance {
                mode: "supervised".into(),
                seed_graph: Some(GraphSpec::Euclidean { n: 50, rho: 5.0, radius: 1000.0, seed: 4 }),
                phi: Some(Phi::Count(3)),
                pairs: vec![(3, 9), (4, 1)],
                restart: Some(2),
                init_seed: 77,
                iterations: 5000,
                episodes: None,
                learning_rate: 1e-3,
            },
        };
        let back = QModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
