//! Feed-forward classifier with rectifier hidden layers and a softmax head.
//!
//! Two evaluation routes exist: a direct dense forward pass
//! ([`logits`], [`predict_proba`]) used for inference, and tape-recorded
//! graphs ([`ParamVars`]) used whenever gradients are needed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Inputs, Matrix, Tape, Var};
use crate::losses::{self, LossBreakdown, Objective};
use crate::rng::{rng_for, Stream};

/// One affine layer: `x W + b` with `W` of shape `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    /// `1 x fan_out`
    pub bias: Matrix,
}

/// Weights and biases of the classifier. Also used as the container for
/// parameter gradients, which have identical shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

pub type ParamGradients = ModelParams;

impl ModelParams {
    /// Validates that consecutive layers chain and every entry is finite.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::dim(
                    "ModelParams::new",
                    format!("layer {i}: bias {:?} for weight {:?}", l.bias.shape(), l.weight.shape()),
                ));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::dim(
                    "ModelParams::new",
                    format!("layer {} outputs {} but layer {i} expects {}", i - 1, layers[i - 1].weight.cols(), l.weight.rows()),
                ));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Evaluation(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.cols()));
        sizes
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: Matrix::zeros(1, l.bias.cols()),
            })
            .collect();
        Self { layers }
    }

    /// `self += a * other`, parameter by parameter.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (p, g) in l.weight.data_mut().iter_mut().zip(o.weight.data()) {
                *p += a * g;
            }
            for (p, g) in l.bias.data_mut().iter_mut().zip(o.bias.data()) {
                *p += a * g;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// All values in serialization order: per layer, the weight row-major
    /// then the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let expected: usize = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if flat.len() != expected {
            return Err(Error::Data(format!(
                "expected {expected} parameters for layer sizes {layer_sizes:?}, found {}",
                flat.len()
            )));
        }
        let mut layers = Vec::new();
        let mut at = 0;
        for w in layer_sizes.windows(2) {
            let (fi, fo) = (w[0], w[1]);
            let weight = Matrix::new(fi, fo, flat[at..at + fi * fo].to_vec())?;
            at += fi * fo;
            let bias = Matrix::new(1, fo, flat[at..at + fo].to_vec())?;
            at += fo;
            layers.push(Layer { weight, bias });
        }
        Self::new(layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "layer_sizes needs at least an input and an output size, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("layer_sizes must all be positive, got {sizes:?}")));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<ModelParams> {
    validate_sizes(layer_sizes)?;
    let mut rng = rng_for(seed, Stream::Init);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fi, fo) = (w[0], w[1]);
            let s = (6.0 / (fi + fo) as f64).sqrt();
            let data = (0..fi * fo).map(|_| rng.random_range(-s..s)).collect();
            Layer {
                weight: Matrix::from_raw(fi, fo, data),
                bias: Matrix::zeros(1, fo),
            }
        })
        .collect();
    ModelParams::new(layers)
}

fn check_input(params: &ModelParams, x: &Matrix, op: &'static str) -> Result<()> {
    if x.cols() != params.input_dim() {
        return Err(Error::dim(
            op,
            format!("input has {} features, model expects {}", x.cols(), params.input_dim()),
        ));
    }
    Ok(())
}

/// Raw class scores, direct dense evaluation.
pub fn logits(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    check_input(params, x, "logits")?;
    let last = params.layers.len() - 1;
    let mut h = x.clone();
    for (i, l) in params.layers.iter().enumerate() {
        let mut z = h.matmul(&l.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(l.bias.data()) {
                *v += b;
                if i < last && *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        h = z;
    }
    Ok(h)
}

/// Row-wise softmax of [`logits`].
pub fn predict_proba(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let mut z = logits(params, x)?;
    softmax_rows(&mut z);
    Ok(z)
}

pub(crate) fn softmax_rows(z: &mut Matrix) {
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], n_rows: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n_rows {
        return Err(Error::Data(format!("{} labels for {n_rows} points", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {n_classes})")));
    }
    Ok(())
}

pub(crate) fn one_hot(labels: &[usize], n_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (i, &y) in labels.iter().enumerate() {
        m.set(i, y, 1.0);
    }
    m
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(params: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::Data("cross_entropy of an empty batch".into()));
    }
    losses::loss_src(params, x, labels)
}

/// Tape handles for every parameter tensor of a model, bound under the
/// names `w{i}` / `b{i}`.
#[derive(Clone, Debug)]
pub struct ParamVars {
    names: Vec<(String, String)>,
    vars: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, n_layers: usize) -> Self {
        let names: Vec<(String, String)> = (0..n_layers)
            .map(|i| (format!("w{i}"), format!("b{i}")))
            .collect();
        let vars = names
            .iter()
            .map(|(w, b)| (tape.input(w.as_str()), tape.input(b.as_str())))
            .collect();
        Self { names, vars }
    }

    pub fn bind<'a>(&'a self, params: &'a ModelParams, inputs: &mut Inputs<'a>) {
        for ((w, b), l) in self.names.iter().zip(&params.layers) {
            inputs.insert(w, &l.weight);
            inputs.insert(b, &l.bias);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().flat_map(|(w, b)| [w.as_str(), b.as_str()])
    }

    pub fn logits(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.vars.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.vars.iter().enumerate() {
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if i < last { tape.relu(z) } else { z };
        }
        h
    }

    pub fn log_proba(&self, tape: &mut Tape, x: Var) -> Var {
        let z = self.logits(tape, x);
        tape.log_softmax(z)
    }

    pub fn proba(&self, tape: &mut Tape, x: Var) -> Var {
        let lp = self.log_proba(tape, x);
        tape.exp(lp)
    }

    /// Collects gradients for every parameter into a model-shaped container.
    pub fn collect(&self, grads: &mut crate::gradcore::Gradients) -> Result<ParamGradients> {
        let layers = self
            .names
            .iter()
            .map(|(w, b)| {
                let weight = grads
                    .take(w)
                    .ok_or_else(|| Error::Contract(format!("missing gradient for {w}")))?;
                let bias = grads
                    .take(b)
                    .ok_or_else(|| Error::Contract(format!("missing gradient for {b}")))?;
                Ok(Layer { weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { layers })
    }
}

/// Per-point loss whose input gradient drives the perturbation directions.
#[derive(Clone, Copy, Debug)]
pub enum InputLoss<'a> {
    /// Cross-entropy against known labels.
    Labels(&'a [usize]),
    /// Prediction entropy, the label-free surrogate for unlabeled points.
    Entropy,
}

/// Per-row input gradients `d loss_i / d x_i` for a batch. Because each
/// loss term depends on one row only, this is the gradient of the summed
/// loss with respect to the whole batch.
pub fn input_gradients(params: &ModelParams, x: &Matrix, loss: InputLoss<'_>) -> Result<Matrix> {
    check_input(params, x, "input_gradients")?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params.layers.len());
    let xv = tape.input("x");
    let lp = pv.log_proba(&mut tape, xv);
    match loss {
        InputLoss::Labels(labels) => {
            check_labels(labels, x.rows(), params.n_classes())?;
            let oh = tape.constant(one_hot(labels, params.n_classes()));
            let picked = tape.mul(oh, lp);
            let s = tape.sum(picked);
            tape.scale(s, -1.0);
        }
        InputLoss::Entropy => {
            let p = tape.exp(lp);
            let plogp = tape.mul(p, lp);
            let s = tape.sum(plogp);
            tape.scale(s, -1.0);
        }
    }
    let mut inputs = Inputs::new().bind("x", x);
    pv.bind(params, &mut inputs);
    let eval = tape.forward_eval(&inputs)?;
    let mut g = tape.backward_grad(&eval, &["x"])?;
    Ok(g.take("x").expect("x gradient requested"))
}

/// `grad_x loss(f(x), y)` for a single point.
pub fn input_gradient(params: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let xm = Matrix::row_vector(x);
    Ok(input_gradients(params, &xm, InputLoss::Labels(&[y]))?.into_data())
}

/// Parameter gradient of the weighted objective, together with the value
/// of every term.
pub fn param_gradient(
    params: &ModelParams,
    objective: &Objective<'_>,
) -> Result<(LossBreakdown, ParamGradients)> {
    losses::objective_gradient(params, objective)
}
