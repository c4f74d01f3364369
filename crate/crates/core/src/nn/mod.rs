//! Bias-free fully connected networks `f(x) = W_k φ(W_{k-1} φ(... φ(W_1 x)))`.
//!
//! All arithmetic is `f64`. A [`Network`] is immutable once built; gradient
//! routines only borrow it, so one instance can be shared across threads.

mod io;
mod spectral;

pub use io::{NetworkDocument, NETWORK_FORMAT_TAG};
pub use spectral::{project_spectral, spectral_norm, spectral_norms, SpectralEstimate};

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise nonlinearity. Every variant is 1-Lipschitz with `φ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// `softplus(a) - ln 2`, shifted so the origin is a fixed point.
    ShiftedSoftplus,
    /// Derivative at 0 is taken to be 0.
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::ShiftedSoftplus => softplus(a) - LN_2,
            Activation::Relu => a.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::ShiftedSoftplus => sigmoid(a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `φ'(a)` given `h = φ(a)` as well, which spares a second `tanh`.
    #[inline]
    fn derivative_given(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            _ => self.derivative(a),
        }
    }

    /// Global bound on `|φ''|`, or `None` when `φ'` is discontinuous.
    pub fn smoothness_constant(self) -> Option<f64> {
        match self {
            // max |d²/da² tanh a| = 4 / (3√3), attained at tanh a = ±1/√3
            Activation::Tanh => Some(4.0 / (3.0 * 3f64.sqrt())),
            Activation::ShiftedSoftplus => Some(0.25),
            Activation::Relu => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        self.smoothness_constant().is_some()
    }
}

#[inline]
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix shape {rows}x{cols} has an empty side"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `out = self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `out = selfᵀ · y`
    pub fn mul_vec_transposed(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            if yr != 0.0 {
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += w * yr;
                }
            }
        }
        out
    }
}

/// Four independent accumulators let the compiler vectorize the loop.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// All weight entries concatenated layer by layer (`W_1` first), each layer
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &FlatParams) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += a * o;
        }
    }
}

/// Intermediate values from one forward pass.
struct Trace {
    /// `inputs[i]` is the input to layer `i` (so `inputs[0] = x`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer (all layers but the last).
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Matrix>,
    activation: Activation,
}

impl Network {
    /// Layers are given in application order; `layers[i+1].cols()` must equal
    /// `layers[i].rows()`.
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: pair[0].rows(),
                    got: pair[1].cols(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// `[d_0, d_1, ..., d_k]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Matrix::rows))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows() * l.cols()).sum()
    }

    pub fn flatten(&self) -> FlatParams {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(l.as_slice());
        }
        FlatParams(v)
    }

    /// Same architecture, weights taken from `params`.
    pub fn with_params(&self, params: &FlatParams) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let n = l.rows() * l.cols();
                let m = Matrix {
                    rows: l.rows(),
                    cols: l.cols(),
                    data: params.0[offset..offset + n].to_vec(),
                };
                offset += n;
                m
            })
            .collect();
        Ok(Self {
            layers,
            activation: self.activation,
        })
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                index: y,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let k = self.layers.len();
        let mut h = self.layers[0].mul_vec(x);
        for layer in &self.layers[1..k] {
            h.iter_mut().for_each(|a| *a = self.activation.apply(*a));
            h = layer.mul_vec(&h);
        }
        Ok(h)
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let k = self.layers.len();
        let mut inputs = Vec::with_capacity(k);
        let mut pre = Vec::with_capacity(k - 1);
        inputs.push(x.to_vec());
        let mut a = self.layers[0].mul_vec(x);
        for layer in &self.layers[1..] {
            let h: Vec<f64> = a.iter().map(|&v| self.activation.apply(v)).collect();
            let next = layer.mul_vec(&h);
            pre.push(a);
            inputs.push(h);
            a = next;
        }
        Trace {
            inputs,
            pre,
            logits: a,
        }
    }

    /// Pulls a logit-space cotangent back through the layer chain to the input.
    fn pullback_input(&self, trace: &Trace, mut g: Vec<f64>) -> Vec<f64> {
        for i in (0..self.layers.len()).rev() {
            let gh = self.layers[i].mul_vec_transposed(&g);
            if i == 0 {
                return gh;
            }
            g = gh
                .iter()
                .zip(trace.pre[i - 1].iter().zip(&trace.inputs[i]))
                .map(|(&gv, (&a, &h))| gv * self.activation.derivative_given(a, h))
                .collect();
        }
        unreachable!("network has at least one layer")
    }

    /// `∇_x f(x)_y` by reverse accumulation.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_class(y)?;
        let trace = self.trace(x);
        let mut seed = vec![0.0; self.num_classes()];
        seed[y] = 1.0;
        Ok(self.pullback_input(&trace, seed))
    }

    /// Gradient of `cross_entropy(f(x), y)` with respect to every weight, in
    /// [`FlatParams`] order. Also returns the loss value.
    pub fn loss_and_param_gradient(&self, x: &[f64], y: usize) -> Result<(f64, FlatParams)> {
        self.check_input(x)?;
        self.check_class(y)?;
        let trace = self.trace(x);
        let loss = cross_entropy_unchecked(&trace.logits, y);
        let mut delta = softmax(&trace.logits);
        delta[y] -= 1.0;
        Ok((loss, self.backprop_params(&trace, delta)))
    }

    pub fn param_gradient(&self, x: &[f64], y: usize) -> Result<FlatParams> {
        self.loss_and_param_gradient(x, y).map(|(_, g)| g)
    }

    /// Jacobian-vector pullback of a logit cotangent onto the weights.
    fn backprop_params(&self, trace: &Trace, mut delta: Vec<f64>) -> FlatParams {
        let mut grad = FlatParams::zeros(self.num_params());
        let mut end = grad.len();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let start = end - layer.rows() * layer.cols();
            let block = &mut grad.0[start..end];
            let input = &trace.inputs[i];
            for (r, &d) in delta.iter().enumerate() {
                let row = &mut block[r * layer.cols()..(r + 1) * layer.cols()];
                for (g, &h) in row.iter_mut().zip(input) {
                    *g = d * h;
                }
            }
            if i > 0 {
                let gh = layer.mul_vec_transposed(&delta);
                delta = gh
                    .iter()
                    .zip(trace.pre[i - 1].iter().zip(&trace.inputs[i]))
                    .map(|(&gv, (&a, &h))| gv * self.activation.derivative_given(a, h))
                    .collect();
            }
            end = start;
        }
        grad
    }

    /// Cross-entropy loss of the network on one sample.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_class(y)?;
        let logits = self.forward(x)?;
        Ok(cross_entropy_unchecked(&logits, y))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(&logits))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

fn cross_entropy_unchecked(logits: &[f64], y: usize) -> f64 {
    (log_sum_exp(logits) - logits[y]).max(0.0)
}

/// `-log softmax(logits)_y`, stabilized with log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::ClassOutOfRange {
            index: y,
            classes: logits.len(),
        });
    }
    Ok(cross_entropy_unchecked(logits, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_2x2() -> Network {
        Network::new(
            vec![Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap()],
            Activation::Tanh,
        )
        .unwrap()
    }

    fn scalar_tanh() -> Network {
        Network::new(
            vec![
                Matrix::from_rows(&[&[1.0]]).unwrap(),
                Matrix::from_rows(&[&[2.0]]).unwrap(),
            ],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn forward_linear_layer() {
        assert_eq!(linear_2x2().forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn forward_two_layer_tanh() {
        let out = scalar_tanh().forward(&[0.5]).unwrap();
        assert!((out[0] - 2.0 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((out[0] - 0.9242).abs() < 1e-4);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        assert!(matches!(
            linear_2x2().forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let r = Network::new(
            vec![Matrix::zeros(3, 2), Matrix::zeros(2, 4)],
            Activation::Tanh,
        );
        assert!(r.is_err());
    }

    #[test]
    fn input_gradient_of_linear_map_is_its_row() {
        let g = linear_2x2().input_gradient(&[0.3, -7.0], 0).unwrap();
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn input_gradient_at_origin() {
        assert_eq!(scalar_tanh().input_gradient(&[0.0], 0).unwrap(), vec![2.0]);
    }

    #[test]
    fn class_out_of_range() {
        assert!(matches!(
            linear_2x2().input_gradient(&[0.0, 0.0], 2),
            Err(Error::ClassOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(big.is_finite() && big.abs() < 1e-300);
        // ln(e + e² + e³) - 3
        let expect = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        let v = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((v - expect).abs() < 1e-14);
        assert!((v - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn param_gradient_equal_logits() {
        // W_1 = 1 (1x1), W_2 = 0 (2x1): logits are equal, softmax = [0.5, 0.5].
        let net = Network::new(
            vec![
                Matrix::from_rows(&[&[1.0]]).unwrap(),
                Matrix::from_rows(&[&[0.0], &[0.0]]).unwrap(),
            ],
            Activation::Tanh,
        )
        .unwrap();
        let x = [0.7];
        let g = net.param_gradient(&x, 1).unwrap();
        let h = 0.7f64.tanh();
        // dL/dW_2 = (softmax - onehot) ⊗ φ(hidden) = [0.5, -0.5] ⊗ [h]
        assert!((g.0[1] - 0.5 * h).abs() < 1e-15);
        assert!((g.0[2] + 0.5 * h).abs() < 1e-15);
        // W_2 = 0 blocks anything reaching W_1.
        assert_eq!(g.0[0], 0.0);
    }

    #[test]
    fn zero_input_kills_first_layer_gradient() {
        let net = Network::new(
            vec![
                Matrix::from_rows(&[&[0.3, -0.2], &[0.5, 0.1]]).unwrap(),
                Matrix::from_rows(&[&[1.0, -1.0], &[0.4, 0.9]]).unwrap(),
            ],
            Activation::Tanh,
        )
        .unwrap();
        let g = net.param_gradient(&[0.0, 0.0], 0).unwrap();
        assert!(g.0[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activation_fixed_point_and_smoothness() {
        for act in [Activation::Tanh, Activation::ShiftedSoftplus, Activation::Relu] {
            assert!(act.apply(0.0).abs() <= f64::EPSILON);
        }
        assert!(Activation::Tanh.is_smooth());
        assert!(Activation::ShiftedSoftplus.is_smooth());
        assert!(!Activation::Relu.is_smooth());
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn tanh_smoothness_constant_is_the_max_second_derivative() {
        let c = Activation::Tanh.smoothness_constant().unwrap();
        let h = 1e-4;
        let max = (0..20000)
            .map(|i| -5.0 + i as f64 * 5e-4)
            .map(|a| {
                let d = Activation::Tanh;
                ((d.derivative(a + h) - d.derivative(a - h)) / (2.0 * h)).abs()
            })
            .fold(0.0, f64::max);
        assert!(max <= c + 1e-6 && max > c - 1e-4, "{max} vs {c}");
    }

    proptest! {
        #[test]
        fn activations_are_one_lipschitz(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            for act in [Activation::Tanh, Activation::ShiftedSoftplus, Activation::Relu] {
                prop_assert!((act.apply(a) - act.apply(b)).abs() <= (a - b).abs() + 1e-12);
            }
        }

        #[test]
        fn flatten_round_trip(vals in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let net = Network::new(
                vec![Matrix::zeros(3, 2), Matrix::zeros(2, 3)],
                Activation::Tanh,
            ).unwrap();
            let p = FlatParams(vals);
            let rebuilt = net.with_params(&p).unwrap();
            prop_assert_eq!(rebuilt.flatten(), p);
        }
    }
}
