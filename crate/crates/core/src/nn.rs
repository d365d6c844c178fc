//! Fixed-graph multilayer perceptrons with hand-written backprop.
//!
//! Layers are `y = x·W + b` on row-major batches, so `W` is `in × out`.
//! Every hidden layer is followed by the activation; the last one is linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Partition of the output vector into heads; widths must sum to the output width.
    pub head_splits: Option<Vec<usize>>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation,
            head_splits: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_heads(mut self, splits: Vec<usize>) -> Result<Self> {
        self.head_splits = Some(splits);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "an MLP needs at least two positive layer widths".into(),
            ));
        }
        if let Some(h) = &self.head_splits {
            if h.iter().sum::<usize>() != self.output_width() || h.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "head splits {h:?} do not partition output width {}",
                    self.output_width()
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Dense tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                format!("{n} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rank-1 tensors become a single row; rank-2 tensors are taken as `batch × width`.
    pub fn to_batch(&self) -> Result<Array2<f64>> {
        let (r, c) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => return Err(Error::shape("rank 1 or 2", format!("{s:?}"))),
        };
        Ok(Array2::from_shape_vec((r, c), self.data.clone()).expect("shape checked"))
    }

    fn from_batch(a: Array2<f64>, as_vector: bool) -> Self {
        let shape = if as_vector {
            vec![a.ncols()]
        } else {
            vec![a.nrows(), a.ncols()]
        };
        Self {
            shape,
            data: a.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub spec: MlpSpec,
    /// One `in × out` matrix per layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub seed: u64,
}

/// Gradients laid out like [`Params`]; also used as the momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &Params) -> Self {
        Self {
            weights: p
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: p
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }
}

fn flatten(ws: &[Array2<f64>], bs: &[Array1<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in ws.iter().zip(bs) {
        out.extend(w.iter());
        out.extend(b.iter());
    }
    out
}

impl Params {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in spec.layer_widths.windows(2) {
            let (i, o) = (win[0], win[1]);
            let limit = (6.0 / (i + o) as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((i, o), || {
                rng.gen_range(-limit..limit)
            }));
            biases.push(Array1::zeros(o));
        }
        Ok(Self {
            spec: spec.clone(),
            weights,
            biases,
            seed,
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        let mut p = Self::init(spec, 0)?;
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    /// Inverse of [`Params::flatten`].
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(self.n_params(), flat.len()));
        }
        let mut p = self.clone();
        let mut k = 0;
        for (w, b) in p.weights.iter_mut().zip(p.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.n_layers();
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::shape(format!("{n} layers"), self.weights.len()));
        }
        for (l, win) in self.spec.layer_widths.windows(2).enumerate() {
            if self.weights[l].dim() != (win[0], win[1]) || self.biases[l].len() != win[1] {
                return Err(Error::shape(
                    format!("layer {l} of {}x{}", win[0], win[1]),
                    format!("{:?}", self.weights[l].dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Layer outputs of one forward pass; `acts[0]` is the input.
pub struct ForwardCache {
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

fn check_input(p: &Params, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != p.spec.input_width() {
        return Err(Error::shape(
            format!("input width {}", p.spec.input_width()),
            x.ncols(),
        ));
    }
    Ok(())
}

pub fn forward_cached(p: &Params, x: ArrayView2<f64>) -> Result<ForwardCache> {
    check_input(p, &x)?;
    let n = p.weights.len();
    let mut acts = Vec::with_capacity(n + 1);
    acts.push(x.to_owned());
    for l in 0..n {
        let mut z = acts[l].dot(&p.weights[l]);
        z += &p.biases[l];
        if l + 1 < n {
            z.mapv_inplace(|v| p.spec.activation.apply(v));
        }
        acts.push(z);
    }
    Ok(ForwardCache { acts })
}

pub fn forward_batch(p: &Params, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(p, &x)?;
    let n = p.weights.len();
    let mut a = x.dot(&p.weights[0]);
    for l in 0..n {
        if l > 0 {
            a = a.dot(&p.weights[l]);
        }
        a += &p.biases[l];
        if l + 1 < n {
            a.mapv_inplace(|v| p.spec.activation.apply(v));
        }
    }
    Ok(a)
}

/// Reverse pass from a cache. Returns parameter gradients (summed over the
/// batch) and the gradient with respect to the input rows.
pub fn backward_cached(
    p: &Params,
    cache: &ForwardCache,
    upstream: ArrayView2<f64>,
) -> Result<(Gradients, Array2<f64>)> {
    let out = cache.output();
    if upstream.dim() != out.dim() {
        return Err(Error::shape(
            format!("{:?}", out.dim()),
            format!("{:?}", upstream.dim()),
        ));
    }
    let n = p.weights.len();
    let mut g = Gradients::zeros_like(p);
    let mut delta = upstream.to_owned();
    for l in (0..n).rev() {
        if l + 1 < n {
            let act = p.spec.activation;
            delta.zip_mut_with(&cache.acts[l + 1], |d, &y| *d *= act.deriv_from_output(y));
        }
        g.weights[l] = cache.acts[l].t().dot(&delta);
        g.biases[l] = delta.sum_axis(Axis(0));
        delta = delta.dot(&p.weights[l].t());
    }
    Ok((g, delta))
}

/// Parameter gradients only; skips the input-gradient product of the first layer.
pub fn param_gradients(
    p: &Params,
    cache: &ForwardCache,
    upstream: ArrayView2<f64>,
) -> Result<Gradients> {
    let out = cache.output();
    if upstream.dim() != out.dim() {
        return Err(Error::shape(
            format!("{:?}", out.dim()),
            format!("{:?}", upstream.dim()),
        ));
    }
    let n = p.weights.len();
    let mut g = Gradients::zeros_like(p);
    let mut delta = upstream.to_owned();
    for l in (0..n).rev() {
        if l + 1 < n {
            let act = p.spec.activation;
            delta.zip_mut_with(&cache.acts[l + 1], |d, &y| *d *= act.deriv_from_output(y));
        }
        g.weights[l] = cache.acts[l].t().dot(&delta);
        g.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&p.weights[l].t());
        }
    }
    Ok(g)
}

pub fn forward(p: &Params, x: &Tensor) -> Result<Tensor> {
    let b = x.to_batch()?;
    let y = forward_batch(p, b.view())?;
    Ok(Tensor::from_batch(y, x.shape.len() == 1))
}

pub fn backward(p: &Params, x: &Tensor, upstream: &Tensor) -> Result<(Gradients, Tensor)> {
    let xb = x.to_batch()?;
    let ub = upstream.to_batch()?;
    let cache = forward_cached(p, xb.view())?;
    let (g, gx) = backward_cached(p, &cache, ub.view())?;
    Ok((g, Tensor::from_batch(gx, x.shape.len() == 1)))
}

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`. `velocity` is updated in place.
pub fn sgd_step(
    p: &Params,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
) -> Result<Params> {
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "lr {lr} / momentum {momentum}"
        )));
    }
    let mut next = p.clone();
    for l in 0..p.weights.len() {
        velocity.weights[l].zip_mut_with(&grads.weights[l], |v, &g| *v = momentum * *v + g);
        velocity.biases[l].zip_mut_with(&grads.biases[l], |v, &g| *v = momentum * *v + g);
        next.weights[l].scaled_add(-lr, &velocity.weights[l]);
        next.biases[l].scaled_add(-lr, &velocity.biases[l]);
    }
    Ok(next)
}

/// Central differences of a scalar function, one coordinate at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut probe = x.clone();
    let mut g = Tensor::zeros(x.shape.clone());
    for i in 0..x.len() {
        let v = x.data[i];
        probe.data[i] = v + h;
        let up = f(&probe);
        probe.data[i] = v - h;
        let down = f(&probe);
        probe.data[i] = v;
        g.data[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Relative error used by gradient checks; falls back to absolute error
/// when both values are tiny.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Row-wise softmax cross-entropy over consecutive groups of `k` logits.
/// Returns the summed loss and its gradient with respect to the logits.
pub fn grouped_cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (gi, &label) in labels.iter().enumerate() {
        let z = &logits[gi * k..(gi + 1) * k];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        loss += -(z[label] - m) + sum.ln();
        for j in 0..k {
            let pj = (z[j] - m).exp() / sum;
            grad[gi * k + j] = pj - if j == label { 1.0 } else { 0.0 };
        }
    }
    (loss, grad)
}
