//! Dense feed-forward networks with a fixed layer set: linear, optional batch
//! normalization, then one of leaky-relu / prelu / identity / softmax.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Initial slope of every prelu unit.
pub const PRELU_INIT_SLOPE: f32 = 0.25;
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f32 },
    Prelu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            batch_norm: false,
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// One layer's parameters. `weight` is stored `in_dim × out_dim` so the
/// forward pass is `X · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Matrix,
    pub bias: Vec<f32>,
    /// Per-unit prelu slopes; empty for other activations.
    pub slope: Vec<f32>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    fn zeroed(spec: LayerSpec) -> Self {
        Self {
            spec,
            weight: Matrix::zeros(spec.in_dim, spec.out_dim),
            bias: vec![0.0; spec.out_dim],
            slope: match spec.activation {
                Activation::Prelu => vec![PRELU_INIT_SLOPE; spec.out_dim],
                _ => Vec::new(),
            },
            bn: spec.batch_norm.then(|| BatchNorm::new(spec.out_dim)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    /// Normalized pre-activation (batch-norm layers only).
    xhat: Option<Matrix>,
    inv_std: Vec<f32>,
    pre_act: Matrix,
    output: Matrix,
}

/// Per-layer activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    dims: Vec<(usize, usize)>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.rows())
    }

    /// Output of the final layer.
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("non-empty network").output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub slope: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Flat views in the same order as [`Network::params_mut`].
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_slice());
            }
            if !l.gamma.is_empty() {
                out.push(l.gamma.as_slice());
                out.push(l.beta.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_mut_slice());
            }
            if !l.gamma.is_empty() {
                out.push(l.gamma.as_mut_slice());
                out.push(l.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// He-uniform initialized network (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(specs)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.spec.in_dim as f32).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Orthogonally initialized network; `gains[i]` scales layer `i`.
    pub fn orthogonal<R: Rng + ?Sized>(
        specs: &[LayerSpec],
        gains: &[f32],
        rng: &mut R,
    ) -> Result<Self> {
        if gains.len() != specs.len() {
            return Err(Error::Dimension(format!(
                "{} gains for {} layers",
                gains.len(),
                specs.len()
            )));
        }
        let mut net = Self::zeroed(specs)?;
        for (layer, &gain) in net.layers.iter_mut().zip(gains) {
            layer.weight = orthogonal_matrix(layer.spec.in_dim, layer.spec.out_dim, gain, rng);
        }
        Ok(net)
    }

    /// All weights zero; prelu slopes and batch-norm parameters at defaults.
    pub fn zeroed(specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Dimension(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if specs.iter().any(|s| s.in_dim == 0 || s.out_dim == 0) {
            return Err(Error::Dimension("zero-width layer".into()));
        }
        Ok(Self {
            layers: specs.iter().copied().map(Layer::zeroed).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        Self::zeroed(&specs)?;
        for l in &layers {
            let s = l.spec;
            let prelu = matches!(s.activation, Activation::Prelu);
            if l.weight.rows() != s.in_dim
                || l.weight.cols() != s.out_dim
                || l.bias.len() != s.out_dim
                || l.slope.len() != if prelu { s.out_dim } else { 0 }
                || l.bn.is_some() != s.batch_norm
                || l.bn.as_ref().is_some_and(|bn| {
                    bn.gamma.len() != s.out_dim
                        || bn.beta.len() != s.out_dim
                        || bn.running_mean.len() != s.out_dim
                        || bn.running_var.len() != s.out_dim
                })
            {
                return Err(Error::Dimension("layer parameters do not match spec".into()));
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

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Learnable parameters in declaration order: per layer weight, bias,
    /// prelu slopes, batch-norm scale and shift.
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_slice());
            }
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
            if !l.slope.is_empty() {
                out.push(l.slope.as_mut_slice());
            }
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    /// Zeroes the final layer's weights and bias so the network outputs a constant zero
    /// (for identity heads).
    pub fn zero_head(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.data_mut().fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.spec.in_dim, l.spec.out_dim),
                    bias: vec![0.0; l.spec.out_dim],
                    slope: vec![0.0; l.slope.len()],
                    gamma: vec![0.0; if l.bn.is_some() { l.spec.out_dim } else { 0 }],
                    beta: vec![0.0; if l.bn.is_some() { l.spec.out_dim } else { 0 }],
                })
                .collect(),
        }
    }

    /// Eval-mode forward pass. Uses running batch-norm statistics and
    /// mutates nothing.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let (cache, _) = self.run(x, Mode::Eval)?;
        Ok(cache.layers.into_iter().last().expect("non-empty").output)
    }

    /// Eval-mode forward pass that also records a cache for `backward`.
    pub fn forward_eval(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (cache, _) = self.run(x, Mode::Eval)?;
        Ok((cache.output().clone(), cache))
    }

    /// Train-mode forward pass: batch-norm layers normalize with batch
    /// statistics and update their running estimates.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (cache, stats) = self.run(x, Mode::Train)?;
        for (layer, stat) in self.layers.iter_mut().zip(stats) {
            if let (Some(bn), Some((mean, var))) = (layer.bn.as_mut(), stat) {
                for j in 0..mean.len() {
                    bn.running_mean[j] =
                        BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                    bn.running_var[j] =
                        BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * var[j];
                }
            }
        }
        Ok((cache.output().clone(), cache))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &Matrix,
        mode: Mode,
    ) -> Result<(ForwardCache, Vec<Option<(Vec<f32>, Vec<f32>)>>)> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let n = x.rows();
        if mode == Mode::Train && n < 2 && self.layers.iter().any(|l| l.bn.is_some()) {
            return Err(Error::Dimension(
                "train-mode batch normalization needs at least 2 rows".into(),
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        for layer in &self.layers {
            let mut z = input.matmul(&layer.weight);
            let out_dim = layer.spec.out_dim;
            for r in 0..n {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut xhat = None;
            let mut inv_std = Vec::new();
            let mut stat = None;
            if let Some(bn) = &layer.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let (mean, var) = column_moments(&z);
                        // Running variance tracks the unbiased estimate.
                        let unbiased = var
                            .iter()
                            .map(|v| v * n as f32 / (n as f32 - 1.0))
                            .collect::<Vec<_>>();
                        stat = Some((mean.clone(), unbiased));
                        (mean, var)
                    }
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xh = Matrix::zeros(n, out_dim);
                for r in 0..n {
                    let zr = z.row_mut(r);
                    let xr = xh.row_mut(r);
                    for j in 0..out_dim {
                        let h = (zr[j] - mean[j]) * inv_std[j];
                        xr[j] = h;
                        zr[j] = bn.gamma[j] * h + bn.beta[j];
                    }
                }
                xhat = Some(xh);
            }
            let output = activate(layer, &z);
            stats.push(stat);
            caches.push(LayerCache {
                input,
                xhat,
                inv_std,
                pre_act: z,
                output: output.clone(),
            });
            input = output;
        }
        if !input.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((
            ForwardCache {
                mode,
                dims: self.dims(),
                layers: caches,
            },
            stats,
        ))
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.spec.in_dim, l.spec.out_dim))
            .collect()
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradient at the network output. Also returns the gradient with
    /// respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(Gradients, Matrix)> {
        if cache.dims != self.dims() {
            return Err(Error::Dimension("cache was produced by a different network".into()));
        }
        let n = cache.batch_size();
        if grad_output.rows() != n || grad_output.cols() != self.out_dim() {
            return Err(Error::Dimension(format!(
                "grad_output is {}x{}, expected {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                n,
                self.out_dim()
            )));
        }
        let mut grads = self.zero_grads();
        let mut d_out = grad_output.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let g = &mut grads.layers[li];
            let out_dim = layer.spec.out_dim;
            // Through the activation.
            let mut dz = Matrix::zeros(n, out_dim);
            match layer.spec.activation {
                Activation::Identity => dz = d_out,
                Activation::LeakyRelu { slope } => {
                    for ((d, &o), &z) in dz
                        .data_mut()
                        .iter_mut()
                        .zip(d_out.data())
                        .zip(lc.pre_act.data())
                    {
                        *d = if z > 0.0 { o } else { o * slope };
                    }
                }
                Activation::Prelu => {
                    for r in 0..n {
                        let zr = lc.pre_act.row(r);
                        let or = d_out.row(r);
                        let dr = dz.row_mut(r);
                        for j in 0..out_dim {
                            if zr[j] > 0.0 {
                                dr[j] = or[j];
                            } else {
                                dr[j] = or[j] * layer.slope[j];
                                g.slope[j] += or[j] * zr[j];
                            }
                        }
                    }
                }
                Activation::Softmax => {
                    for r in 0..n {
                        let yr = lc.output.row(r);
                        let or = d_out.row(r);
                        let dot: f32 = yr.iter().zip(or).map(|(y, o)| y * o).sum();
                        let dr = dz.row_mut(r);
                        for j in 0..out_dim {
                            dr[j] = yr[j] * (or[j] - dot);
                        }
                    }
                }
            }
            // Through batch normalization.
            let du = if let (Some(bn), Some(xhat)) = (&layer.bn, &lc.xhat) {
                let mut dxhat = Matrix::zeros(n, out_dim);
                for r in 0..n {
                    let dzr = dz.row(r);
                    let xr = xhat.row(r);
                    let dxr = dxhat.row_mut(r);
                    for j in 0..out_dim {
                        g.gamma[j] += dzr[j] * xr[j];
                        g.beta[j] += dzr[j];
                        dxr[j] = dzr[j] * bn.gamma[j];
                    }
                }
                match cache.mode {
                    Mode::Eval => {
                        let mut du = dxhat;
                        for r in 0..n {
                            for (v, s) in du.row_mut(r).iter_mut().zip(&lc.inv_std) {
                                *v *= s;
                            }
                        }
                        du
                    }
                    Mode::Train => {
                        // Column sums in f64: the centered terms cancel almost exactly.
                        let mut sum_d = vec![0.0f64; out_dim];
                        let mut sum_dx = vec![0.0f64; out_dim];
                        for r in 0..n {
                            let dxr = dxhat.row(r);
                            let xr = xhat.row(r);
                            for j in 0..out_dim {
                                sum_d[j] += dxr[j] as f64;
                                sum_dx[j] += dxr[j] as f64 * xr[j] as f64;
                            }
                        }
                        let nf = n as f64;
                        let mut du = Matrix::zeros(n, out_dim);
                        for r in 0..n {
                            let dxr = dxhat.row(r);
                            let xr = xhat.row(r);
                            let dur = du.row_mut(r);
                            for j in 0..out_dim {
                                dur[j] = (lc.inv_std[j] as f64 / nf
                                    * (nf * dxr[j] as f64 - sum_d[j] - xr[j] as f64 * sum_dx[j]))
                                    as f32;
                            }
                        }
                        du
                    }
                }
            } else {
                dz
            };
            // Through the affine map.
            g.weight = lc.input.t_matmul(&du);
            for r in 0..n {
                for (b, d) in g.bias.iter_mut().zip(du.row(r)) {
                    *b += d;
                }
            }
            d_out = du.matmul_t(&layer.weight);
        }
        Ok((grads, d_out))
    }
}

fn column_moments(z: &Matrix) -> (Vec<f32>, Vec<f32>) {
    let n = z.rows();
    let m = z.cols();
    let mut mean = vec![0.0f64; m];
    for r in 0..n {
        for (acc, v) in mean.iter_mut().zip(z.row(r)) {
            *acc += *v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut var = vec![0.0f64; m];
    for r in 0..n {
        for ((acc, v), mu) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            let d = *v as f64 - mu;
            *acc += d * d;
        }
    }
    (
        mean.iter().map(|v| *v as f32).collect(),
        var.iter().map(|v| (*v / n as f64) as f32).collect(),
    )
}

fn activate(layer: &Layer, z: &Matrix) -> Matrix {
    let mut out = z.clone();
    match layer.spec.activation {
        Activation::Identity => {}
        Activation::LeakyRelu { slope } => {
            for v in out.data_mut() {
                if *v <= 0.0 {
                    *v *= slope;
                }
            }
        }
        Activation::Prelu => {
            for r in 0..out.rows() {
                for (v, a) in out.row_mut(r).iter_mut().zip(&layer.slope) {
                    if *v <= 0.0 {
                        *v *= a;
                    }
                }
            }
        }
        Activation::Softmax => {
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
        }
    }
    out
}

/// Numerically stable softmax. Entries equal to `-inf` receive zero mass.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Matrix of shape `rows × cols` with orthonormal columns (rows ≥ cols) or
/// orthonormal rows (rows < cols), scaled by `gain`.
pub fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f32, rng: &mut R) -> Matrix {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `long`, orthonormalized by modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        // Second pass restores orthogonality lost to rounding.
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut m = Matrix::zeros(rows, cols);
    for (k, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            let v = (x * gain as f64) as f32;
            if rows >= cols {
                m.set(i, k, v);
            } else {
                m.set(k, i, v);
            }
        }
    }
    m
}
