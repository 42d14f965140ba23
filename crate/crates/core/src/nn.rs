//! Dense feed-forward classifier with exact manual backpropagation.
//!
//! The network is deliberately small: fully-connected layers, tanh or ReLU
//! hidden activations, identity at the output (logits). Everything runs in
//! `f64` so Taylor-residual measurements have headroom below the η² terms
//! they estimate. Two loss heads share one forward pass:
//!
//! - classification: mean cross-entropy against hard labels,
//! - distillation: mean `T²·KL(teacher_T ‖ student_T)` between temperature-T
//!   softened class distributions, teacher treated as constant.
//!
//! Gradients flatten to a fixed order — layer-major, weights before biases,
//! weights row-major with each output unit's incoming row contiguous — and
//! the checkpoint format stores parameters in exactly that order.

use std::fmt;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network needs at least two layer sizes, all >= 1, got {0:?}")]
    InvalidLayerSizes(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("forward cache does not match this network")]
    StaleCache,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Hidden-layer activation. The output layer is always identity (logits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Which loss a flattened gradient came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOrigin {
    Dist,
    Cls,
    Combined,
}

/// Gradient over all parameters, flattened in the network's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrad {
    pub values: Vec<f64>,
    pub origin: GradOrigin,
}

impl FlatGrad {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `λ·dist + (1−λ)·cls`, the combined update direction of the total loss.
    pub fn combine(dist: &FlatGrad, cls: &FlatGrad, lambda: f64) -> Result<FlatGrad, NnError> {
        if dist.values.len() != cls.values.len() {
            return Err(NnError::DimensionMismatch(format!(
                "gradient lengths {} vs {}",
                dist.values.len(),
                cls.values.len()
            )));
        }
        let values = dist
            .values
            .iter()
            .zip(&cls.values)
            .map(|(d, c)| lambda * d + (1.0 - lambda) * c)
            .collect();
        Ok(FlatGrad {
            values,
            origin: GradOrigin::Combined,
        })
    }
}

/// A classification batch: `n_samples × n_features` inputs plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self, NnError> {
        if inputs.rows() != labels.len() {
            return Err(NnError::DimensionMismatch(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row subset in the given index order (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Batch {
        let cols = self.inputs.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: Matrix::from_rows(indices.len(), cols, data),
            labels,
        }
    }
}

/// Per-step loss decomposition under the convex combination
/// `loss_total = λ·loss_dist + (1−λ)·loss_cls`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub loss_dist: f64,
    pub loss_cls: f64,
    pub loss_total: f64,
    pub lambda: f64,
    pub temperature: f64,
}

impl LossBreakdown {
    pub fn combine(loss_dist: f64, loss_cls: f64, lambda: f64, temperature: f64) -> Self {
        Self {
            loss_dist,
            loss_cls,
            loss_total: lambda * loss_dist + (1.0 - lambda) * loss_cls,
            lambda,
            temperature,
        }
    }
}

/// Activation cache from one forward pass: the input seen by every layer.
/// `layer_inputs[0]` is the batch itself; `layer_inputs[l]` for `l > 0` is the
/// post-activation output of layer `l−1`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Matrix>,
}

/// Dense feed-forward network. Value-like: cloneable, no interior state.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `n_out × n_in`; row `r` holds unit `r`'s incoming weights.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl Network {
    /// Initialises weights from the given generator: uniform on
    /// `(−1/√n_in, 1/√n_in)` per layer, biases zero.
    pub fn init(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::InvalidLayerSizes(layer_sizes.to_vec()));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = 1.0 / (n_in as f64).sqrt();
            let data = (0..n_in * n_out)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            weights.push(Matrix::from_rows(n_out, n_in, data));
            biases.push(vec![0.0; n_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Deterministic initialisation from a 64-bit seed (ChaCha8 stream 0).
    pub fn init_seeded(
        layer_sizes: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self, NnError> {
        Self::init(layer_sizes, activation, &mut stream_rng(seed, 0))
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Parameters in flatten order: per layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrites all parameters from a flat vector in flatten order.
    pub fn set_flat(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.rows() * w.cols();
            let rows = w.rows();
            let cols = w.cols();
            for r in 0..rows {
                for c in 0..cols {
                    w.set(r, c, params[offset + r * cols + c]);
                }
            }
            offset += wn;
            let bn = b.len();
            b.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    /// Runs the batch through the network, returning logits and the
    /// activation cache needed for an exact backward pass.
    pub fn forward(&self, batch: &Batch) -> Result<(Matrix, ForwardCache), NnError> {
        if batch.inputs.cols() != self.layer_sizes[0] {
            return Err(NnError::DimensionMismatch(format!(
                "batch has {} features, input layer expects {}",
                batch.inputs.cols(),
                self.layer_sizes[0]
            )));
        }
        let n_layers = self.weights.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut x = batch.inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Matrix::zeros(x.rows(), w.rows());
            for i in 0..x.rows() {
                let xi = x.row(i);
                for (r, &bias) in b.iter().enumerate() {
                    let mut sum = bias;
                    for (wv, xv) in w.row(r).iter().zip(xi) {
                        sum += wv * xv;
                    }
                    z.set(i, r, sum);
                }
            }
            layer_inputs.push(x);
            x = if l + 1 < n_layers {
                z.map(|v| self.activation.apply(v))
            } else {
                z
            };
        }
        Ok((x, ForwardCache { layer_inputs }))
    }

    fn cache_matches(&self, cache: &ForwardCache) -> bool {
        cache.layer_inputs.len() == self.weights.len()
            && cache
                .layer_inputs
                .iter()
                .zip(&self.layer_sizes)
                .all(|(m, &s)| m.cols() == s)
    }

    /// Exact gradient of the scalar loss behind `logit_grad` with respect to
    /// every parameter, flattened in parameter order.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        logit_grad: &Matrix,
        origin: GradOrigin,
    ) -> Result<FlatGrad, NnError> {
        if !self.cache_matches(cache) {
            return Err(NnError::StaleCache);
        }
        let n = cache.layer_inputs[0].rows();
        if logit_grad.rows() != n || logit_grad.cols() != self.n_classes() {
            return Err(NnError::DimensionMismatch(format!(
                "logit gradient is {}x{}, expected {}x{}",
                logit_grad.rows(),
                logit_grad.cols(),
                n,
                self.n_classes()
            )));
        }

        let mut grads: Vec<(Matrix, Vec<f64>)> = self
            .weights
            .iter()
            .map(|w| (Matrix::zeros(w.rows(), w.cols()), vec![0.0; w.rows()]))
            .collect();

        let mut dz = logit_grad.clone();
        for l in (0..self.weights.len()).rev() {
            let x = &cache.layer_inputs[l];
            let (gw, gb) = &mut grads[l];
            for i in 0..n {
                let dzi = dz.row(i);
                let xi = x.row(i);
                for (r, &d) in dzi.iter().enumerate() {
                    gb[r] += d;
                    let row = gw.row_mut(r);
                    for (g, &xv) in row.iter_mut().zip(xi) {
                        *g += d * xv;
                    }
                }
            }
            if l > 0 {
                // Propagate to the previous activation and through its
                // nonlinearity (derivative from the cached post-activation).
                let w = &self.weights[l];
                let mut prev = Matrix::zeros(n, w.cols());
                for i in 0..n {
                    let dzi = dz.row(i);
                    for (r, &d) in dzi.iter().enumerate() {
                        let wr = w.row(r);
                        let pr = prev.row_mut(i);
                        for (p, &wv) in pr.iter_mut().zip(wr) {
                            *p += d * wv;
                        }
                    }
                }
                let act = &cache.layer_inputs[l];
                for i in 0..n {
                    let pr = prev.row_mut(i);
                    let ar = act.row(i);
                    for (p, &a) in pr.iter_mut().zip(ar) {
                        *p *= self.activation.derivative_from_output(a);
                    }
                }
                dz = prev;
            }
        }

        let mut values = Vec::with_capacity(self.param_count());
        for (gw, gb) in &grads {
            values.extend_from_slice(gw.data());
            values.extend_from_slice(gb);
        }
        Ok(FlatGrad { values, origin })
    }

    /// One SGD step `θ ← θ − η·update` in flatten order. The distillation
    /// pipeline passes the λ-combined gradient here.
    pub fn sgd_step(&mut self, update: &FlatGrad, eta: f64) -> Result<(), NnError> {
        if update.values.len() != self.param_count() {
            return Err(NnError::DimensionMismatch(format!(
                "update has {} entries, network has {} parameters",
                update.values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let rows = w.rows();
            let cols = w.cols();
            for r in 0..rows {
                let row = w.row_mut(r);
                for (c, v) in row.iter_mut().enumerate() {
                    *v -= eta * update.values[offset + r * cols + c];
                }
            }
            offset += rows * cols;
            for v in b.iter_mut() {
                *v -= eta * update.values[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Temperature-T softmax of one logit row, computed with max subtraction.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>, NnError> {
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(NnError::NonPositiveTemperature(temperature));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Temperature-T log-softmax of one logit row.
fn log_softmax_temp(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    logits
        .iter()
        .map(|z| (z - max) / temperature - log_sum)
        .collect()
}

/// Mean cross-entropy against hard labels (temperature 1) and its gradient
/// with respect to the logits: `(softmax − onehot)/n`.
pub fn loss_cls(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix), NnError> {
    let n = logits.rows();
    if labels.len() != n {
        return Err(NnError::DimensionMismatch(format!(
            "{} logit rows vs {} labels",
            n,
            labels.len()
        )));
    }
    let classes = logits.cols();
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let log_p = log_softmax_temp(logits.row(i), 1.0);
        total -= log_p[label];
        let gr = grad.row_mut(i);
        for (k, lp) in log_p.iter().enumerate() {
            gr[k] = (lp.exp() - if k == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean distillation loss `T²·KL(p_teacher_T ‖ p_student_T)` over the batch
/// and its gradient with respect to the *student* logits,
/// `T·(p_student_T − p_teacher_T)/n`. The teacher side is a constant.
pub fn loss_dist(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    temperature: f64,
) -> Result<(f64, Matrix), NnError> {
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(NnError::NonPositiveTemperature(temperature));
    }
    if student_logits.rows() != teacher_logits.rows()
        || student_logits.cols() != teacher_logits.cols()
    {
        return Err(NnError::DimensionMismatch(format!(
            "student logits {}x{} vs teacher logits {}x{}",
            student_logits.rows(),
            student_logits.cols(),
            teacher_logits.rows(),
            teacher_logits.cols()
        )));
    }
    let n = student_logits.rows();
    let mut grad = Matrix::zeros(n, student_logits.cols());
    let mut total = 0.0;
    for i in 0..n {
        let log_ps = log_softmax_temp(student_logits.row(i), temperature);
        let log_pt = log_softmax_temp(teacher_logits.row(i), temperature);
        let gr = grad.row_mut(i);
        for k in 0..log_ps.len() {
            let pt = log_pt[k].exp();
            // x·ln(x) → 0 as x → 0: a fully-underflowed teacher class
            // contributes nothing.
            if pt > 0.0 {
                total += temperature * temperature * pt * (log_pt[k] - log_ps[k]);
            }
            gr[k] = temperature * (log_ps[k].exp() - pt) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Fraction of argmax predictions matching the labels.
pub fn accuracy(net: &Network, batch: &Batch) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let (logits, _) = net.forward(batch)?;
    let mut correct = 0usize;
    for (i, &label) in batch.labels.iter().enumerate() {
        let row = logits.row(i);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}

const CHECKPOINT_MAGIC: &str = "kdlab-net v1";

/// Serialises the network plus a temperature into the text checkpoint format.
///
/// Layout (line-oriented; `#` lines are comments and skipped on load):
///
/// ```text
/// kdlab-net v1
/// layers 2 8 3
/// activation tanh
/// temperature <f64 bits as 16 hex digits>
/// params 51
/// <one parameter per line, f64 bits as 16 hex digits, flatten order>
/// ```
///
/// Bit-level hex encoding makes the round trip exact.
pub fn checkpoint_string(net: &Network, temperature: f64, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str("layers");
    for s in net.layer_sizes() {
        out.push_str(&format!(" {s}"));
    }
    out.push('\n');
    out.push_str(&format!("activation {}\n", net.activation()));
    out.push_str(&format!("temperature {:016x}\n", temperature.to_bits()));
    let params = net.flatten();
    out.push_str(&format!("params {}\n", params.len()));
    for p in params {
        out.push_str(&format!("{:016x}\n", p.to_bits()));
    }
    out
}

/// Parses the checkpoint format produced by [`checkpoint_string`].
pub fn parse_checkpoint(text: &str) -> Result<(Network, f64), NnError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let bad = |msg: &str| NnError::BadCheckpoint(msg.to_string());

    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing magic line"));
    }
    let sizes_line = lines.next().ok_or_else(|| bad("missing layers line"))?;
    let sizes: Vec<usize> = sizes_line
        .strip_prefix("layers ")
        .ok_or_else(|| bad("missing layers line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad layer size")))
        .collect::<Result<_, _>>()?;
    let act_line = lines.next().ok_or_else(|| bad("missing activation line"))?;
    let activation: Activation = act_line
        .strip_prefix("activation ")
        .ok_or_else(|| bad("missing activation line"))?
        .parse()
        .map_err(NnError::BadCheckpoint)?;
    let temp_line = lines
        .next()
        .ok_or_else(|| bad("missing temperature line"))?;
    let temperature = f64::from_bits(
        u64::from_str_radix(
            temp_line
                .strip_prefix("temperature ")
                .ok_or_else(|| bad("missing temperature line"))?,
            16,
        )
        .map_err(|_| bad("bad temperature bits"))?,
    );
    let count_line = lines.next().ok_or_else(|| bad("missing params line"))?;
    let count: usize = count_line
        .strip_prefix("params ")
        .ok_or_else(|| bad("missing params line"))?
        .parse()
        .map_err(|_| bad("bad parameter count"))?;

    let mut net = Network::init_seeded(&sizes, activation, 0)?;
    if count != net.param_count() {
        return Err(bad(&format!(
            "parameter count {count} does not match layer sizes (expect {})",
            net.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for line in lines {
        let bits = u64::from_str_radix(line, 16).map_err(|_| bad("bad parameter bits"))?;
        params.push(f64::from_bits(bits));
    }
    if params.len() != count {
        return Err(bad(&format!(
            "expected {count} parameters, found {}",
            params.len()
        )));
    }
    net.set_flat(&params)?;
    Ok((net, temperature))
}

/// Writes a checkpoint file. Not atomic; the CLI wraps this in
/// write-temp-then-rename.
pub fn save_checkpoint(
    net: &Network,
    temperature: f64,
    comment: Option<&str>,
    path: &Path,
) -> Result<(), NnError> {
    std::fs::write(path, checkpoint_string(net, temperature, comment))?;
    Ok(())
}

/// Reads a checkpoint file written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Network, f64), NnError> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}
