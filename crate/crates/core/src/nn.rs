//! Minimal dense feed-forward network: ReLU hidden layers, softmax output,
//! Adagrad updates. Shared by the adversarial discriminator, the
//! link-prediction matcher, and the node classifier.

use std::io::{Read, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::store::{
    read_container_header, write_container_header, OptimizerConfig, CONTAINER_TAG_MLP,
};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    /// input -> hidden... -> output sizes; at least one hidden layer.
    pub layer_dims: Vec<usize>,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::Config(
                "mlp needs at least one hidden layer (>= 3 dims)".to_string(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("mlp layer dims must be >= 1".to_string()));
        }
        Ok(MlpSpec { layer_dims, seed })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    /// out × in, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
    w_accum: Vec<f64>,
    b_accum: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Glorot-uniform initialization, deterministic for a fixed seed.
    pub fn new(spec: &MlpSpec) -> Result<Mlp> {
        let spec = MlpSpec::new(spec.layer_dims.clone(), spec.seed)?;
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::new();
        for win in spec.layer_dims.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w = (0..n_in * n_out).map(|_| dist.sample(&mut rng)).collect();
            layers.push(DenseLayer {
                w,
                b: vec![0.0; n_out],
                w_accum: vec![0.0; n_in * n_out],
                b_accum: vec![0.0; n_out],
                n_in,
                n_out,
            });
        }
        Ok(Mlp {
            dims: spec.layer_dims,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_weights(&self, layer: usize) -> usize {
        self.layers[layer].w.len()
    }

    pub fn num_biases(&self, layer: usize) -> usize {
        self.layers[layer].b.len()
    }

    /// Nudge a single weight; used by finite-difference verification.
    pub fn perturb_weight(&mut self, layer: usize, idx: usize, delta: f64) {
        self.layers[layer].w[idx] += delta;
    }

    /// Nudge a single bias; used by finite-difference verification.
    pub fn perturb_bias(&mut self, layer: usize, idx: usize, delta: f64) {
        self.layers[layer].b[idx] += delta;
    }

    #[cfg(test)]
    pub(crate) fn zero_layer(&mut self, idx: usize) {
        self.layers[idx].w.iter_mut().for_each(|x| *x = 0.0);
        self.layers[idx].b.iter_mut().for_each(|x| *x = 0.0);
    }

    #[cfg(test)]
    pub(crate) fn scale_layer_weights(&mut self, idx: usize, s: f64) {
        self.layers[idx].w.iter_mut().for_each(|x| *x *= s);
    }
}

/// Per-layer pre-activations and activations for one forward pass.
struct ForwardTrace {
    /// activations[0] is the input; activations[l+1] is the output of
    /// layer l (post-ReLU for hidden layers, raw logits for the last).
    activations: Vec<Vec<Vec<f64>>>,
}

fn forward_trace(mlp: &Mlp, inputs: &[Vec<f64>]) -> Result<ForwardTrace> {
    for row in inputs {
        if row.len() != mlp.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match mlp input dim {}",
                row.len(),
                mlp.input_dim()
            )));
        }
    }
    let mut activations = vec![inputs.to_vec()];
    let last = mlp.layers.len() - 1;
    for (l, layer) in mlp.layers.iter().enumerate() {
        let prev = &activations[l];
        let mut out = Vec::with_capacity(prev.len());
        for row in prev {
            let mut z = layer.b.clone();
            for (i, zi) in z.iter_mut().enumerate() {
                let wrow = &layer.w[i * layer.n_in..(i + 1) * layer.n_in];
                *zi += wrow.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
            }
            if l != last {
                z.iter_mut().for_each(|x| *x = x.max(0.0));
            }
            out.push(z);
        }
        activations.push(out);
    }
    Ok(ForwardTrace { activations })
}

fn softmax_rows(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|z| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter().map(|&e| e / sum).collect()
        })
        .collect()
}

/// Softmax class probabilities, one distribution per input row.
pub fn forward(mlp: &Mlp, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let trace = forward_trace(mlp, inputs)?;
    Ok(softmax_rows(trace.activations.last().unwrap()))
}

/// Mean cross-entropy of softmax(logits) against the target distributions,
/// computed stably from the logits.
fn cross_entropy_from_logits(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    for (z, y) in logits.iter().zip(targets) {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - y.iter().zip(z).map(|(yi, zi)| yi * zi).sum::<f64>();
    }
    loss / n
}

struct Backprop {
    loss: f64,
    w_grads: Vec<Vec<f64>>,
    b_grads: Vec<Vec<f64>>,
    input_grads: Vec<Vec<f64>>,
}

fn backprop(mlp: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Backprop> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape("inputs/targets length mismatch".to_string()));
    }
    for t in targets {
        if t.len() != mlp.output_dim() {
            return Err(Error::Shape(format!(
                "target width {} does not match mlp output dim {}",
                t.len(),
                mlp.output_dim()
            )));
        }
    }
    let trace = forward_trace(mlp, inputs)?;
    let logits = trace.activations.last().unwrap();
    let loss = cross_entropy_from_logits(logits, targets);
    let probs = softmax_rows(logits);
    let n = inputs.len() as f64;

    // delta at the output: (p - y) / n
    let mut delta: Vec<Vec<f64>> = probs
        .iter()
        .zip(targets)
        .map(|(p, y)| p.iter().zip(y).map(|(pi, yi)| (pi - yi) / n).collect())
        .collect();

    let mut w_grads = vec![Vec::new(); mlp.layers.len()];
    let mut b_grads = vec![Vec::new(); mlp.layers.len()];
    for l in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[l];
        let prev = &trace.activations[l];
        let mut wg = vec![0.0; layer.w.len()];
        let mut bg = vec![0.0; layer.n_out];
        for (row, drow) in prev.iter().zip(&delta) {
            for i in 0..layer.n_out {
                bg[i] += drow[i];
                let wrow = &mut wg[i * layer.n_in..(i + 1) * layer.n_in];
                for (w, &x) in wrow.iter_mut().zip(row) {
                    *w += drow[i] * x;
                }
            }
        }
        // propagate delta to the previous layer
        let mut prev_delta: Vec<Vec<f64>> = prev.iter().map(|r| vec![0.0; r.len()]).collect();
        for (ri, drow) in delta.iter().enumerate() {
            let pd = &mut prev_delta[ri];
            for i in 0..layer.n_out {
                let wrow = &layer.w[i * layer.n_in..(i + 1) * layer.n_in];
                for (p, &w) in pd.iter_mut().zip(wrow) {
                    *p += drow[i] * w;
                }
            }
            if l > 0 {
                // ReLU mask of the previous layer's output
                for (p, &a) in pd.iter_mut().zip(&prev[ri]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        w_grads[l] = wg;
        b_grads[l] = bg;
        delta = prev_delta;
    }
    Ok(Backprop {
        loss,
        w_grads,
        b_grads,
        input_grads: delta,
    })
}

/// One training step: mean cross-entropy plus an Adagrad update on every
/// layer. Returns the pre-update loss.
pub fn cross_entropy_step(
    mlp: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &OptimizerConfig,
) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let bp = backprop(mlp, inputs, targets)?;
    if !bp.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite mlp loss {}", bp.loss)));
    }
    for (l, layer) in mlp.layers.iter_mut().enumerate() {
        let update = |params: &mut [f64], accum: &mut [f64], grads: &[f64]| {
            for ((p, a), &g0) in params.iter_mut().zip(accum.iter_mut()).zip(grads) {
                let g = g0 + cfg.weight_decay * *p;
                *a += g * g;
                *p -= cfg.learning_rate * g / (a.sqrt() + cfg.epsilon);
            }
        };
        update(&mut layer.w, &mut layer.w_accum, &bp.w_grads[l]);
        update(&mut layer.b, &mut layer.b_accum, &bp.b_grads[l]);
    }
    Ok(bp.loss)
}

/// Loss and ∂loss/∂inputs without touching the network — the channel by
/// which the adversarial loss reaches the embedding tables.
pub fn input_gradient(
    mlp: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if inputs.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let bp = backprop(mlp, inputs, targets)?;
    Ok((bp.loss, bp.input_grads))
}

/// Loss plus per-layer weight and bias gradients, without any update —
/// exposed so the analytic gradients can be verified externally.
pub fn parameter_gradients(
    mlp: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let bp = backprop(mlp, inputs, targets)?;
    Ok((bp.loss, bp.w_grads, bp.b_grads))
}

/// Mean cross-entropy without any update (evaluation only).
pub fn evaluate_loss(mlp: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let trace = forward_trace(mlp, inputs)?;
    Ok(cross_entropy_from_logits(
        trace.activations.last().unwrap(),
        targets,
    ))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| {
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            argmax == l
        })
        .count();
    correct as f64 / probs.len() as f64
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// MLP persistence in the shared binary container, with its own tag.
pub fn save_mlp(mlp: &Mlp, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::Load(format!("write failed: {e}"));
    write_container_header(w, CONTAINER_TAG_MLP).map_err(io)?;
    w.write_all(&(mlp.dims.len() as u64).to_le_bytes()).map_err(io)?;
    for &d in &mlp.dims {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    for layer in &mlp.layers {
        for v in [&layer.w, &layer.b, &layer.w_accum, &layer.b_accum] {
            for &x in v.iter() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn load_mlp(r: &mut impl Read) -> Result<Mlp> {
    read_container_header(r, CONTAINER_TAG_MLP)?;
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated mlp dims: {e}")))?;
    let n_dims = u64::from_le_bytes(buf) as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Load(format!("truncated mlp dims: {e}")))?;
        dims.push(u64::from_le_bytes(buf) as usize);
    }
    if dims.len() < 3 {
        return Err(Error::Load("mlp container has too few layers".to_string()));
    }
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Load(format!("truncated mlp data: {e}")))?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let mut layers = Vec::new();
    for win in dims.windows(2) {
        let (n_in, n_out) = (win[0], win[1]);
        let w = read_vec(n_in * n_out)?;
        let b = read_vec(n_out)?;
        let w_accum = read_vec(n_in * n_out)?;
        let b_accum = read_vec(n_out)?;
        layers.push(DenseLayer {
            w,
            b,
            w_accum,
            b_accum,
            n_in,
            n_out,
        });
    }
    Ok(Mlp { dims, layers })
}
