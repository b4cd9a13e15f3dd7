//! Minimal feed-forward network machinery: dense layers, ReLU/sigmoid/linear
//! activations, MSE/BCE/contrastive losses with exact reverse-mode gradients,
//! and a bias-corrected Adam optimizer. Sized for the tiny architectures used
//! by the feasibility models, with deterministic seeded initialization.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient encountered in layer {layer} ({which})")]
    NonFiniteGradient { layer: usize, which: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Linear => z.clone(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(&self, a: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => a.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Sigmoid => a.mapv(|v| v * (1.0 - v)),
            Activation::Linear => Array2::ones(a.raw_dim()),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: output = activation(input * w^T + b).
#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Weights, shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

/// Parameters of a feed-forward network.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Glorot-uniform initialization (+-sqrt(6/(fan_in+fan_out))) with the
    /// caller's RNG; biases start at zero.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        assert_eq!(dims.len() - 1, activations.len());
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
                DenseLayer {
                    w,
                    b: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattens all parameters (per layer: row-major weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }
}

/// Per-layer cached activations from a forward pass; `inputs[i]` is the input
/// to layer `i` and `outputs[i]` its post-activation output.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.outputs.pop().unwrap()
    }
}

/// Runs the affine + activation chain, caching what backprop needs.
pub fn forward(params: &MlpParams, input: &Array2<f64>) -> Result<ForwardCache, NnError> {
    if input.ncols() != params.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "input width {} != first layer width {}",
            input.ncols(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut outputs = Vec::with_capacity(params.layers.len());
    let mut x = input.clone();
    for layer in &params.layers {
        let mut z = x.dot(&layer.w.t());
        z += &layer.b;
        let a = layer.activation.apply(&z);
        inputs.push(x);
        outputs.push(a.clone());
        x = a;
    }
    Ok(ForwardCache { inputs, outputs })
}

/// Convenience forward pass that returns only the final output.
pub fn predict(params: &MlpParams, input: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    Ok(forward(params, input)?.into_output())
}

/// Gradients matching an [`MlpParams`] shape, plus the gradient with respect
/// to the batch input (needed to chain losses through an upstream network).
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub input: Array2<f64>,
}

/// Exact reverse-mode gradients given the loss gradient at the output.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    loss_grad: &Array2<f64>,
) -> Result<Gradients, NnError> {
    let n_layers = params.layers.len();
    if cache.inputs.len() != n_layers {
        return Err(NnError::ShapeMismatch(
            "cache does not match network depth".into(),
        ));
    }
    if loss_grad.raw_dim() != cache.outputs[n_layers - 1].raw_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "loss gradient shape {:?} != output shape {:?}",
            loss_grad.shape(),
            cache.outputs[n_layers - 1].shape()
        )));
    }
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
    let mut delta = loss_grad.clone();
    for i in (0..n_layers).rev() {
        let layer = &params.layers[i];
        // dL/dz = dL/da * act'(z), with act' written in terms of a
        delta = &delta * &layer.activation.derivative_from_output(&cache.outputs[i]);
        let dw = delta.t().dot(&cache.inputs[i]);
        let db = delta.sum_axis(Axis(0));
        grads.push((dw, db));
        delta = delta.dot(&layer.w);
    }
    grads.reverse();
    Ok(Gradients {
        layers: grads,
        input: delta,
    })
}

/// Mean squared error over every entry of the batch, with its gradient.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    (loss, grad)
}

/// Binary cross-entropy over probabilities in (0,1), with its gradient.
///
/// Probabilities are clamped away from 0 and 1 so the gradient stays finite;
/// chained through the sigmoid derivative the product reduces to the usual
/// (p - y) / n form.
pub fn bce_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    const EPS: f64 = 1e-12;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = pred.clone();
    for (g, (&p, &y)) in grad.iter_mut().zip(pred.iter().zip(target.iter())) {
        let p = p.clamp(EPS, 1.0 - EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        *g = (p - y) / (p * (1.0 - p) * n);
    }
    (loss / n, grad)
}

/// Pairwise contrastive loss over a batch of embeddings.
///
/// Same-condition pairs contribute d^2 and different-condition pairs
/// max(0, margin - d)^2, averaged over all pairs; returns the loss and its
/// gradient with respect to each embedding. The hinge subgradient is zero at
/// d >= margin, and coincident different-condition points get a zero gradient
/// (no separating direction exists).
pub fn contrastive_loss(
    embeddings: &Array2<f64>,
    conditions: &[u32],
    margin: f64,
) -> (f64, Array2<f64>) {
    let n = embeddings.nrows();
    assert_eq!(n, conditions.len());
    assert!(n >= 2, "contrastive loss needs at least two embeddings");
    assert!(margin > 0.0);
    let n_pairs = (n * (n - 1) / 2) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(embeddings.raw_dim());
    for i in 0..n {
        for j in (i + 1)..n {
            let zi = embeddings.row(i);
            let zj = embeddings.row(j);
            let diff: Array1<f64> = &zi - &zj;
            let d2 = diff.dot(&diff);
            let d = d2.sqrt();
            if conditions[i] == conditions[j] {
                loss += d2;
                let g = diff.mapv(|v| 2.0 * v / n_pairs);
                grad.row_mut(i).zip_mut_with(&g, |a, b| *a += b);
                grad.row_mut(j).zip_mut_with(&g, |a, b| *a -= b);
            } else if d < margin {
                loss += (margin - d) * (margin - d);
                if d > 1e-12 {
                    let scale = -2.0 * (margin - d) / (d * n_pairs);
                    let g = diff.mapv(|v| scale * v);
                    grad.row_mut(i).zip_mut_with(&g, |a, b| *a += b);
                    grad.row_mut(j).zip_mut_with(&g, |a, b| *a -= b);
                }
            }
        }
    }
    (loss / n_pairs, grad)
}

/// Adam accumulators mirroring an [`MlpParams`] shape.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros = |p: &MlpParams| {
            p.layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NnError> {
    if grads.layers.len() != params.layers.len() {
        return Err(NnError::ShapeMismatch("gradient depth mismatch".into()));
    }
    for (i, (dw, db)) in grads.layers.iter().enumerate() {
        if dw.raw_dim() != params.layers[i].w.raw_dim()
            || db.raw_dim() != params.layers[i].b.raw_dim()
        {
            return Err(NnError::ShapeMismatch(format!(
                "gradient shape mismatch in layer {i}"
            )));
        }
        if dw.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                layer: i,
                which: "weights",
            });
        }
        if db.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                layer: i,
                which: "bias",
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (dw, db)) in grads.layers.iter().enumerate() {
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        mw.zip_mut_with(dw, |m, &g| *m = state.beta1 * *m + (1.0 - state.beta1) * g);
        mb.zip_mut_with(db, |m, &g| *m = state.beta1 * *m + (1.0 - state.beta1) * g);
        vw.zip_mut_with(dw, |v, &g| {
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g
        });
        vb.zip_mut_with(db, |v, &g| {
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g
        });
        let layer = &mut params.layers[i];
        for ((p, m), v) in layer.w.iter_mut().zip(mw.iter()).zip(vw.iter()) {
            *p -= state.lr * (m / bc1) / ((v / bc2).sqrt() + state.epsilon);
        }
        for ((p, m), v) in layer.b.iter_mut().zip(mb.iter()).zip(vb.iter()) {
            *p -= state.lr * (m / bc1) / ((v / bc2).sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Serialized form of a network: per-layer shapes, row-major weights,
/// activation tags, and an optional training-config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFile {
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl WeightFile {
    pub fn from_params(params: &MlpParams, train_config: Option<serde_json::Value>) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                weights: l.w.iter().copied().collect(),
                bias: l.b.to_vec(),
                activation: l.activation,
            })
            .collect();
        Self {
            layers,
            train_config,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams, NnError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut prev_out: Option<usize> = None;
        for (i, rec) in self.layers.iter().enumerate() {
            if rec.weights.len() != rec.rows * rec.cols || rec.bias.len() != rec.rows {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i}: declared {}x{} but got {} weights / {} biases",
                    rec.rows,
                    rec.cols,
                    rec.weights.len(),
                    rec.bias.len()
                )));
            }
            if let Some(prev) = prev_out {
                if rec.cols != prev {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {i}: input width {} != previous output {}",
                        rec.cols, prev
                    )));
                }
            }
            prev_out = Some(rec.rows);
            let w = Array2::from_shape_vec((rec.rows, rec.cols), rec.weights.clone())
                .expect("shape validated above");
            layers.push(DenseLayer {
                w,
                b: Array1::from_vec(rec.bias.clone()),
                activation: rec.activation,
            });
        }
        if layers.is_empty() {
            return Err(NnError::ShapeMismatch("no layers".into()));
        }
        Ok(MlpParams { layers })
    }
}

/// Central finite differences of `loss_of(params)` against an analytic
/// gradient; returns the maximum relative error over all parameters. Entries
/// where both gradients are below 1e-7 in magnitude are compared absolutely.
pub fn gradient_check(
    params: &MlpParams,
    analytic: &Gradients,
    mut loss_of: impl FnMut(&MlpParams) -> f64,
    h: f64,
) -> f64 {
    let flat_grad: Vec<f64> = analytic
        .layers
        .iter()
        .flat_map(|(dw, db)| dw.iter().chain(db.iter()).copied().collect::<Vec<_>>())
        .collect();
    assert_eq!(flat_grad.len(), params.param_count());
    let base = params.to_flat();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (k, &g) in flat_grad.iter().enumerate() {
        let mut bumped = base.clone();
        bumped[k] += h;
        probe.set_from_flat(&bumped);
        let lp = loss_of(&probe);
        bumped[k] = base[k] - h;
        probe.set_from_flat(&bumped);
        let lm = loss_of(&probe);
        let fd = (lp - lm) / (2.0 * h);
        let denom = g.abs().max(fd.abs());
        if denom > 1e-7 {
            worst = worst.max((g - fd).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_net(dims: &[usize], acts: &[Activation], seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::init(dims, acts, &mut rng)
    }

    #[test]
    fn zero_weights_sigmoid_outputs_half() {
        let mut p = toy_net(&[3, 1], &[Activation::Sigmoid], 1);
        p.layers[0].w.fill(0.0);
        p.layers[0].b.fill(0.0);
        let out = predict(&p, &array![[0.3, -2.0, 5.0]]).unwrap();
        assert_eq!(out[[0, 0]], 0.5);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut p = toy_net(&[2, 2], &[Activation::Linear], 1);
        p.layers[0].w = array![[1.0, 0.0], [0.0, 1.0]];
        p.layers[0].b.fill(0.0);
        let x = array![[0.25, -1.5], [3.0, 0.0]];
        let out = predict(&p, &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // 2-2-1 net evaluated by hand on input (1, 0):
        //   z1 = (0.5, -0.25) -> relu -> (0.5, 0)
        //   z2 = 0.3*0.5 + 0.7*0 + 0.1 = 0.25 -> sigmoid(0.25)
        let mut p = toy_net(&[2, 2, 1], &[Activation::Relu, Activation::Sigmoid], 1);
        p.layers[0].w = array![[0.5, 1.0], [-0.25, 2.0]];
        p.layers[0].b = array![0.0, 0.0];
        p.layers[1].w = array![[0.3, 0.7]];
        p.layers[1].b = array![0.1];
        let out = predict(&p, &array![[1.0, 0.0]]).unwrap();
        let expect = 1.0 / (1.0 + (-0.25f64).exp());
        assert!((out[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = toy_net(&[3, 2], &[Activation::Linear], 1);
        assert!(matches!(
            forward(&p, &Array2::zeros((1, 4))),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn linear_mse_gradient_matches_closed_form() {
        // Single linear layer, one sample: dL/dW = 2 (y_hat - y) x^T.
        let mut p = toy_net(&[3, 1], &[Activation::Linear], 2);
        p.layers[0].w = array![[0.2, -0.4, 0.6]];
        p.layers[0].b = array![0.05];
        let x = array![[1.0, 2.0, -1.0]];
        let y = array![[0.7]];
        let cache = forward(&p, &x).unwrap();
        let (_, lg) = mse_loss(cache.output(), &y);
        let g = backward(&p, &cache, &lg).unwrap();
        let resid = cache.output()[[0, 0]] - 0.7;
        let expect = array![[2.0 * resid, 4.0 * resid, -2.0 * resid]];
        assert!((&g.layers[0].0 - &expect).iter().all(|d| d.abs() < 1e-12));
        assert!((g.layers[0].1[0] - 2.0 * resid).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let p = toy_net(&[4, 8, 2], &[Activation::Relu, Activation::Sigmoid], 3);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) / 7.0);
        let cache = forward(&p, &x).unwrap();
        let g = backward(&p, &cache, &Array2::zeros((5, 2))).unwrap();
        for (dw, db) in &g.layers {
            assert!(dw.iter().all(|&v| v == 0.0));
            assert!(db.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::init(
            &[4, 6, 2],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let x = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((10, 2), |_| f64::from(rng.random_range(0..2)));
        let cache = forward(&p, &x).unwrap();
        let (_, lg) = bce_loss(cache.output(), &y);
        let analytic = backward(&p, &cache, &lg).unwrap();
        let err = gradient_check(
            &p,
            &analytic,
            |q| {
                let c = forward(q, &x).unwrap();
                bce_loss(c.output(), &y).0
            },
            1e-5,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = MlpParams::init(&[3, 5, 2], &[Activation::Relu, Activation::Linear], &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let cache = forward(&p, &x).unwrap();
        let (_, lg) = mse_loss(cache.output(), &y);
        let g = backward(&p, &cache, &lg).unwrap();
        let h = 1e-6;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let lp = mse_loss(&predict(&p, &xp).unwrap(), &y).0;
                let lm = mse_loss(&predict(&p, &xm).unwrap(), &y).0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - g.input[[i, j]]).abs() < 1e-6,
                    "input grad ({i},{j}): fd {fd} vs {}",
                    g.input[[i, j]]
                );
            }
        }
    }

    #[test]
    fn contrastive_loss_examples() {
        // Identical embeddings, same condition.
        let z = array![[0.5, -0.5], [0.5, -0.5]];
        let (loss, grad) = contrastive_loss(&z, &[1, 1], 1.0);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        // Far apart, different conditions: hinge inactive.
        let z = array![[0.0, 0.0], [3.0, 0.0]];
        let (loss, grad) = contrastive_loss(&z, &[1, 2], 2.0);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        // Single different-condition pair at distance 1 with margin 2.
        let z = array![[0.0, 0.0], [1.0, 0.0]];
        let (loss, grad) = contrastive_loss(&z, &[1, 2], 2.0);
        assert!((loss - 1.0).abs() < 1e-12);
        // d(m-d)^2/dz1 = -2(m-d)(z1-z2)/d = (2, 0)
        assert!((grad[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((grad[[1, 0]] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let conds = [1u32, 1, 2, 2, 3, 1];
        let (_, grad) = contrastive_loss(&z, &conds, 1.0);
        let h = 1e-6;
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (contrastive_loss(&zp, &conds, 1.0).0
                    - contrastive_loss(&zm, &conds, 1.0).0)
                    / (2.0 * h);
                assert!(
                    (fd - grad[[i, j]]).abs() < 1e-6,
                    "entry ({i},{j}): fd {fd} vs analytic {}",
                    grad[[i, j]]
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_fresh_params_unchanged() {
        let p0 = toy_net(&[3, 2], &[Activation::Linear], 9);
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, 1e-3);
        let grads = Gradients {
            layers: vec![(Array2::zeros((2, 3)), Array1::zeros(2))],
            input: Array2::zeros((1, 3)),
        };
        adam_step(&mut p, &grads, &mut st).unwrap();
        assert_eq!(st.step, 1);
        for (l0, l1) in p0.layers.iter().zip(p.layers.iter()) {
            assert!((&l0.w - &l1.w).iter().all(|d| d.abs() < 1e-15));
            assert!((&l0.b - &l1.b).iter().all(|d| d.abs() < 1e-15));
        }
    }

    #[test]
    fn adam_first_step_matches_bias_corrected_formula() {
        // With constant gradient g at step 1: m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps).
        let mut p = toy_net(&[2, 1], &[Activation::Linear], 4);
        let before = p.layers[0].w.clone();
        let mut st = AdamState::new(&p, 0.01);
        let g = array![[0.3, -0.7]];
        let grads = Gradients {
            layers: vec![(g.clone(), Array1::zeros(1))],
            input: Array2::zeros((1, 2)),
        };
        adam_step(&mut p, &grads, &mut st).unwrap();
        for j in 0..2 {
            let expect = before[[0, j]] - 0.01 * g[[0, j]] / (g[[0, j]].abs() + 1e-8);
            assert!((p.layers[0].w[[0, j]] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut p = toy_net(&[2, 1], &[Activation::Linear], 4);
        let mut st = AdamState::new(&p, 0.01);
        let grads = Gradients {
            layers: vec![(array![[f64::NAN, 0.0]], Array1::zeros(1))],
            input: Array2::zeros((1, 2)),
        };
        assert!(matches!(
            adam_step(&mut p, &grads, &mut st),
            Err(NnError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn training_reaches_low_bce_on_separable_toy_problem() {
        // Points left/right of a hyperplane, 200 full-batch Adam steps.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((64, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((64, 1), |(i, _)| {
            f64::from(x[[i, 0]] + 0.5 * x[[i, 1]] > 0.0)
        });
        let mut p = MlpParams::init(
            &[2, 8, 1],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let mut st = AdamState::new(&p, 0.05);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let cache = forward(&p, &x).unwrap();
            let (loss, lg) = bce_loss(cache.output(), &y);
            let g = backward(&p, &cache, &lg).unwrap();
            adam_step(&mut p, &g, &mut st).unwrap();
            last = loss;
        }
        assert!(last < 0.1, "final BCE {last}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let x = Array2::from_shape_fn((16, 3), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((16, 1), |_| f64::from(rng.random_range(0..2)));
            let mut p = MlpParams::init(
                &[3, 4, 1],
                &[Activation::Relu, Activation::Sigmoid],
                &mut rng,
            );
            let mut st = AdamState::new(&p, 1e-3);
            for _ in 0..50 {
                let cache = forward(&p, &x).unwrap();
                let (_, lg) = bce_loss(cache.output(), &y);
                let g = backward(&p, &cache, &lg).unwrap();
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p.to_flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn weight_file_round_trip() {
        let p = toy_net(&[4, 6, 2], &[Activation::Relu, Activation::Sigmoid], 17);
        let wf = WeightFile::from_params(&p, Some(serde_json::json!({"lr": 5e-4})));
        let text = serde_json::to_string(&wf).unwrap();
        let back: WeightFile = serde_json::from_str(&text).unwrap();
        let q = back.to_params().unwrap();
        assert_eq!(p.to_flat(), q.to_flat());
        assert_eq!(q.layers[0].activation, Activation::Relu);
    }

    #[test]
    fn weight_file_rejects_inconsistent_shapes() {
        let rec = WeightFile {
            layers: vec![
                LayerRecord {
                    rows: 2,
                    cols: 3,
                    weights: vec![0.0; 6],
                    bias: vec![0.0; 2],
                    activation: Activation::Linear,
                },
                LayerRecord {
                    rows: 1,
                    cols: 4, // previous layer emits 2
                    weights: vec![0.0; 4],
                    bias: vec![0.0; 1],
                    activation: Activation::Linear,
                },
            ],
            train_config: None,
        };
        assert!(rec.to_params().is_err());
    }
}
