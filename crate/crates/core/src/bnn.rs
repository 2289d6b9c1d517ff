//! Hybrid regression model: a linear main-effects head plus a concrete-dropout
//! MLP interaction head with one learnable dropout probability per node.
//!
//! Every layer gates its *input* nodes, so layer 0 gates the raw features and
//! layer `l > 0` gates the post-activation outputs of layer `l - 1`. Gates are
//! applied without inverse-keep-probability rescaling: training and detection
//! both see `E[z] = 1 - p`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, logit, sigmoid, stats, Activation, Matrix, RngStream, Standardizer};

/// Dropout probabilities are clamped into `[P_MIN, P_MAX]`.
pub const P_MIN: f64 = 1e-6;
pub const P_MAX: f64 = 1.0 - 1e-6;

const U_EPS: f64 = 1e-7;
const Z_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    /// `output × input`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// One logit per input node; `p = sigmoid(logit)` is the drop probability.
    pub drop_logits: Vec<f64>,
}

impl DenseLayer {
    pub fn drop_prob(&self, node: usize) -> f64 {
        clamp_p(sigmoid(self.drop_logits[node]))
    }

    /// `dp/dlogit`, zero where the clamp is active.
    pub fn drop_prob_grad(&self, node: usize) -> f64 {
        let p = sigmoid(self.drop_logits[node]);
        if (P_MIN..=P_MAX).contains(&p) {
            p * (1.0 - p)
        } else {
            0.0
        }
    }

    /// Squared norm of the outgoing weights of input node `node`.
    pub fn node_weight_sq(&self, node: usize) -> f64 {
        (0..self.spec.output)
            .map(|o| self.weights[(o, node)].powi(2))
            .sum()
    }
}

#[inline]
fn clamp_p(p: f64) -> f64 {
    p.clamp(P_MIN, P_MAX)
}

/// Bernoulli entropy in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let q = 1.0 - p;
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if q > 0.0 {
        h -= q * q.ln();
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Concrete relaxation, used only while training.
    Relaxed,
    /// Bernoulli gates in `{0, 1}`: one posterior draw.
    Hard,
    /// Gates fixed at the keep probabilities (the "mean network").
    Mean,
}

/// One realisation of all node gates of the interaction head.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub mode: MaskMode,
    /// `gates[layer][node]`
    pub gates: Vec<Vec<f64>>,
    /// Uniform noise behind a relaxed mask, kept for reparametrized gradients.
    pub noise: Option<Vec<Vec<f64>>>,
}

impl MaskSample {
    /// Every gate set to `value`.
    pub fn constant(net: &ConcreteDropoutMLP, value: f64) -> Self {
        Self {
            mode: MaskMode::Hard,
            gates: net.layers.iter().map(|l| vec![value; l.spec.input]).collect(),
            noise: None,
        }
    }

    pub fn ones(net: &ConcreteDropoutMLP) -> Self {
        Self::constant(net, 1.0)
    }

    fn check(&self, net: &ConcreteDropoutMLP) -> Result<()> {
        check_dim(net.layers.len(), self.gates.len())?;
        for (l, g) in net.layers.iter().zip(&self.gates) {
            check_dim(l.spec.input, g.len())?;
        }
        Ok(())
    }
}

/// Concrete-relaxed gate `sigmoid((logit(1-p) + logit(u)) / t)`.
#[inline]
pub fn relaxed_gate(p: f64, u: f64, temperature: f64) -> f64 {
    let u = u.clamp(U_EPS, 1.0 - U_EPS);
    let a = ((1.0 - p).ln() - p.ln() + u.ln() - (1.0 - u).ln()) / temperature;
    sigmoid(a).clamp(Z_EPS, 1.0 - Z_EPS)
}

/// Fully connected MLP with per-node concrete dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteDropoutMLP {
    pub layers: Vec<DenseLayer>,
    pub temperature: f64,
    pub length_scale: f64,
}

impl ConcreteDropoutMLP {
    /// Random network `input → hidden… → 1` with Gaussian `N(0, 1/fan_in)`
    /// weights, zero biases and every drop probability at `init_p`.
    pub fn new(
        input: usize,
        hidden: &[usize],
        activation: Activation,
        temperature: f64,
        length_scale: f64,
        init_p: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let act = if l + 1 == n_layers {
                Activation::Identity
            } else {
                activation
            };
            let normal = Normal::new(0.0, (1.0 / fan_in.max(1) as f64).sqrt())
                .map_err(|e| Error::invalid(e.to_string()))?;
            let weights = Matrix::from_fn(fan_out, fan_in, |_, _| normal.sample(rng));
            layers.push(DenseLayer {
                spec: LayerSpec {
                    input: fan_in,
                    output: fan_out,
                    activation: act,
                },
                weights,
                bias: vec![0.0; fan_out],
                drop_logits: vec![logit(clamp_p(init_p)); fan_in],
            });
        }
        Self::from_layers(layers, temperature, length_scale)
    }

    pub fn from_layers(layers: Vec<DenseLayer>, temperature: f64, length_scale: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        if !(temperature > 0.0 && temperature <= 1.0) {
            return Err(Error::invalid(format!("temperature must lie in (0, 1], got {temperature}")));
        }
        if !(length_scale > 0.0) {
            return Err(Error::invalid("length scale must be positive"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.spec.input == 0 || l.spec.output == 0 {
                return Err(Error::invalid(format!("layer {i} has zero width")));
            }
            check_dim(l.spec.output, l.weights.rows())?;
            check_dim(l.spec.input, l.weights.cols())?;
            check_dim(l.spec.output, l.bias.len())?;
            check_dim(l.spec.input, l.drop_logits.len())?;
            if i > 0 {
                check_dim(layers[i - 1].spec.output, l.spec.input)?;
            }
        }
        let last = &layers[layers.len() - 1];
        if last.spec.output != 1 || last.spec.activation != Activation::Identity {
            return Err(Error::invalid("final layer must be a single identity output"));
        }
        Ok(Self {
            layers,
            temperature,
            length_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Width of the vector entering layer `layer` (0 = raw inputs).
    pub fn width_at(&self, layer: usize) -> usize {
        self.layers[layer].spec.input
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.input).sum()
    }

    pub fn drop_probs(&self, layer: usize) -> Vec<f64> {
        let l = &self.layers[layer];
        (0..l.spec.input).map(|k| l.drop_prob(k)).collect()
    }

    pub fn set_drop_probs(&mut self, p: f64) {
        for l in &mut self.layers {
            l.drop_logits.iter_mut().for_each(|v| *v = logit(clamp_p(p)));
        }
    }

    pub fn sample_mask(&self, rng: &mut impl Rng, mode: MaskMode) -> MaskSample {
        match mode {
            MaskMode::Relaxed => {
                let noise = self
                    .layers
                    .iter()
                    .map(|l| (0..l.spec.input).map(|_| rng.random::<f64>()).collect())
                    .collect();
                self.relaxed_mask(noise)
            }
            MaskMode::Hard => MaskSample {
                mode,
                gates: self
                    .layers
                    .iter()
                    .map(|l| {
                        (0..l.spec.input)
                            .map(|k| if rng.random::<f64>() < l.drop_prob(k) { 0.0 } else { 1.0 })
                            .collect()
                    })
                    .collect(),
                noise: None,
            },
            MaskMode::Mean => self.mean_mask(),
        }
    }

    /// Relaxed mask for given uniform noise `u[layer][node]`.
    pub fn relaxed_mask(&self, noise: Vec<Vec<f64>>) -> MaskSample {
        let gates = self
            .layers
            .iter()
            .zip(&noise)
            .map(|(l, u)| {
                (0..l.spec.input)
                    .map(|k| relaxed_gate(l.drop_prob(k), u[k], self.temperature))
                    .collect()
            })
            .collect();
        MaskSample {
            mode: MaskMode::Relaxed,
            gates,
            noise: Some(noise),
        }
    }

    pub fn mean_mask(&self) -> MaskSample {
        MaskSample {
            mode: MaskMode::Mean,
            gates: (0..self.depth())
                .map(|l| self.drop_probs(l).into_iter().map(|p| 1.0 - p).collect())
                .collect(),
            noise: None,
        }
    }

    /// Output of the subnetwork starting at layer `from` given the (ungated)
    /// activation vector entering it.
    pub fn forward_from(&self, from: usize, input: &[f64], mask: &MaskSample) -> Result<f64> {
        mask.check(self)?;
        check_dim(self.width_at(from), input.len())?;
        let mut a: Vec<f64> = input.to_vec();
        for (l, gates) in self.layers[from..].iter().zip(&mask.gates[from..]) {
            let h: Vec<f64> = a.iter().zip(gates).map(|(v, z)| v * z).collect();
            a = (0..l.spec.output)
                .map(|o| l.spec.activation.value(dot(l.weights.row(o), &h) + l.bias[o]))
                .collect();
        }
        Ok(a[0])
    }

    pub fn forward(&self, x: &[f64], mask: &MaskSample) -> Result<f64> {
        self.forward_from(0, x, mask)
    }

    /// Ungated activation vector entering layer `layer`.
    pub fn activations(&self, x: &[f64], mask: &MaskSample, layer: usize) -> Result<Vec<f64>> {
        mask.check(self)?;
        check_dim(self.input_dim(), x.len())?;
        if layer >= self.depth() {
            return Err(Error::invalid(format!("layer {layer} out of range (depth {})", self.depth())));
        }
        let mut a = x.to_vec();
        for (l, gates) in self.layers[..layer].iter().zip(&mask.gates) {
            let h: Vec<f64> = a.iter().zip(gates).map(|(v, z)| v * z).collect();
            a = (0..l.spec.output)
                .map(|o| l.spec.activation.value(dot(l.weights.row(o), &h) + l.bias[o]))
                .collect();
        }
        Ok(a)
    }

    /// `Σ_nodes l²(1-p)/2·‖w_node‖²`
    pub fn kl_weight_term(&self) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        self.layers
            .iter()
            .map(|l| {
                (0..l.spec.input)
                    .map(|k| 0.5 * l2 * (1.0 - l.drop_prob(k)) * l.node_weight_sq(k))
                    .sum::<f64>()
            })
            .sum()
    }

    /// `-Σ_nodes H(p)`
    pub fn kl_entropy_term(&self) -> f64 {
        -self
            .layers
            .iter()
            .map(|l| (0..l.spec.input).map(|k| bernoulli_entropy(l.drop_prob(k))).sum::<f64>())
            .sum::<f64>()
    }

    /// KL of the concrete-dropout posterior to the Gaussian prior, up to a
    /// constant. Divide by the dataset size before adding to a per-example loss.
    pub fn kl_regularizer(&self) -> f64 {
        self.kl_weight_term() + self.kl_entropy_term()
    }
}

/// Linear main-effects head plus concrete-dropout interaction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub net: ConcreteDropoutMLP,
    pub log_noise_var: f64,
}

impl HybridModel {
    pub fn new(net: ConcreteDropoutMLP) -> Self {
        Self {
            beta: vec![0.0; net.input_dim()],
            intercept: 0.0,
            net,
            log_noise_var: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.beta.len()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    pub fn linear_part(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x) + self.intercept
    }

    /// `βᵀx + c + g(x)`. The linear head is never gated.
    pub fn forward(&self, x: &[f64], mask: &MaskSample) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.linear_part(x) + self.net.forward(x, mask)?)
    }

    /// MC-dropout predictive mean and variance from `k` hard-mask forwards.
    /// Variance adds the observation noise to the spread across masks.
    pub fn predictive_distribution(&self, x: &[f64], k: usize, rng: RngStream) -> Result<(f64, f64)> {
        if k < 2 {
            return Err(Error::invalid("predictive distribution needs at least 2 samples"));
        }
        let mut r = rng.rng();
        let preds = (0..k)
            .map(|_| {
                let m = self.net.sample_mask(&mut r, MaskMode::Hard);
                self.forward(x, &m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((stats::mean(&preds), stats::sample_variance(&preds) + self.noise_var()))
    }

    pub fn num_params(&self) -> usize {
        self.net
            .layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len() + l.drop_logits.len())
            .sum::<usize>()
            + self.beta.len()
            + 2
    }

    /// Flatten: per layer `(weights, bias, logits)`, then `β`, intercept,
    /// log noise variance.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.net.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
            p.extend_from_slice(&l.drop_logits);
        }
        p.extend_from_slice(&self.beta);
        p.push(self.intercept);
        p.push(self.log_noise_var);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.num_params(), p.len())?;
        let mut i = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[i..i + dst.len()]);
            i += dst.len();
        };
        for l in &mut self.net.layers {
            take(l.weights.as_mut_slice());
            take(&mut l.bias);
            take(&mut l.drop_logits);
        }
        take(&mut self.beta);
        let mut tail = [0.0; 2];
        take(&mut tail);
        self.intercept = tail[0];
        self.log_noise_var = tail[1];
        Ok(())
    }
}

pub const MODEL_FORMAT: &str = "hessix-model/1";

/// Everything needed to reuse a trained model on raw-scale data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub feature_names: Vec<String>,
    pub x_scaler: Standardizer,
    pub y_scaler: Standardizer,
    pub model: HybridModel,
    pub config_digest: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tool_version: String,
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.format != MODEL_FORMAT {
            return Err(Error::Malformed(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                ck.format
            )));
        }
        let net = &ck.model.net;
        ConcreteDropoutMLP::from_layers(net.layers.clone(), net.temperature, net.length_scale)?;
        check_dim(ck.feature_names.len(), ck.model.input_dim())?;
        check_dim(ck.x_scaler.dim(), ck.model.input_dim())?;
        Ok(ck)
    }
}
