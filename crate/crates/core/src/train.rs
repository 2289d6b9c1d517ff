//! Stochastic minimisation of the hybrid negative ELBO with Adam.
//!
//! Gradients come from hand-written backpropagation through the relaxed
//! (concrete) gates. One relaxed mask is drawn per minibatch; per-example
//! gradients are summed in fixed-size chunks whose partial sums are reduced
//! in chunk order, so a seed gives the same trajectory on any thread count.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{ConcreteDropoutMLP, HybridModel, MaskSample, ModelCheckpoint, MODEL_FORMAT};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::math::{dot, logit, Activation, AdamState, Matrix, RngStream, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Hidden layer widths of the interaction head.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Concrete relaxation temperature.
    pub temperature: f64,
    /// Prior length-scale.
    pub length_scale: f64,
    /// Relaxed masks averaged per minibatch.
    pub mc_samples: usize,
    pub seed: u64,
    /// Early-stopping patience on validation loss, in epochs.
    pub patience: usize,
    pub init_drop_prob: f64,
    /// L2 penalty on the main-effect weights and intercept.
    pub beta_penalty: f64,
    /// Hard-mask samples for the final RMSE / coverage report.
    pub eval_mc_samples: usize,
    /// Examples per gradient chunk (fixed so reductions are order-stable).
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100, 100],
            activation: Activation::Tanh,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            temperature: 0.1,
            length_scale: 1e-4,
            mc_samples: 1,
            seed: 0,
            patience: 20,
            init_drop_prob: 0.1,
            beta_penalty: 1e-6,
            eval_mc_samples: 100,
            chunk_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::invalid("temperature must lie in (0, 1]"));
        }
        if !(self.length_scale > 0.0) {
            return Err(Error::invalid("length_scale must be positive"));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.chunk_size == 0 {
            return Err(Error::invalid("batch_size, mc_samples and chunk_size must be positive"));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.eval_mc_samples < 2 {
            return Err(Error::invalid("eval_mc_samples must be at least 2"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        crate::digest_json(self)
    }
}

/// Per-epoch training-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub rmse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_loss: f64,
    pub val_loss: f64,
    pub initial_val_loss: f64,
    pub test_rmse: f64,
    pub coverage_95: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

/// Offsets of each layer's parameter blocks inside the flat vector.
struct Layout {
    w: Vec<usize>,
    b: Vec<usize>,
    logit: Vec<usize>,
    beta: usize,
    intercept: usize,
    log_var: usize,
    total: usize,
}

impl Layout {
    fn of(model: &HybridModel) -> Self {
        let mut off = 0;
        let (mut w, mut b, mut lg) = (vec![], vec![], vec![]);
        for l in &model.net.layers {
            w.push(off);
            off += l.weights.as_slice().len();
            b.push(off);
            off += l.bias.len();
            lg.push(off);
            off += l.drop_logits.len();
        }
        let beta = off;
        off += model.beta.len();
        Self {
            w,
            b,
            logit: lg,
            beta,
            intercept: off,
            log_var: off + 1,
            total: off + 2,
        }
    }
}

/// Partial sums from one chunk of examples.
struct ChunkGrad {
    nll: f64,
    grad: Vec<f64>,
    /// `dNLL/dz` summed over the chunk, per layer and node.
    gate: Vec<Vec<f64>>,
}

fn backprop_chunk(
    model: &HybridModel,
    layout: &Layout,
    x: &Matrix,
    y: &[f64],
    idx: &[usize],
    mask: &MaskSample,
    scale: f64,
) -> ChunkGrad {
    let net = &model.net;
    let depth = net.depth();
    let var = model.noise_var();
    let mut grad = vec![0.0; layout.total];
    let mut gate: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.spec.input]).collect();
    let mut nll = 0.0;

    // per-layer buffers: ungated input a, gated input h, pre-activation s
    let mut a: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.spec.input]).collect();
    let mut h = a.clone();
    let mut s: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.spec.output]).collect();
    let mut d1: Vec<Vec<f64>> = s.clone();
    let mut delta_out: Vec<f64> = Vec::new();
    let mut delta_in: Vec<f64> = Vec::new();

    for &i in idx {
        let xi = x.row(i);
        a[0].copy_from_slice(xi);
        let mut out = 0.0;
        for l in 0..depth {
            let layer = &net.layers[l];
            for (k, hv) in h[l].iter_mut().enumerate() {
                *hv = a[l][k] * mask.gates[l][k];
            }
            for o in 0..layer.spec.output {
                let pre = dot(layer.weights.row(o), &h[l]) + layer.bias[o];
                let (v, dv) = layer.spec.activation.eval_d1(pre);
                s[l][o] = v;
                d1[l][o] = dv;
            }
            if l + 1 < depth {
                a[l + 1].copy_from_slice(&s[l]);
            } else {
                out = s[l][0];
            }
        }
        let pred = model.linear_part(xi) + out;
        let r = y[i] - pred;
        nll += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + r * r / (2.0 * var);
        let dpred = -r / var * scale;
        grad[layout.log_var] += (0.5 - r * r / (2.0 * var)) * scale;
        for (k, xv) in xi.iter().enumerate() {
            grad[layout.beta + k] += dpred * xv;
        }
        grad[layout.intercept] += dpred;

        delta_out.clear();
        delta_out.push(dpred);
        for l in (0..depth).rev() {
            let layer = &net.layers[l];
            let n_in = layer.spec.input;
            let n_out = layer.spec.output;
            delta_in.clear();
            delta_in.resize(n_in, 0.0);
            for o in 0..n_out {
                let ds = delta_out[o] * d1[l][o];
                if ds == 0.0 {
                    continue;
                }
                grad[layout.b[l] + o] += ds;
                let wrow = layer.weights.row(o);
                let gw = &mut grad[layout.w[l] + o * n_in..layout.w[l] + (o + 1) * n_in];
                for k in 0..n_in {
                    gw[k] += ds * h[l][k];
                    delta_in[k] += ds * wrow[k];
                }
            }
            // delta_in is dL/dh; split into gate and upstream parts
            for k in 0..n_in {
                gate[l][k] += delta_in[k] * a[l][k];
                delta_in[k] *= mask.gates[l][k];
            }
            std::mem::swap(&mut delta_out, &mut delta_in);
        }
    }
    ChunkGrad {
        nll: nll * scale,
        grad,
        gate,
    }
}

/// Fold KL and main-effect penalty gradients, and convert gate gradients of a
/// relaxed mask into dropout-logit gradients.
fn add_regularizer_grads(
    model: &HybridModel,
    layout: &Layout,
    n_total: usize,
    beta_penalty: f64,
    grad: &mut [f64],
) -> f64 {
    let net = &model.net;
    let inv_n = 1.0 / n_total as f64;
    let l2 = net.length_scale * net.length_scale;
    for (li, layer) in net.layers.iter().enumerate() {
        let n_in = layer.spec.input;
        for k in 0..n_in {
            let p = layer.drop_prob(k);
            let keep = 1.0 - p;
            for o in 0..layer.spec.output {
                grad[layout.w[li] + o * n_in + k] += l2 * keep * layer.weights[(o, k)] * inv_n;
            }
            // d/dp [ l²(1-p)/2 ‖w‖² - H(p) ] = -l²‖w‖²/2 + ln(p/(1-p))
            let dp = -0.5 * l2 * layer.node_weight_sq(k) + logit(p);
            grad[layout.logit[li] + k] += dp * layer.drop_prob_grad(k) * inv_n;
        }
    }
    for (k, b) in model.beta.iter().enumerate() {
        grad[layout.beta + k] += 2.0 * beta_penalty * b;
    }
    grad[layout.intercept] += 2.0 * beta_penalty * model.intercept;
    net.kl_regularizer() * inv_n
        + beta_penalty * (model.beta.iter().map(|b| b * b).sum::<f64>() + model.intercept.powi(2))
}

fn gate_logit_grads(net: &ConcreteDropoutMLP, mask: &MaskSample, layout: &Layout, gate: &[Vec<f64>], grad: &mut [f64]) {
    let t = net.temperature;
    for (li, layer) in net.layers.iter().enumerate() {
        for k in 0..layer.spec.input {
            let z = mask.gates[li][k];
            let unclamped = if layer.drop_prob_grad(k) > 0.0 { 1.0 } else { 0.0 };
            // dz/dlogit = -z(1-z)/t through the concrete relaxation
            grad[layout.logit[li] + k] += gate[li][k] * (-z * (1.0 - z) / t) * unclamped;
        }
    }
}

fn regularizer_value(model: &HybridModel, n_total: usize, beta_penalty: f64) -> f64 {
    model.net.kl_regularizer() / n_total as f64
        + beta_penalty * (model.beta.iter().map(|b| b * b).sum::<f64>() + model.intercept.powi(2))
}

/// Minibatch negative ELBO: mean Gaussian NLL under `mask`, plus KL/N and the
/// main-effect penalty.
pub fn negative_elbo(
    model: &HybridModel,
    x: &Matrix,
    y: &[f64],
    mask: &MaskSample,
    n_total: usize,
    beta_penalty: f64,
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_dim(x.rows(), y.len())?;
    let var = model.noise_var();
    let mut nll = 0.0;
    for i in 0..y.len() {
        let r = y[i] - model.forward(x.row(i), mask)?;
        nll += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + r * r / (2.0 * var);
    }
    let loss = nll / y.len() as f64 + regularizer_value(model, n_total.max(1), beta_penalty);
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            detail: format!("non-finite loss {loss}"),
        });
    }
    Ok(loss)
}

/// Loss and flat gradient (in [`HybridModel::params`] order) for the rows
/// `idx`, averaging over the relaxed masks built from `noises`.
pub fn negative_elbo_grad(
    model: &HybridModel,
    x: &Matrix,
    y: &[f64],
    idx: &[usize],
    noises: &[Vec<Vec<f64>>],
    n_total: usize,
    beta_penalty: f64,
    chunk_size: usize,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    if idx.is_empty() || noises.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let layout = Layout::of(model);
    let mut grad = vec![0.0; layout.total];
    let mut loss = 0.0;
    let per_mask = 1.0 / noises.len() as f64;
    let scale = per_mask / idx.len() as f64;
    for noise in noises {
        let mask = model.net.relaxed_mask(noise.clone());
        let chunks: Vec<&[usize]> = idx.chunks(chunk_size.max(1)).collect();
        let parts = exec.map(chunks.len(), |c| backprop_chunk(model, &layout, x, y, chunks[c], &mask, scale));
        let mut gate: Vec<Vec<f64>> = model.net.layers.iter().map(|l| vec![0.0; l.spec.input]).collect();
        for part in parts {
            loss += part.nll;
            for (g, v) in grad.iter_mut().zip(&part.grad) {
                *g += v;
            }
            for (acc, v) in gate.iter_mut().zip(&part.gate) {
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        gate_logit_grads(&model.net, &mask, &layout, &gate, &mut grad);
    }
    loss += add_regularizer_grads(model, &layout, n_total.max(1), beta_penalty, &mut grad);
    Ok((loss, grad))
}

/// Fraction of targets inside `mean ± 2·std`.
pub fn coverage_from_intervals(means: &[f64], stds: &[f64], y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("held-out targets"));
    }
    check_dim(y.len(), means.len())?;
    check_dim(y.len(), stds.len())?;
    let inside = y
        .iter()
        .zip(means.iter().zip(stds))
        .filter(|(t, (m, s))| (**t - **m).abs() <= 2.0 * **s)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// Predictive means and standard deviations for every row of `x`.
pub fn predict_batch(model: &HybridModel, x: &Matrix, k: usize, rng: RngStream, exec: Exec) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = exec.try_map(x.rows(), |i| model.predictive_distribution(x.row(i), k, rng.child(i as u64)))?;
    Ok(out.into_iter().map(|(m, v)| (m, v.sqrt())).unzip())
}

/// Empirical coverage of the 95% predictive interval on held-out data.
pub fn calibration_coverage(model: &HybridModel, heldout: &Dataset, k: usize, rng: RngStream) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out dataset"));
    }
    if k < 100 {
        return Err(Error::invalid("calibration needs at least 100 mask samples"));
    }
    let (m, s) = predict_batch(model, &heldout.x, k, rng, Exec::default())?;
    coverage_from_intervals(&m, &s, &heldout.y)
}

fn rmse_and_coverage(model: &HybridModel, data: &Dataset, k: usize, rng: RngStream, exec: Exec) -> Result<(f64, f64)> {
    let (m, s) = predict_batch(model, &data.x, k, rng, exec)?;
    let mse = m.iter().zip(&data.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / data.len() as f64;
    Ok((mse.sqrt(), coverage_from_intervals(&m, &s, &data.y)?))
}

/// Build an untrained hybrid model for `input` features.
pub fn init_model(input: usize, config: &TrainConfig) -> Result<HybridModel> {
    config.validate()?;
    let mut rng = RngStream::with_stream(config.seed, 1).rng();
    let net = ConcreteDropoutMLP::new(
        input,
        &config.hidden,
        config.activation,
        config.temperature,
        config.length_scale,
        config.init_drop_prob,
        &mut rng,
    )?;
    Ok(HybridModel::new(net))
}

/// Least-squares start for the main-effects head and the noise level.
pub fn init_linear_head(model: &mut HybridModel, data: &Dataset) -> Result<()> {
    check_dim(model.input_dim(), data.dim())?;
    let n = data.len() as f64;
    let d = data.dim();
    let xm: Vec<f64> = (0..d).map(|j| data.x.column(j).iter().sum::<f64>() / n).collect();
    let ym = data.y.iter().sum::<f64>() / n;
    let mut xc = data.x.clone();
    for r in 0..xc.rows() {
        for (v, m) in xc.row_mut(r).iter_mut().zip(&xm) {
            *v -= m;
        }
    }
    let mut g = xc.gram();
    for j in 0..d {
        g[(j, j)] += 1e-8 * n;
    }
    let yc: Vec<f64> = data.y.iter().map(|v| v - ym).collect();
    let mut rhs = vec![0.0; d];
    xc.tr_matvec_into(&yc, &mut rhs);
    let beta = g.solve_spd(&rhs)?;
    let intercept = ym - dot(&beta, &xm);
    let resid = (0..data.len())
        .map(|i| (data.y[i] - dot(&beta, data.x.row(i)) - intercept).powi(2))
        .sum::<f64>()
        / n;
    model.beta = beta;
    model.intercept = intercept;
    model.log_noise_var = resid.max(1e-4).ln();
    Ok(())
}

/// Fixed relaxed noise for validation so epochs are compared on common draws.
fn validation_noises(net: &ConcreteDropoutMLP, seed: u64, count: usize) -> Vec<Vec<Vec<f64>>> {
    let mut r = RngStream::with_stream(seed, 2).rng();
    (0..count)
        .map(|_| {
            net.layers
                .iter()
                .map(|l| (0..l.spec.input).map(|_| r.random::<f64>()).collect())
                .collect()
        })
        .collect()
}

const VAL_MASKS: usize = 4;
const CURVE_MC: usize = 10;
const CURVE_MAX_ROWS: usize = 1000;

fn validation_loss(model: &HybridModel, val: &Dataset, noises: &[Vec<Vec<f64>>], n_total: usize, beta_penalty: f64) -> Result<f64> {
    let mut total = 0.0;
    for noise in noises {
        let mask = model.net.relaxed_mask(noise.clone());
        total += negative_elbo(model, &val.x, &val.y, &mask, n_total, beta_penalty)?;
    }
    Ok(total / noises.len() as f64)
}

/// Train `model` in place on standardized data. The model ends at the best
/// validation epoch (epoch 0 = initial parameters). `observer` sees every
/// epoch's record and the parameters at that epoch.
pub fn fit_with_observer(
    model: &mut HybridModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    exec: Exec,
    mut observer: impl FnMut(&EpochRecord, &HybridModel),
) -> Result<(FitReport, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation data"));
    }
    check_dim(model.input_dim(), train.dim())?;
    check_dim(model.input_dim(), val.dim())?;
    let n = train.len();
    let root = RngStream::new(config.seed);
    let val_noises = validation_noises(&model.net, config.seed, VAL_MASKS);
    let curve_rows: Vec<usize> = (0..val.len().min(CURVE_MAX_ROWS)).collect();
    let curve_val = val.select_rows(&curve_rows);

    let initial_val = validation_loss(model, val, &val_noises, n, config.beta_penalty)?;
    let (rmse0, cov0) = rmse_and_coverage(model, &curve_val, CURVE_MC, root.child(u64::MAX), exec)?;
    let rec0 = EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_loss: initial_val,
        rmse: rmse0,
        coverage: cov0,
    };
    observer(&rec0, model);
    let mut curve = vec![rec0];
    let mut best = (initial_val, 0usize, model.clone());
    let mut adam = AdamState::new(model.num_params(), config.learning_rate);
    let mut params = model.params();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stale = 0usize;
    let mut last_train = f64::NAN;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        let mut r = root.child(epoch as u64).rng();
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let noises: Vec<Vec<Vec<f64>>> = (0..config.mc_samples)
                .map(|_| {
                    model
                        .net
                        .layers
                        .iter()
                        .map(|l| (0..l.spec.input).map(|_| r.random::<f64>()).collect())
                        .collect()
                })
                .collect();
            let (loss, grad) = negative_elbo_grad(
                model,
                &train.x,
                &train.y,
                batch,
                &noises,
                n,
                config.beta_penalty,
                config.chunk_size,
                exec,
            )?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss {loss}"),
                });
            }
            adam.step(&mut params, &grad)?;
            model.set_params(&params)?;
            sum += loss;
            batches += 1;
        }
        last_train = sum / batches as f64;
        let val_loss = validation_loss(model, val, &val_noises, n, config.beta_penalty)
            .map_err(|e| Error::Divergence {
                epoch,
                detail: e.to_string(),
            })?;
        let (rmse, coverage) = rmse_and_coverage(model, &curve_val, CURVE_MC, root.child(u64::MAX), exec)?;
        let rec = EpochRecord {
            epoch,
            train_loss: last_train,
            val_loss,
            rmse,
            coverage,
        };
        observer(&rec, model);
        curve.push(rec);
        epochs_run = epoch;
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.1);
                break;
            }
        }
    }
    *model = best.2;
    let (test_rmse, coverage_95) = rmse_and_coverage(model, val, config.eval_mc_samples, root.child(u64::MAX - 1), exec)?;
    Ok((
        FitReport {
            train_loss: last_train,
            val_loss: best.0,
            initial_val_loss: initial_val,
            test_rmse,
            coverage_95,
            epochs: epochs_run,
            best_epoch: best.1,
        },
        curve,
    ))
}

pub fn fit(model: &mut HybridModel, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<FitReport> {
    Ok(fit_with_observer(model, train, val, config, Exec::default(), |_, _| {})?.0)
}

/// Result of the raw-data training pipeline.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub report: FitReport,
    pub curve: Vec<EpochRecord>,
}

/// Standardize features and target on `train`, initialise, fit, and report
/// RMSE (raw target units) and coverage on `test` (or `val` if absent).
pub fn train_pipeline(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    exec: Exec,
    observer: impl FnMut(&EpochRecord, &HybridModel),
) -> Result<TrainOutcome> {
    let x_scaler = Standardizer::fit(&train.x)?;
    let y_scaler = Standardizer::fit_vec(&train.y)?;
    let prep = |d: &Dataset| -> Result<Dataset> {
        let x = x_scaler.apply(&d.x)?;
        let y = d.y.iter().map(|v| y_scaler.apply_scalar(*v)).collect();
        Ok(Dataset {
            x,
            y,
            ..d.clone()
        })
    };
    let (tr, va) = (prep(train)?, prep(val)?);
    let mut model = init_model(train.dim(), config)?;
    init_linear_head(&mut model, &tr)?;
    let (mut report, curve) = fit_with_observer(&mut model, &tr, &va, config, exec, observer)?;
    let held = match test {
        Some(t) => prep(t)?,
        None => va,
    };
    let (rmse, cov) = rmse_and_coverage(&model, &held, config.eval_mc_samples, RngStream::with_stream(config.seed, 3), exec)?;
    report.test_rmse = rmse * y_scaler.stds[0];
    report.coverage_95 = cov;
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            feature_names: train.feature_names.clone(),
            x_scaler,
            y_scaler,
            model,
            config_digest: config.digest(),
            seed: config.seed,
            tool_version: crate::VERSION.into(),
        },
        report,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::MaskMode;

    fn small_model(seed: u64) -> HybridModel {
        let mut r = RngStream::new(seed).rng();
        let mut net = ConcreteDropoutMLP::new(2, &[3], Activation::Tanh, 0.5, 0.7, 0.3, &mut r).unwrap();
        // spread dropout probabilities so every logit gradient is exercised
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (k, lg) in layer.drop_logits.iter_mut().enumerate() {
                *lg = -1.5 + 0.4 * (k + l) as f64;
            }
            for (o, b) in layer.bias.iter_mut().enumerate() {
                *b = 0.1 * (o as f64 + 1.0);
            }
        }
        let mut m = HybridModel::new(net);
        m.beta = vec![0.4, -0.3];
        m.intercept = 0.2;
        m.log_noise_var = -0.5;
        m
    }

    fn toy_data() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[
            vec![0.5, -1.0],
            vec![-0.3, 0.8],
            vec![1.2, 0.1],
            vec![-0.9, -0.4],
            vec![0.0, 1.5],
        ])
        .unwrap();
        let y = vec![0.3, -1.0, 2.0, 0.1, 0.7];
        (x, y)
    }

    #[test]
    fn perfect_prediction_nll_closed_form() {
        let m = small_model(1);
        let (x, _) = toy_data();
        let mask = MaskSample::ones(&m.net);
        let y: Vec<f64> = (0..x.rows()).map(|i| m.forward(x.row(i), &mask).unwrap()).collect();
        let loss = negative_elbo(&m, &x, &y, &mask, 100, 1e-6).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI * m.noise_var()).ln() + regularizer_value(&m, 100, 1e-6);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_model_matches_constant_predictor() {
        let mut m = small_model(2);
        for l in &mut m.net.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        m.beta = vec![0.0; 2];
        m.intercept = 0.0;
        m.log_noise_var = 0.0;
        let (x, _) = toy_data();
        let y = vec![0.0; 5];
        let mask = m.net.sample_mask(&mut RngStream::new(3).rng(), MaskMode::Relaxed);
        let loss = negative_elbo(&m, &x, &y, &mask, 10, 0.0).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI).ln() + m.net.kl_regularizer() / 10.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let model = small_model(4);
        let (x, y) = toy_data();
        let idx: Vec<usize> = (0..x.rows()).collect();
        let noise: Vec<Vec<f64>> = vec![vec![0.35, 0.8], vec![0.6, 0.2, 0.45]];
        let loss_at = |m: &HybridModel| {
            let mask = m.net.relaxed_mask(noise.clone());
            negative_elbo(m, &x, &y, &mask, 7, 0.05).unwrap()
        };
        let (l0, g) = negative_elbo_grad(&model, &x, &y, &idx, &[noise.clone()], 7, 0.05, 2, Exec::Sequential).unwrap();
        assert!((l0 - loss_at(&model)).abs() < 1e-12);
        let p0 = model.params();
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut m = model.clone();
            let mut p = p0.clone();
            p[i] += h;
            m.set_params(&p).unwrap();
            let up = loss_at(&m);
            p[i] -= 2.0 * h;
            m.set_params(&p).unwrap();
            let dn = loss_at(&m);
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn chunking_and_exec_do_not_change_gradients() {
        let model = small_model(5);
        let (x, y) = toy_data();
        let idx: Vec<usize> = (0..x.rows()).collect();
        let noise = vec![vec![0.3, 0.9], vec![0.2, 0.5, 0.7]];
        let a = negative_elbo_grad(&model, &x, &y, &idx, &[noise.clone()], 7, 0.0, 2, Exec::Sequential).unwrap();
        let b = negative_elbo_grad(&model, &x, &y, &idx, &[noise], 7, 0.0, 2, Exec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coverage_limits() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(coverage_from_intervals(&[0.0; 3], &[0.0; 3], &y).unwrap(), 0.0);
        assert_eq!(coverage_from_intervals(&[0.0; 3], &[f64::INFINITY; 3], &y).unwrap(), 1.0);
        assert!(coverage_from_intervals(&[], &[], &[]).is_err());
    }

    #[test]
    fn oracle_gaussian_predictor_is_calibrated() {
        use rand_distr::{Distribution, Normal};
        let mut r = RngStream::new(11).rng();
        let n = 5000;
        let means: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        let stds: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64 * 0.1).collect();
        let y: Vec<f64> = means
            .iter()
            .zip(&stds)
            .map(|(m, s)| Normal::new(*m, *s).unwrap().sample(&mut r))
            .collect();
        let c = coverage_from_intervals(&means, &stds, &y).unwrap();
        assert!((c - 0.954).abs() < 0.02, "coverage {c}");
    }

    #[test]
    fn calibration_coverage_preconditions() {
        let m = small_model(6);
        let (x, y) = toy_data();
        let d = Dataset::unnamed(x, y).unwrap();
        assert!(calibration_coverage(&m, &d, 50, RngStream::new(1)).is_err());
        let c = calibration_coverage(&m, &d, 100, RngStream::new(1)).unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = 1.5;
        assert!(c.validate().is_err());
        c = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"epochz": 3}"#);
        assert!(parsed.is_err());
    }
}
