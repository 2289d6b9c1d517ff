//! Exact input Hessians of the interaction head for a fixed dropout mask.
//!
//! The Hessian is assembled column by column from Hessian-vector products
//! (forward-mode tangents pushed through one reverse pass), so a full `D × D`
//! matrix costs `D` gradient-sized passes. Only the MLP contributes: the
//! linear head has no curvature.

use crate::bnn::{ConcreteDropoutMLP, HybridModel, MaskSample};
use crate::error::{check_dim, Error, Result};
use crate::math::{dot, Matrix};

/// A point at which to differentiate the subnetwork starting at `layer`.
#[derive(Debug, Clone, Copy)]
pub struct HessianRequest<'a> {
    pub net: &'a ConcreteDropoutMLP,
    pub mask: &'a MaskSample,
    /// 0 = raw inputs; `l > 0` = ungated activations entering layer `l`.
    pub layer: usize,
    pub point: &'a [f64],
}

impl HessianRequest<'_> {
    fn validate(&self) -> Result<()> {
        if self.layer >= self.net.depth() {
            return Err(Error::invalid(format!(
                "layer {} out of range for depth {}",
                self.layer,
                self.net.depth()
            )));
        }
        check_dim(self.net.depth(), self.mask.gates.len())?;
        for (l, g) in self.net.layers.iter().zip(&self.mask.gates) {
            check_dim(l.spec.input, g.len())?;
        }
        check_dim(self.net.width_at(self.layer), self.point.len())
    }
}

/// Forward and reverse quantities shared by all Hessian-vector products at
/// one point.
struct Tape {
    /// first and second activation derivatives per layer
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    /// `∂g/∂a_{l+1}` (gradient w.r.t. each layer's output)
    out_grad: Vec<Vec<f64>>,
    /// `∂g/∂a_layer`
    input_grad: Vec<f64>,
}

fn record(req: &HessianRequest) -> Tape {
    let net = req.net;
    let layers = &net.layers[req.layer..];
    let gates = &req.mask.gates[req.layer..];
    let mut d1 = Vec::with_capacity(layers.len());
    let mut d2 = Vec::with_capacity(layers.len());
    let mut a = req.point.to_vec();
    for (l, z) in layers.iter().zip(gates) {
        let h: Vec<f64> = a.iter().zip(z).map(|(v, g)| v * g).collect();
        let mut next = vec![0.0; l.spec.output];
        let mut e1 = vec![0.0; l.spec.output];
        let mut e2 = vec![0.0; l.spec.output];
        for o in 0..l.spec.output {
            let (v, f1, f2) = l.spec.activation.eval(dot(l.weights.row(o), &h) + l.bias[o]);
            next[o] = v;
            e1[o] = f1;
            e2[o] = f2;
        }
        d1.push(e1);
        d2.push(e2);
        a = next;
    }
    let mut out_grad = vec![Vec::new(); layers.len()];
    let mut delta = vec![1.0];
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        out_grad[i] = delta.clone();
        let ds: Vec<f64> = delta.iter().zip(&d1[i]).map(|(d, f)| d * f).collect();
        let mut back = vec![0.0; l.spec.input];
        l.weights.tr_matvec_into(&ds, &mut back);
        for (b, z) in back.iter_mut().zip(&gates[i]) {
            *b *= z;
        }
        delta = back;
    }
    Tape {
        d1,
        d2,
        out_grad,
        input_grad: delta,
    }
}

/// `H v` at the recorded point.
fn hvp(req: &HessianRequest, tape: &Tape, v: &[f64], tangents: &mut Vec<Vec<f64>>) -> Vec<f64> {
    let layers = &req.net.layers[req.layer..];
    let gates = &req.mask.gates[req.layer..];
    tangents.clear();
    let mut a_dot = v.to_vec();
    for (i, (l, z)) in layers.iter().zip(gates).enumerate() {
        let h_dot: Vec<f64> = a_dot.iter().zip(z).map(|(v, g)| v * g).collect();
        let pre_dot = l.weights.matvec(&h_dot);
        a_dot = pre_dot.iter().zip(&tape.d1[i]).map(|(p, f)| p * f).collect();
        tangents.push(pre_dot);
    }
    let mut delta_dot = vec![0.0];
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        let ds_dot: Vec<f64> = (0..l.spec.output)
            .map(|o| delta_dot[o] * tape.d1[i][o] + tape.out_grad[i][o] * tape.d2[i][o] * tangents[i][o])
            .collect();
        let mut back = vec![0.0; l.spec.input];
        l.weights.tr_matvec_into(&ds_dot, &mut back);
        for (b, z) in back.iter_mut().zip(&gates[i]) {
            *b *= z;
        }
        delta_dot = back;
    }
    delta_dot
}

/// Gradient of the interaction head at the request point.
pub fn input_gradient(req: &HessianRequest) -> Result<Vec<f64>> {
    req.validate()?;
    Ok(record(req).input_grad)
}

/// Input gradient of the full hybrid prediction, optionally including `β`.
pub fn model_input_gradient(model: &HybridModel, x: &[f64], mask: &MaskSample, include_linear: bool) -> Result<Vec<f64>> {
    let mut g = input_gradient(&HessianRequest {
        net: &model.net,
        mask,
        layer: 0,
        point: x,
    })?;
    if include_linear {
        for (gi, b) in g.iter_mut().zip(&model.beta) {
            *gi += b;
        }
    }
    Ok(g)
}

/// Exact symmetrized Hessian of the masked subnetwork at the request point.
pub fn input_hessian(req: &HessianRequest) -> Result<Matrix> {
    req.validate()?;
    let tape = record(req);
    let d = req.point.len();
    let gates = &req.mask.gates[req.layer];
    let mut h = Matrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut scratch = Vec::new();
    for j in 0..d {
        // a dropped input has an identically zero row and column
        if gates[j] == 0.0 {
            continue;
        }
        e[j] = 1.0;
        let col = hvp(req, &tape, &e, &mut scratch);
        e[j] = 0.0;
        h.set_column(j, &col);
    }
    h.symmetrize();
    Ok(h)
}

/// Central-difference Hessian of `f` at `point`, symmetrized.
pub fn fd_hessian_oracle(f: &dyn Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Matrix> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let d = point.len();
    let mut h = Matrix::zeros(d, d);
    let mut x = point.to_vec();
    let f0 = f(&x);
    let eval = |x: &mut Vec<f64>, i: usize, si: f64, j: usize, sj: f64| {
        x[i] += si;
        x[j] += sj;
        let v = f(x);
        x[i] -= si;
        x[j] -= sj;
        v
    };
    for i in 0..d {
        let up = eval(&mut x, i, step, i, 0.0);
        let dn = eval(&mut x, i, -step, i, 0.0);
        h[(i, i)] = (up - 2.0 * f0 + dn) / (step * step);
        for j in (i + 1)..d {
            let pp = eval(&mut x, i, step, j, step);
            let pm = eval(&mut x, i, step, j, -step);
            let mp = eval(&mut x, i, -step, j, step);
            let mm = eval(&mut x, i, -step, j, -step);
            let v = (pp - pm - mp + mm) / (4.0 * step * step);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h.symmetrize();
    Ok(h)
}

/// `max|A - B| / max(1, max|B|)`
pub fn relative_error(analytic: &Matrix, reference: &Matrix) -> f64 {
    let diff = analytic
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / reference.max_abs().max(1.0)
}

/// Write per-point Hessians as `point,i,j,value` rows (upper triangle).
pub fn write_hessian_dump<W: std::io::Write>(mut w: W, hessians: &[Matrix]) -> Result<()> {
    writeln!(w, "point,i,j,value")?;
    for (p, h) in hessians.iter().enumerate() {
        for i in 0..h.rows() {
            for j in i..h.cols() {
                writeln!(w, "{p},{i},{j},{:?}", h[(i, j)])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{DenseLayer, LayerSpec, MaskMode};
    use crate::math::{Activation, RngStream};
    use rand::Rng;

    fn random_net(widths: &[usize], act: Activation, seed: u64) -> ConcreteDropoutMLP {
        let mut r = RngStream::new(seed).rng();
        let mut net = ConcreteDropoutMLP::new(widths[0], &widths[1..widths.len() - 1], act, 0.1, 1e-2, 0.2, &mut r).unwrap();
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        net
    }

    fn head<'a>(net: &'a ConcreteDropoutMLP, mask: &MaskSample) -> impl Fn(&[f64]) -> f64 + 'a {
        let mask = mask.clone();
        move |x: &[f64]| net.forward(x, &mask).unwrap()
    }

    #[test]
    fn linear_single_layer_gradient_is_weights() {
        let w = Matrix::from_rows(&[vec![0.5, -2.0, 3.0]]).unwrap();
        let layer = DenseLayer {
            spec: LayerSpec { input: 3, output: 1, activation: Activation::Identity },
            weights: w,
            bias: vec![0.7],
            drop_logits: vec![0.0; 3],
        };
        let net = ConcreteDropoutMLP::from_layers(vec![layer], 0.1, 1.0).unwrap();
        let ones = MaskSample::ones(&net);
        let req = HessianRequest { net: &net, mask: &ones, layer: 0, point: &[1.0, 2.0, 3.0] };
        assert_eq!(input_gradient(&req).unwrap(), vec![0.5, -2.0, 3.0]);
        assert_eq!(input_hessian(&req).unwrap(), Matrix::zeros(3, 3));
        let off = MaskSample::constant(&net, 0.0);
        let req = HessianRequest { mask: &off, ..req };
        assert_eq!(input_gradient(&req).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn deep_identity_network_has_zero_hessian() {
        let net = random_net(&[4, 6, 5, 1], Activation::Identity, 1);
        let mask = net.sample_mask(&mut RngStream::new(2).rng(), MaskMode::Hard);
        let h = input_hessian(&HessianRequest { net: &net, mask: &mask, layer: 0, point: &[0.3, 1.0, -2.0, 0.1] }).unwrap();
        assert!(h.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn polarization_network_computes_product() {
        // g = ¼(x₁+x₂)² - ¼(x₁-x₂)² = x₁x₂
        let l0 = DenseLayer {
            spec: LayerSpec { input: 2, output: 2, activation: Activation::Square },
            weights: Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap(),
            bias: vec![0.0; 2],
            drop_logits: vec![0.0; 2],
        };
        let l1 = DenseLayer {
            spec: LayerSpec { input: 2, output: 1, activation: Activation::Identity },
            weights: Matrix::from_rows(&[vec![0.25, -0.25]]).unwrap(),
            bias: vec![0.0],
            drop_logits: vec![0.0; 2],
        };
        let net = ConcreteDropoutMLP::from_layers(vec![l0, l1], 0.1, 1.0).unwrap();
        let ones = MaskSample::ones(&net);
        for p in [[0.0, 0.0], [1.5, -0.3], [-2.0, 4.0]] {
            assert!((net.forward(&p, &ones).unwrap() - p[0] * p[1]).abs() < 1e-12);
            let h = input_hessian(&HessianRequest { net: &net, mask: &ones, layer: 0, point: &p }).unwrap();
            assert!((h[(0, 1)] - 1.0).abs() < 1e-12);
            assert!(h[(0, 0)].abs() < 1e-12 && h[(1, 1)].abs() < 1e-12);
        }
    }

    #[test]
    fn fd_oracle_reference_functions() {
        let bilinear = |x: &[f64]| x[0] * x[1];
        let h = fd_hessian_oracle(&bilinear, &[0.7, -1.3], 1e-3).unwrap();
        assert!((h[(0, 1)] - 1.0).abs() < 1e-6);
        let quartic = |x: &[f64]| x[0] * x[0] * x[1] * x[1];
        let h = fd_hessian_oracle(&quartic, &[1.0, 1.0], 1e-3).unwrap();
        assert!((h[(0, 1)] - 4.0).abs() < 1e-5);
        let constant = |_: &[f64]| 3.0;
        assert_eq!(fd_hessian_oracle(&constant, &[1.0, 2.0, 3.0], 1e-3).unwrap(), Matrix::zeros(3, 3));
        assert!(fd_hessian_oracle(&constant, &[1.0], 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = random_net(&[2, 8, 8, 1], Activation::Tanh, 3);
        let ones = MaskSample::ones(&net);
        let f = head(&net, &ones);
        let x = [0.4, -0.6];
        let g = input_gradient(&HessianRequest { net: &net, mask: &ones, layer: 0, point: &x }).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[i] += h;
            dn[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn softplus_hessians_match_oracle() {
        let net = random_net(&[3, 16, 1], Activation::Softplus, 4);
        let mut r = RngStream::new(5).rng();
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let mask = net.sample_mask(&mut r, MaskMode::Hard);
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            let h = input_hessian(&HessianRequest { net: &net, mask: &mask, layer: 0, point: &x }).unwrap();
            let fd = fd_hessian_oracle(&head(&net, &mask), &x, 1e-3).unwrap();
            worst = worst.max(relative_error(&h, &fd));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn hidden_layer_chain_rule() {
        // g(x) = g₁(φ(x)), φ = tanh(W₀(x⊙z₀) + b₀)
        // ∇²g = Jᵀ ∇²g₁ J + Σ_k ∂g₁/∂a_k ∇²φ_k
        let net = random_net(&[3, 5, 1], Activation::Tanh, 6);
        let mask = net.sample_mask(&mut RngStream::new(7).rng(), MaskMode::Hard);
        let x = [0.2, -0.5, 0.9];
        let l0 = &net.layers[0];
        let z0 = &mask.gates[0];
        let h0: Vec<f64> = x.iter().zip(z0).map(|(a, b)| a * b).collect();
        let a1 = net.activations(&x, &mask, 1).unwrap();
        let req1 = HessianRequest { net: &net, mask: &mask, layer: 1, point: &a1 };
        let h1 = input_hessian(&req1).unwrap();
        let g1 = input_gradient(&req1).unwrap();
        let mut jac = Matrix::zeros(5, 3);
        let mut composed = Matrix::zeros(3, 3);
        for k in 0..5 {
            let pre = dot(l0.weights.row(k), &h0) + l0.bias[k];
            let (_, f1, f2) = Activation::Tanh.eval(pre);
            for i in 0..3 {
                jac[(k, i)] = f1 * l0.weights[(k, i)] * z0[i];
            }
            for i in 0..3 {
                for j in 0..3 {
                    composed[(i, j)] += g1[k] * f2 * l0.weights[(k, i)] * z0[i] * l0.weights[(k, j)] * z0[j];
                }
            }
        }
        let jt_h1_j = jac.transpose().matmul(&h1).unwrap().matmul(&jac).unwrap();
        let h_full = input_hessian(&HessianRequest { net: &net, mask: &mask, layer: 0, point: &x }).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let c = composed[(i, j)] + jt_h1_j[(i, j)];
                assert!((c - h_full[(i, j)]).abs() < 1e-12, "({i},{j}) {c} vs {}", h_full[(i, j)]);
            }
        }
    }

    #[test]
    fn request_validation() {
        let net = random_net(&[3, 4, 1], Activation::Tanh, 8);
        let ones = MaskSample::ones(&net);
        assert!(input_hessian(&HessianRequest { net: &net, mask: &ones, layer: 0, point: &[1.0, 2.0] }).is_err());
        assert!(input_hessian(&HessianRequest { net: &net, mask: &ones, layer: 2, point: &[1.0] }).is_err());
        assert!(input_hessian(&HessianRequest { net: &net, mask: &ones, layer: 1, point: &[0.0; 4] }).is_ok());
    }

    #[test]
    fn dump_format() {
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_hessian_dump(&mut buf, &[h]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "point,i,j,value\n0,0,0,1.0\n0,0,1,2.0\n0,1,1,3.0\n");
    }
}
