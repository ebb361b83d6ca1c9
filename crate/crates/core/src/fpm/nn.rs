//! Two-output pattern-recognition network with evidence-based regularization.
//!
//! One tanh hidden layer, soft-max output (index 0 = fault, 1 = normal).
//! Training minimizes `beta * E_D + alpha * E_W` with `E_D` the summed
//! cross-entropy and `E_W = ½ Σ w²` over all weights and biases. Every
//! `evidence_interval` epochs `alpha` and `beta` are re-estimated from the
//! Gauss-Newton Hessian:
//!
//! ```text
//! gamma = W - alpha * tr(H^-1)
//! alpha = gamma / (2 E_W)
//! beta  = (N - gamma) / (2 E_D)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HYPER_MIN: f64 = 1e-6;
const HYPER_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub evidence_interval: usize,
    pub grad_tol: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: 10,
            max_epochs: 400,
            evidence_interval: 10,
            grad_tol: 1e-6,
            alpha_init: 0.01,
            beta_init: 1.0,
        }
    }
}

/// Training rows with their fault flag.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub inputs: &'a [Vec<f64>],
    pub is_fault: &'a [bool],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub n_inputs: usize,
    pub n_hidden: usize,
    /// `n_hidden × n_inputs`, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// `2 × n_hidden`, row-major; row 0 is the fault output.
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    #[serde(default)]
    pub class_id: u32,
    #[serde(default)]
    pub epochs_run: usize,
}

impl NnModel {
    pub fn zeros(n_inputs: usize, n_hidden: usize) -> Self {
        NnModel {
            n_inputs,
            n_hidden,
            hidden_weights: vec![0.0; n_hidden * n_inputs],
            hidden_bias: vec![0.0; n_hidden],
            output_weights: vec![0.0; 2 * n_hidden],
            output_bias: vec![0.0; 2],
            alpha: 0.01,
            beta: 1.0,
            seed: 0,
            class_id: 0,
            epochs_run: 0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_inputs + 1) + 2 * (self.n_hidden + 1)
    }

    /// Flat parameter vector: hidden weights, hidden bias, output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(&self.hidden_weights);
        p.extend(&self.hidden_bias);
        p.extend(&self.output_weights);
        p.extend(&self.output_bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter count");
        let (h, n) = (self.n_hidden, self.n_inputs);
        let (a, rest) = p.split_at(h * n);
        let (b, rest) = rest.split_at(h);
        let (c, d) = rest.split_at(2 * h);
        self.hidden_weights = a.to_vec();
        self.hidden_bias = b.to_vec();
        self.output_weights = c.to_vec();
        self.output_bias = d.to_vec();
    }

    fn shape(&self) -> Shape {
        Shape {
            n_in: self.n_inputs,
            n_hidden: self.n_hidden,
        }
    }

    /// `(p_fault, p_normal)`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.n_inputs {
            return Err(Error::InvalidInput(format!(
                "expected {} inputs, got {}",
                self.n_inputs,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network input".into()));
        }
        let (_, p) = self.shape().forward(&self.params(), x);
        Ok((p[0], p[1]))
    }

    /// Predicted fault; a 0.5 tie counts as normal.
    pub fn predicts_fault(&self, x: &[f64]) -> Result<bool> {
        let (pf, pn) = self.predict(x)?;
        Ok(pf > pn)
    }

    /// `beta * E_D + alpha * E_W` at the current parameters.
    pub fn objective(&self, data: TrainData<'_>) -> f64 {
        let (ed, ew) = self.shape().errors(&self.params(), data);
        self.beta * ed + self.alpha * ew
    }

    /// Analytic gradient of [`NnModel::objective`] with respect to [`NnModel::params`].
    pub fn gradient(&self, data: TrainData<'_>) -> Vec<f64> {
        self.shape().gradient(&self.params(), data, self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    n_in: usize,
    n_hidden: usize,
}

impl Shape {
    fn n_params(&self) -> usize {
        self.n_hidden * (self.n_in + 1) + 2 * (self.n_hidden + 1)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + 2 * self.n_hidden;
        (b1, w2, b2)
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, [f64; 2]) {
        let (b1, w2, b2) = self.offsets();
        let z: Vec<f64> = (0..self.n_hidden)
            .map(|j| {
                let row = &w[j * self.n_in..(j + 1) * self.n_in];
                let a: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[b1 + j];
                a.tanh()
            })
            .collect();
        let mut o = [0.0; 2];
        for (k, ok) in o.iter_mut().enumerate() {
            let row = &w[w2 + k * self.n_hidden..w2 + (k + 1) * self.n_hidden];
            *ok = row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + w[b2 + k];
        }
        let m = o[0].max(o[1]);
        let e0 = (o[0] - m).exp();
        let e1 = (o[1] - m).exp();
        let s = e0 + e1;
        (z, [e0 / s, e1 / s])
    }

    /// `(E_D, E_W)`.
    fn errors(&self, w: &[f64], data: TrainData<'_>) -> (f64, f64) {
        let ed = data
            .inputs
            .iter()
            .zip(data.is_fault)
            .map(|(x, &f)| {
                let (_, p) = self.forward(w, x);
                -(if f { p[0] } else { p[1] }).max(1e-300).ln()
            })
            .sum();
        let ew = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        (ed, ew)
    }

    fn gradient(&self, w: &[f64], data: TrainData<'_>, alpha: f64, beta: f64) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let mut g = vec![0.0; self.n_params()];
        for (x, &f) in data.inputs.iter().zip(data.is_fault) {
            let (z, p) = self.forward(w, x);
            let t = if f { [1.0, 0.0] } else { [0.0, 1.0] };
            let d_out = [p[0] - t[0], p[1] - t[1]];
            for k in 0..2 {
                for j in 0..self.n_hidden {
                    g[w2 + k * self.n_hidden + j] += d_out[k] * z[j];
                }
                g[b2 + k] += d_out[k];
            }
            for j in 0..self.n_hidden {
                let back = d_out[0] * w[w2 + j] + d_out[1] * w[w2 + self.n_hidden + j];
                let d_hidden = back * (1.0 - z[j] * z[j]);
                for i in 0..self.n_in {
                    g[j * self.n_in + i] += d_hidden * x[i];
                }
                g[b1 + j] += d_hidden;
            }
        }
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = beta * *gi + alpha * wi;
        }
        g
    }

    /// Gauss-Newton approximation of the data-term Hessian. With two soft-max
    /// outputs each sample contributes `p0 p1 u uᵀ`, `u = ∂(o0 - o1)/∂w`.
    fn gauss_newton(&self, w: &[f64], data: TrainData<'_>) -> DMatrix<f64> {
        let (b1, w2, b2) = self.offsets();
        let n = self.n_params();
        let mut gn = DMatrix::<f64>::zeros(n, n);
        let mut u = DVector::<f64>::zeros(n);
        for x in data.inputs {
            let (z, p) = self.forward(w, x);
            let c = p[0] * p[1];
            if c == 0.0 {
                continue;
            }
            for j in 0..self.n_hidden {
                let dw = (w[w2 + j] - w[w2 + self.n_hidden + j]) * (1.0 - z[j] * z[j]);
                for i in 0..self.n_in {
                    u[j * self.n_in + i] = dw * x[i];
                }
                u[b1 + j] = dw;
                u[w2 + j] = z[j];
                u[w2 + self.n_hidden + j] = -z[j];
            }
            u[b2] = 1.0;
            u[b2 + 1] = -1.0;
            gn.ger(c, &u, &u, 1.0);
        }
        gn
    }
}

/// Trains a network on rows labelled fault / normal.
pub fn train_nn(data: TrainData<'_>, config: &NnConfig, seed: u64) -> Result<NnModel> {
    if data.inputs.len() != data.is_fault.len() {
        return Err(Error::InvalidInput("inputs and labels differ in length".into()));
    }
    let n_fault = data.is_fault.iter().filter(|&&f| f).count();
    if n_fault == 0 || n_fault == data.is_fault.len() {
        return Err(Error::InsufficientData("training set must contain both classes".into()));
    }
    let n_in = data.inputs[0].len();
    if data.inputs.iter().any(|x| x.len() != n_in || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("training inputs must be finite rows of equal length".into()));
    }
    if config.hidden == 0 || config.evidence_interval == 0 {
        return Err(Error::Config("hidden size and evidence interval must be >= 1".into()));
    }

    let shape = Shape {
        n_in,
        n_hidden: config.hidden,
    };
    let n_params = shape.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, w2_off, _) = shape.offsets();
    let mut w: Vec<f64> = (0..n_params)
        .map(|i| {
            let fan_in = if i < w2_off { n_in + 1 } else { config.hidden + 1 };
            rng.random_range(-1.0..1.0) / (fan_in as f64).sqrt()
        })
        .collect();

    let n = data.inputs.len() as f64;
    let mut alpha = config.alpha_init;
    let mut beta = config.beta_init;
    let objective = |w: &[f64], alpha: f64, beta: f64| {
        let (ed, ew) = shape.errors(w, data);
        beta * ed + alpha * ew
    };
    let mut f = objective(&w, alpha, beta);
    let mut g = shape.gradient(&w, data, alpha, beta);
    let mut lr = 1.0 / (beta * n + alpha);
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Numeric("gradient diverged".into()));
        }
        if gnorm < config.grad_tol {
            break;
        }
        let cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - lr * gi).collect();
        let fc = objective(&cand, alpha, beta);
        if fc <= f {
            w = cand;
            f = fc;
            g = shape.gradient(&w, data, alpha, beta);
            lr *= 1.2;
        } else {
            lr *= 0.5;
            if lr < 1e-300 {
                break;
            }
        }

        if (epoch + 1) % config.evidence_interval == 0 {
            if let Some((a, b)) = evidence_update(&shape, &w, data, alpha, beta) {
                lr *= beta / b;
                alpha = a;
                beta = b;
                f = objective(&w, alpha, beta);
                g = shape.gradient(&w, data, alpha, beta);
            }
        }
    }

    let mut model = NnModel::zeros(n_in, config.hidden);
    model.set_params(&w);
    model.alpha = alpha;
    model.beta = beta;
    model.seed = seed;
    model.epochs_run = epochs_run;
    Ok(model)
}

fn evidence_update(shape: &Shape, w: &[f64], data: TrainData<'_>, alpha: f64, beta: f64) -> Option<(f64, f64)> {
    let n_params = shape.n_params() as f64;
    let (ed, ew) = shape.errors(w, data);
    let mut h = shape.gauss_newton(w, data) * beta;
    for i in 0..h.nrows() {
        h[(i, i)] += alpha;
    }
    let chol = h.cholesky()?;
    let trace_inv = chol.inverse().trace();
    let gamma = (n_params - alpha * trace_inv).clamp(0.0, n_params);
    let n = data.inputs.len() as f64;
    let new_alpha = if ew > 0.0 { gamma / (2.0 * ew) } else { HYPER_MAX };
    let new_beta = if ed > 0.0 { (n - gamma).max(0.0) / (2.0 * ed) } else { HYPER_MAX };
    let clamp = |v: f64| if v.is_finite() { v.clamp(HYPER_MIN, HYPER_MAX) } else { HYPER_MAX };
    Some((clamp(new_alpha), clamp(new_beta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..80 {
            let fault = i % 2 == 0;
            let c = if fault { 2.0 } else { -2.0 };
            x.push((0..11).map(|_| c + rng.random_range(-0.5..0.5)).collect());
            y.push(fault);
        }
        (x, y)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = NnModel::zeros(11, 10);
        assert_eq!(m.n_params(), 142);
        assert_eq!(m.predict(&[0.3; 11]).unwrap(), (0.5, 0.5));
        assert!(!m.predicts_fault(&[0.3; 11]).unwrap());
        assert!(m.predict(&[f64::NAN; 11]).is_err());
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy();
        let data = TrainData { inputs: &x, is_fault: &y };
        let cfg = NnConfig { max_epochs: 200, ..Default::default() };
        let m = train_nn(data, &cfg, 11).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.predicts_fault(xi).unwrap(), yi);
        }
        let (pf, pn) = m.predict(&[2.0; 11]).unwrap();
        assert!(pf > 0.5 && (pf + pn - 1.0).abs() < 1e-9);

        let again = train_nn(data, &cfg, 11).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0; 3]; 4];
        let y = vec![true; 4];
        assert!(train_nn(TrainData { inputs: &x, is_fault: &y }, &NnConfig::default(), 0).is_err());
    }

    #[test]
    fn identical_inputs_give_class_prior() {
        let x = vec![vec![0.4; 11]; 100];
        let y: Vec<bool> = (0..100).map(|i| i < 70).collect();
        let m = train_nn(TrainData { inputs: &x, is_fault: &y }, &NnConfig::default(), 5).unwrap();
        let (pf, _) = m.predict(&x[0]).unwrap();
        assert!((pf - 0.7).abs() < 0.05, "p_fault = {pf}");
    }
}
