//! Recurrent actor-critic: token embedding, one GRU layer, linear policy and
//! value heads. Forward and backward passes are written out by hand in f64.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed_dim: 32,
            hidden_dim: 64,
        }
    }
}

/// All trainable tensors, row major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `n_inputs × E`
    pub emb: Vec<f64>,
    /// `3H × E`, gate blocks ordered reset, update, candidate
    pub wx: Vec<f64>,
    /// `3H × H`
    pub wh: Vec<f64>,
    pub bx: Vec<f64>,
    pub bh: Vec<f64>,
    /// `A × H`
    pub wp: Vec<f64>,
    pub bp: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Params {
            emb: z(&other.emb),
            wx: z(&other.wx),
            wh: z(&other.wh),
            bx: z(&other.bx),
            bh: z(&other.bh),
            wp: z(&other.wp),
            bp: z(&other.bp),
            wv: z(&other.wv),
            bv: z(&other.bv),
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 9] {
        [
            &self.emb, &self.wx, &self.wh, &self.bx, &self.bh, &self.wp, &self.bp, &self.wv, &self.bv,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 9] {
        [
            &mut self.emb,
            &mut self.wx,
            &mut self.wh,
            &mut self.bx,
            &mut self.bh,
            &mut self.wp,
            &mut self.bp,
            &mut self.wv,
            &mut self.bv,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    input: usize,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// candidate-block hidden projection `W_hn h + b_hn`
    hn: Vec<f64>,
    h: Vec<f64>,
}

/// Forward pass over a full input sequence.
#[derive(Debug, Clone)]
pub struct Trace {
    steps: Vec<StepCache>,
    pub logits: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Output of one incremental step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_actions: usize,
    config: PolicyConfig,
    pub params: Params,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M x` for a row-major `rows × x.len()` matrix.
fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ g`.
fn matvec_t_add(m: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(m.chunks_exact(cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `M += g xᵀ`.
fn outer_add(m: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(m.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            for (a, b) in row.iter_mut().zip(x) {
                *a += gi * b;
            }
        }
    }
}

impl Policy {
    /// Inputs are the `n_actions` action tokens plus one start token.
    pub fn new(n_actions: usize, config: PolicyConfig, rng: &mut impl Rng) -> Policy {
        assert!(n_actions >= 1 && config.embed_dim >= 1 && config.hidden_dim >= 1);
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let bound = 1.0 / (h as f64).sqrt();
        let mut uniform = |len: usize, scale: f64| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-bound..bound) * scale).collect()
        };
        let wx = uniform(3 * h * e, 1.0);
        let wh = uniform(3 * h * h, 1.0);
        let bx = uniform(3 * h, 1.0);
        let bh = uniform(3 * h, 1.0);
        let wp = uniform(n_actions * h, 0.01);
        let emb = (0..(n_actions + 1) * e)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v
            })
            .collect();
        Policy {
            n_actions,
            config,
            params: Params {
                emb,
                wx,
                wh,
                bx,
                bh,
                wp,
                bp: vec![0.0; n_actions],
                wv: vec![0.0; h],
                bv: vec![0.0],
            },
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn config(&self) -> PolicyConfig {
        self.config
    }

    /// Index of the start-of-sequence input.
    pub fn begin_input(&self) -> usize {
        self.n_actions
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden_dim]
    }

    fn cell(&self, h_prev: &[f64], input: usize) -> StepCache {
        let (e, hd) = (self.config.embed_dim, self.config.hidden_dim);
        let p = &self.params;
        let x = &p.emb[input * e..(input + 1) * e];
        let mut gx = p.bx.clone();
        matvec_add(&p.wx, x, &mut gx);
        let mut gh = p.bh.clone();
        matvec_add(&p.wh, h_prev, &mut gh);
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            r[j] = sigmoid(gx[j] + gh[j]);
            z[j] = sigmoid(gx[hd + j] + gh[hd + j]);
            n[j] = (gx[2 * hd + j] + r[j] * gh[2 * hd + j]).tanh();
            h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
        }
        StepCache {
            input,
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            hn: gh[2 * hd..].to_vec(),
            h,
        }
    }

    fn heads(&self, h: &[f64]) -> (Vec<f64>, f64) {
        let p = &self.params;
        let mut logits = p.bp.clone();
        matvec_add(&p.wp, h, &mut logits);
        let value = p.bv[0] + p.wv.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        (logits, value)
    }

    /// Consumes one input token from hidden state `hidden`.
    pub fn step(&self, hidden: &[f64], input: usize) -> StepOutput {
        let cache = self.cell(hidden, input);
        let (logits, value) = self.heads(&cache.h);
        StepOutput {
            hidden: cache.h,
            logits,
            value,
        }
    }

    /// Runs the whole input sequence from the zero state.
    pub fn forward(&self, inputs: &[usize]) -> Trace {
        let mut h = self.initial_hidden();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut logits = Vec::with_capacity(inputs.len());
        let mut values = Vec::with_capacity(inputs.len());
        for &input in inputs {
            let cache = self.cell(&h, input);
            let (l, v) = self.heads(&cache.h);
            h = cache.h.clone();
            steps.push(cache);
            logits.push(l);
            values.push(v);
        }
        Trace { steps, logits, values }
    }

    /// Accumulates into `grads` the gradient of `Σ_t dlogits_t·logits_t + dvalues_t·values_t`.
    pub fn backward(&self, trace: &Trace, dlogits: &[Vec<f64>], dvalues: &[f64], grads: &mut Params) {
        let (e, hd) = (self.config.embed_dim, self.config.hidden_dim);
        let p = &self.params;
        let mut dh_next = vec![0.0; hd];
        let mut dgx = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        let mut dx = vec![0.0; e];
        for t in (0..trace.steps.len()).rev() {
            let c = &trace.steps[t];
            let mut dh = dh_next.clone();
            // heads
            outer_add(&mut grads.wp, &dlogits[t], &c.h);
            for (g, d) in grads.bp.iter_mut().zip(&dlogits[t]) {
                *g += d;
            }
            matvec_t_add(&p.wp, &dlogits[t], &mut dh);
            let dv = dvalues[t];
            if dv != 0.0 {
                grads.bv[0] += dv;
                for j in 0..hd {
                    grads.wv[j] += dv * c.h[j];
                    dh[j] += dv * p.wv[j];
                }
            }
            // GRU cell
            let mut dh_prev = vec![0.0; hd];
            for j in 0..hd {
                let dn = dh[j] * (1.0 - c.z[j]);
                let dz = dh[j] * (c.h_prev[j] - c.n[j]);
                dh_prev[j] = dh[j] * c.z[j];
                let dn_pre = dn * (1.0 - c.n[j] * c.n[j]);
                let dr = dn_pre * c.hn[j];
                let dr_pre = dr * c.r[j] * (1.0 - c.r[j]);
                let dz_pre = dz * c.z[j] * (1.0 - c.z[j]);
                dgx[j] = dr_pre;
                dgh[j] = dr_pre;
                dgx[hd + j] = dz_pre;
                dgh[hd + j] = dz_pre;
                dgx[2 * hd + j] = dn_pre;
                dgh[2 * hd + j] = dn_pre * c.r[j];
            }
            let x = &p.emb[c.input * e..(c.input + 1) * e];
            outer_add(&mut grads.wx, &dgx, x);
            outer_add(&mut grads.wh, &dgh, &c.h_prev);
            for k in 0..3 * hd {
                grads.bx[k] += dgx[k];
                grads.bh[k] += dgh[k];
            }
            dx.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&p.wx, &dgx, &mut dx);
            for (g, d) in grads.emb[c.input * e..(c.input + 1) * e].iter_mut().zip(&dx) {
                *g += d;
            }
            matvec_t_add(&p.wh, &dgh, &mut dh_prev);
            dh_next = dh_prev;
        }
    }
}

/// Log-probabilities of the softmax restricted to `mask`; masked entries are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { l - log_z } else { f64::NEG_INFINITY })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Params,
    v: Params,
    t: u64,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
        }
    }
}
