//! The learnable noise approximator: a small MLP over
//! `concat(x_t, time_embed(t), class_embed(c))` with tanh hidden layers,
//! analytic reverse-mode gradients, Adam/SGD steps, and a flat parameter
//! view for checkpointing and weight-distance metrics.
//!
//! The class embedding table carries one extra row (index `num_classes`)
//! for the unconditional null class.

use crate::error::{Error, Result};
use crate::mathcore::RngState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    /// Sinusoidal time embedding width (must be even).
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
    pub num_classes: usize,
    /// Largest timestep the model is conditioned on; embeddings use t / T.
    pub max_timestep: usize,
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim + self.class_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_embed_dim % 2 != 0 || self.time_embed_dim == 0 {
            return Err(Error::InvalidConfig("time_embed_dim must be even and positive".into()));
        }
        if self.data_dim == 0 || self.num_classes == 0 || self.max_timestep == 0 {
            return Err(Error::InvalidConfig("data_dim, num_classes, max_timestep must be positive".into()));
        }
        Ok(())
    }

    /// Total number of learnable scalars (layer weights/biases plus the
    /// class-embedding table with its null row).
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.input_dim();
        for &h in &self.hidden {
            n += fan_in * h + h;
            fan_in = h;
        }
        n += fan_in * self.data_dim + self.data_dim;
        n + (self.num_classes + 1) * self.class_embed_dim
    }
}

/// One fully-connected layer, weights in row-major `[out][in]` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.w[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = self.b[i];
            for (wij, xj) in row.iter().zip(x) {
                acc += wij * xj;
            }
            out.push(acc);
        }
    }
}

/// All learnable weights of the denoiser. Hidden activations are tanh, the
/// output layer is linear with dimension `data_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub cfg: DenoiserConfig,
    pub layers: Vec<Dense>,
    /// (num_classes + 1) x class_embed_dim, last row is the null class.
    pub class_embed: Vec<f64>,
}

/// Gradients, structurally congruent to [`DenoiserParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub layers: Vec<Dense>,
    pub class_embed: Vec<f64>,
}

impl DenoiserParams {
    /// Xavier-style random initialization.
    pub fn init(cfg: DenoiserConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut fan_in = cfg.input_dim();
        let dims: Vec<usize> = cfg.hidden.iter().copied().chain([cfg.data_dim]).collect();
        for out_dim in dims {
            let std = (2.0 / (fan_in + out_dim) as f64).sqrt();
            let w = (0..fan_in * out_dim).map(|_| rng.normal() * std).collect();
            layers.push(Dense { w, b: vec![0.0; out_dim], in_dim: fan_in, out_dim });
            fan_in = out_dim;
        }
        let class_embed = (0..(cfg.num_classes + 1) * cfg.class_embed_dim)
            .map(|_| rng.normal() * 0.5)
            .collect();
        Ok(Self { cfg, layers, class_embed })
    }

    /// All-zero parameters (useful as a degenerate test double).
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut fan_in = cfg.input_dim();
        let dims: Vec<usize> = cfg.hidden.iter().copied().chain([cfg.data_dim]).collect();
        for out_dim in dims {
            layers.push(Dense::zeros(fan_in, out_dim));
            fan_in = out_dim;
        }
        let class_embed = vec![0.0; (cfg.num_classes + 1) * cfg.class_embed_dim];
        Ok(Self { cfg, layers, class_embed })
    }

    fn embed_row(&self, c: Option<usize>) -> Result<usize> {
        match c {
            Some(c) if c < self.cfg.num_classes => Ok(c),
            Some(c) => Err(Error::UnknownClass { class: c, num_classes: self.cfg.num_classes }),
            None => Ok(self.cfg.num_classes),
        }
    }

    fn class_embedding(&self, row: usize) -> &[f64] {
        let d = self.cfg.class_embed_dim;
        &self.class_embed[row * d..(row + 1) * d]
    }

    fn build_input(&self, x: &[f64], t: usize, c: Option<usize>) -> Result<Vec<f64>> {
        if x.len() != self.cfg.data_dim {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} vs data_dim {}",
                x.len(),
                self.cfg.data_dim
            )));
        }
        if t < 1 || t > self.cfg.max_timestep {
            return Err(Error::TimestepOutOfRange { t, t_max: self.cfg.max_timestep });
        }
        let row = self.embed_row(c)?;
        let mut input = Vec::with_capacity(self.cfg.input_dim());
        input.extend_from_slice(x);
        time_embedding(t, self.cfg.max_timestep, self.cfg.time_embed_dim, &mut input);
        input.extend_from_slice(self.class_embedding(row));
        Ok(input)
    }

    /// Deterministic forward pass. Returns the noise prediction and each
    /// hidden layer's post-activation (the attachment points for BlindSpot).
    pub fn forward(&self, x: &[f64], t: usize, c: Option<usize>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (out, cache) = self.forward_cached(x, t, c)?;
        Ok((out, cache.post))
    }

    pub(crate) fn forward_cached(
        &self,
        x: &[f64],
        t: usize,
        c: Option<usize>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let input = self.build_input(x, t, c)?;
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = input.clone();
        let mut buf = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut buf);
            if l < last {
                for v in buf.iter_mut() {
                    *v = v.tanh();
                }
                post.push(buf.clone());
            }
            std::mem::swap(&mut cur, &mut buf);
        }
        Ok((cur, ForwardCache { input, post }))
    }

    /// Flat parameter vector: layers in order (weights row-major, then
    /// biases), then the class-embedding table row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cfg.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.class_embed);
        out
    }

    /// Rebuilds parameters from the [`flatten`](Self::flatten) ordering.
    pub fn from_flat(cfg: DenoiserConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != cfg.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat length {} vs param count {}",
                flat.len(),
                cfg.param_count()
            )));
        }
        let mut p = DenoiserParams::zeros(cfg)?;
        let mut i = 0;
        for l in p.layers.iter_mut() {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        p.class_embed.copy_from_slice(&flat[i..]);
        Ok(p)
    }

    pub fn congruent_with(&self, other: &DenoiserParams) -> bool {
        self.cfg == other.cfg
    }
}

/// Sinusoidal time embedding: sin/cos pairs of `(t / T) * omega_k` with
/// geometrically spaced frequencies from 1 to 1000.
fn time_embedding(t: usize, t_max: usize, dim: usize, out: &mut Vec<f64>) {
    let half = dim / 2;
    let tau = t as f64 / t_max as f64;
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let omega = 1000.0_f64.powf(exponent);
        out.push((tau * omega).sin());
        out.push((tau * omega).cos());
    }
}

pub(crate) struct ForwardCache {
    pub input: Vec<f64>,
    /// Post-activation output of every hidden layer.
    pub post: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
            class_embed: vec![0.0; params.class_embed.len()],
        }
    }

    pub fn congruent_with(&self, params: &DenoiserParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
            && self.class_embed.len() == params.class_embed.len()
    }

    pub fn add_scaled(&mut self, other: &GradientBuffer, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += scale * y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.class_embed.iter_mut().zip(&other.class_embed) {
            *x += scale * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
            && self.class_embed.iter().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.class_embed);
        out
    }
}

/// One denoiser training sample: noised input, conditioning, regression
/// target, and a per-sample loss weight.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub x: Vec<f64>,
    pub t: usize,
    pub label: Option<usize>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Mean over batch and dimensions of `weight * ||pred - target||^2`, with
/// exact analytic gradients.
pub fn backward(params: &DenoiserParams, batch: &[LossSample]) -> Result<(f64, GradientBuffer)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = params.cfg.data_dim as f64;
    let bsize = batch.len() as f64;
    let mut grads = GradientBuffer::zeros_like(params);
    let mut loss = 0.0;
    let mut d_out = vec![0.0; params.cfg.data_dim];
    for s in batch {
        let (pred, cache) = params.forward_cached(&s.x, s.t, s.label)?;
        if s.target.len() != pred.len() {
            return Err(Error::ShapeMismatch("target dim mismatch".into()));
        }
        let mut sq = 0.0;
        for (i, (p, tg)) in pred.iter().zip(&s.target).enumerate() {
            let e = p - tg;
            sq += e * e;
            d_out[i] = 2.0 * s.weight * e / (d * bsize);
        }
        loss += s.weight * sq / (d * bsize);
        backprop_sample(params, &cache, s.label, &d_out, None, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Accumulates per-sample gradients into `grads`. `d_out` is the loss
/// gradient at the network output; `d_hidden`, when given, injects extra
/// gradient at each hidden layer's post-activation (used by the BlindSpot
/// attachment loss).
pub(crate) fn backprop_sample(
    params: &DenoiserParams,
    cache: &ForwardCache,
    c: Option<usize>,
    d_out: &[f64],
    d_hidden: Option<&[Vec<f64>]>,
    grads: &mut GradientBuffer,
) -> Result<()> {
    let mut delta = d_out.to_vec();
    let mut d_input_buf = Vec::new();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let glayer = &mut grads.layers[l];
        for i in 0..layer.out_dim {
            let di = delta[i];
            glayer.b[i] += di;
            let grow = &mut glayer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
            for (g, x) in grow.iter_mut().zip(input) {
                *g += di * x;
            }
        }
        d_input_buf.clear();
        d_input_buf.resize(layer.in_dim, 0.0);
        for i in 0..layer.out_dim {
            let di = delta[i];
            let wrow = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
            for (dx, wij) in d_input_buf.iter_mut().zip(wrow) {
                *dx += di * wij;
            }
        }
        if l == 0 {
            // Class embedding picks up the gradient of its input slice.
            let row = params.embed_row(c)?;
            let dc = params.cfg.class_embed_dim;
            let off = params.cfg.data_dim + params.cfg.time_embed_dim;
            let grow = &mut grads.class_embed[row * dc..(row + 1) * dc];
            for (g, dx) in grow.iter_mut().zip(&d_input_buf[off..off + dc]) {
                *g += dx;
            }
        } else {
            let a = &cache.post[l - 1];
            delta.clear();
            for (j, (&dx, &aj)) in d_input_buf.iter().zip(a).enumerate() {
                let inj = d_hidden.map_or(0.0, |h| h[l - 1][j]);
                delta.push((dx + inj) * (1.0 - aj * aj));
            }
        }
    }
    Ok(())
}

/// Adam optimizer state, congruent to the parameters it updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradientBuffer,
    pub v: GradientBuffer,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &DenoiserParams, lr: f64) -> Self {
        Self {
            m: GradientBuffer::zeros_like(params),
            v: GradientBuffer::zeros_like(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], st: (f64, f64, f64, f64, f64, f64)) {
    let (lr, b1, b2, eps, bc1, bc2) = st;
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Standard Adam step with bias correction.
pub fn adam_step(params: &mut DenoiserParams, grads: &GradientBuffer, state: &mut AdamState) -> Result<()> {
    if !grads.congruent_with(params) {
        return Err(Error::IncongruentParams);
    }
    if !grads.is_finite() {
        return Err(Error::GradientOverflow);
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let st = (state.lr, state.beta1, state.beta2, state.eps, bc1, bc2);
    for ((pl, gl), (ml, vl)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
    {
        adam_update(&mut pl.w, &gl.w, &mut ml.w, &mut vl.w, st);
        adam_update(&mut pl.b, &gl.b, &mut ml.b, &mut vl.b, st);
    }
    adam_update(
        &mut params.class_embed,
        &grads.class_embed,
        &mut state.m.class_embed,
        &mut state.v.class_embed,
        st,
    );
    Ok(())
}

/// Plain gradient descent: `params <- params - zeta * grads`.
pub fn sgd_step(params: &mut DenoiserParams, grads: &GradientBuffer, zeta: f64) -> Result<()> {
    if !grads.congruent_with(params) {
        return Err(Error::IncongruentParams);
    }
    if !grads.is_finite() {
        return Err(Error::GradientOverflow);
    }
    for (pl, gl) in params.layers.iter_mut().zip(&grads.layers) {
        for (p, g) in pl.w.iter_mut().zip(&gl.w) {
            *p -= zeta * g;
        }
        for (p, g) in pl.b.iter_mut().zip(&gl.b) {
            *p -= zeta * g;
        }
    }
    for (p, g) in params.class_embed.iter_mut().zip(&grads.class_embed) {
        *p -= zeta * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig {
            data_dim: 2,
            hidden: vec![16, 16],
            time_embed_dim: 8,
            class_embed_dim: 4,
            num_classes: 4,
            max_timestep: 10,
        }
    }

    fn random_batch(params: &DenoiserParams, n: usize, rng: &mut RngState) -> Vec<LossSample> {
        (0..n)
            .map(|i| LossSample {
                x: rng.normal_vec(params.cfg.data_dim),
                t: 1 + i % params.cfg.max_timestep,
                label: if i % 3 == 0 { None } else { Some(i % params.cfg.num_classes) },
                target: rng.normal_vec(params.cfg.data_dim),
                weight: 1.0,
            })
            .collect()
    }

    #[test]
    fn zero_params_zero_output() {
        let p = DenoiserParams::zeros(small_cfg()).unwrap();
        let (out, _) = p.forward(&[1.0, -2.0], 3, Some(1)).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = RngState::new(1);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let a = p.forward(&[0.3, 0.7], 5, Some(2)).unwrap();
        let b = p.forward(&[0.3, 0.7], 5, Some(2)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn unknown_class_rejected() {
        let p = DenoiserParams::zeros(small_cfg()).unwrap();
        assert!(matches!(
            p.forward(&[0.0, 0.0], 1, Some(4)),
            Err(Error::UnknownClass { .. })
        ));
    }

    #[test]
    fn single_linear_layer_matches_weight_map() {
        // 2x2 case by hand: one linear layer, zero embeddings, weights map
        // only the data slice of the input.
        let cfg = DenoiserConfig {
            data_dim: 2,
            hidden: vec![],
            time_embed_dim: 2,
            class_embed_dim: 2,
            num_classes: 2,
            max_timestep: 4,
        };
        let mut p = DenoiserParams::zeros(cfg).unwrap();
        // w maps [x0, x1, te0, te1, ce0, ce1]; use identity on the data part
        // plus a known 2x2 block.
        let l = &mut p.layers[0];
        l.w[0] = 1.0; // out0 <- x0
        l.w[1] = 2.0; // out0 <- 2*x1
        l.w[l.in_dim] = -3.0; // out1 <- -3*x0
        l.w[l.in_dim + 1] = 0.5; // out1 <- 0.5*x1
        let (out, _) = p.forward(&[2.0, 1.0], 1, Some(0)).unwrap();
        assert_eq!(out, vec![2.0 + 2.0, -6.0 + 0.5]);
    }

    #[test]
    fn loss_zero_at_global_minimum() {
        let mut rng = RngState::new(2);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let mut batch = random_batch(&p, 4, &mut rng);
        for s in batch.iter_mut() {
            s.target = p.forward(&s.x, s.t, s.label).unwrap().0;
        }
        let (loss, grads) = backward(&p, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_same_loss_and_grads() {
        let mut rng = RngState::new(3);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let batch = random_batch(&p, 5, &mut rng);
        let mut doubled = batch.clone();
        doubled.extend(batch.iter().cloned());
        let (l1, g1) = backward(&p, &batch).unwrap();
        let (l2, g2) = backward(&p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn finite_diff_check(seed: u64) -> f64 {
        let mut rng = RngState::new(seed);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let batch = random_batch(&p, 8, &mut rng);
        let (_, grads) = backward(&p, &batch).unwrap();
        let analytic = grads.flatten();
        let flat = p.flatten();
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            let pp = DenoiserParams::from_flat(p.cfg.clone(), &plus).unwrap();
            let mut minus = flat.clone();
            minus[i] -= h;
            let pm = DenoiserParams::from_flat(p.cfg.clone(), &minus).unwrap();
            let (lp, _) = backward(&pp, &batch).unwrap();
            let (lm, _) = backward(&pm, &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-4);
            max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
        }
        max_rel
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let err = finite_diff_check(17);
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn adam_zero_gradient_is_identity_with_counter_increment() {
        let mut rng = RngState::new(4);
        let mut p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let before = p.flatten();
        let g = GradientBuffer::zeros_like(&p);
        let mut st = AdamState::new(&p, 0.1);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(st.step, 1);
        assert_eq!(p.flatten(), before);
    }

    #[test]
    fn adam_step_size_bounded_on_scalar_quadratic() {
        // f(w) = w^2 / 2 at w = 1: the first Adam step moves by at most lr.
        let cfg = DenoiserConfig {
            data_dim: 1,
            hidden: vec![],
            time_embed_dim: 2,
            class_embed_dim: 1,
            num_classes: 1,
            max_timestep: 1,
        };
        let mut p = DenoiserParams::zeros(cfg).unwrap();
        p.layers[0].b[0] = 1.0;
        let mut g = GradientBuffer::zeros_like(&p);
        g.layers[0].b[0] = 1.0; // df/dw at w=1
        let mut st = AdamState::new(&p, 0.1);
        adam_step(&mut p, &g, &mut st).unwrap();
        let w = p.layers[0].b[0];
        assert!(w < 1.0 && (1.0 - w) <= 0.1 * 1.0001, "w = {w}");
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let cfg = DenoiserConfig {
            data_dim: 1,
            hidden: vec![],
            time_embed_dim: 2,
            class_embed_dim: 1,
            num_classes: 1,
            max_timestep: 1,
        };
        let mut p = DenoiserParams::zeros(cfg).unwrap();
        p.layers[0].b[0] = 3.0;
        let start = 0.5 * 9.0;
        let mut st = AdamState::new(&p, 0.1);
        let mut last = start;
        for _ in 0..200 {
            let w = p.layers[0].b[0];
            let mut g = GradientBuffer::zeros_like(&p);
            g.layers[0].b[0] = w;
            adam_step(&mut p, &g, &mut st).unwrap();
            last = 0.5 * p.layers[0].b[0] * p.layers[0].b[0];
        }
        assert!(last < 1e-3 * start, "final {last}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut rng = RngState::new(5);
        let mut p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let mut g = GradientBuffer::zeros_like(&p);
        g.class_embed[0] = f64::NAN;
        let mut st = AdamState::new(&p, 0.1);
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::GradientOverflow)));
    }

    #[test]
    fn sgd_arithmetic() {
        let cfg = DenoiserConfig {
            data_dim: 1,
            hidden: vec![],
            time_embed_dim: 2,
            class_embed_dim: 1,
            num_classes: 1,
            max_timestep: 1,
        };
        let mut p = DenoiserParams::zeros(cfg).unwrap();
        p.layers[0].b[0] = 1.0;
        let mut g = GradientBuffer::zeros_like(&p);
        g.layers[0].b[0] = 0.5;
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.layers[0].b[0] - 0.95).abs() < 1e-15);

        // zeta = 0 is the identity; grads = params with zeta = 1 zeroes out.
        let before = p.flatten();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p.flatten(), before);
    }

    #[test]
    fn sgd_grads_equal_params_zeta_one_gives_zero() {
        let mut rng = RngState::new(6);
        let mut p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let mut g = GradientBuffer::zeros_like(&p);
        for (gl, pl) in g.layers.iter_mut().zip(&p.layers) {
            gl.w.copy_from_slice(&pl.w);
            gl.b.copy_from_slice(&pl.b);
        }
        g.class_embed.copy_from_slice(&p.class_embed);
        sgd_step(&mut p, &g, 1.0).unwrap();
        assert!(p.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_roundtrip_and_param_count() {
        let mut rng = RngState::new(7);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let flat = p.flatten();
        // hand count for 2-16-16-2 with te=8, ce=4 (input 14), 5 embedding rows
        let expect = (14 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2) + 5 * 4;
        assert_eq!(flat.len(), expect);
        assert_eq!(flat.len(), p.cfg.param_count());
        let q = DenoiserParams::from_flat(p.cfg.clone(), &flat).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn clone_is_deep() {
        let mut rng = RngState::new(8);
        let p = DenoiserParams::init(small_cfg(), &mut rng).unwrap();
        let mut q = p.clone();
        q.layers[0].w[0] += 1.0;
        assert_ne!(p.layers[0].w[0], q.layers[0].w[0]);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = DenoiserParams::zeros(small_cfg()).unwrap();
        assert!(matches!(backward(&p, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn gradient_property_over_20_seeds() {
        for seed in 100..120 {
            let err = finite_diff_check(seed);
            assert!(err <= 1e-5, "seed {seed}: max relative error {err}");
        }
    }
}
