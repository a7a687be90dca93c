//! Unlearning methods: the bi-level erase procedure plus the comparison
//! baselines (retrain, finetune, neggrad, blindspot, simultaneous, two-step).
//!
//! Every method draws its randomness from dedicated substreams of the caller's
//! RNG (see the `STREAM_*` constants) so that degenerate configurations
//! collapse bitwise onto simpler methods: `erasediff` with `lambda = 0` and
//! `simultaneous` with `alpha = 0` replay the exact fine-tuning trajectory,
//! and `blindspot` with an all-false mask replays plain training.

use crate::denoiser::{
    self, AdamState, DenoiserConfig, DenoiserParams, GradientBuffer, LossSample,
};
use crate::diffusion::{self, forward_diffuse, CfgConfig, LossWeighting, NoiseSchedule};
use crate::error::{Error, Result};
use crate::harness::dataset::Dataset;
use crate::mathcore::RngState;
use serde::{Deserialize, Serialize};

/// Substream ids, fixed so independent concerns never share draws.
pub const STREAM_SELECT: u64 = 0;
pub const STREAM_INNER: u64 = 1;
pub const STREAM_FORGET: u64 = 2;
pub const STREAM_REMAIN: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_PHASE1: u64 = 5;
pub const STREAM_PHASE2: u64 = 6;

/// Hyperparameters of the bi-level erase procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    /// Outer iterations S.
    pub outer_iters: usize,
    /// Inner descent steps K.
    pub inner_steps: usize,
    /// Learning rate zeta, shared by the inner and outer problems.
    pub lr: f64,
    /// Balance weight lambda on the forgetting gradient.
    pub lambda: f64,
    pub batch_remain: usize,
    pub batch_forget: usize,
    /// Fraction of the remaining data kept as the working subset.
    pub rs_fraction: f64,
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters < 1 {
            return Err(Error::InvalidConfig("outer_iters must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.batch_remain == 0 || self.batch_forget == 0 {
            return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
        }
        if !(0.0 < self.rs_fraction && self.rs_fraction <= 1.0) {
            return Err(Error::InvalidConfig("rs_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Baseline hyperparameters: simultaneous mixing weight, two-step phase
/// epochs, and the blindspot teacher settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Mixing weight alpha of the simultaneous objective.
    pub alpha: f64,
    /// Two-step phase-1 (ascent) epochs.
    pub ts_phase1_epochs: usize,
    /// Two-step phase-2 (relearn) epochs.
    pub ts_phase2_epochs: usize,
    /// Activation-matching weight of blindspot.
    pub blindspot_lambda: f64,
    /// Blindspot teacher partial-training epochs.
    pub partial_epochs: usize,
    /// Blindspot unlearning-phase epochs.
    pub unlearn_epochs: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.blindspot_lambda >= 0.0) {
            return Err(Error::InvalidConfig("alpha and blindspot_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Shared optimization settings for the epoch-based methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub weighting: LossWeighting,
    pub guidance: CfgConfig,
}

/// Result of the K-step inner descent on the forgetting objective.
#[derive(Debug, Clone)]
pub struct InnerLoopResult {
    pub phi_k: DenoiserParams,
    /// Forget loss at phi_K on a fresh draw; entered into the outer
    /// objective as a detached constant.
    pub l_cs: f64,
    /// Forget loss observed before each inner step.
    pub losses: Vec<f64>,
}

/// One row of a method's loss trace. Methods that never touch one of the
/// terms leave it as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub iteration: usize,
    pub remaining_loss: Option<f64>,
    pub forget_loss: Option<f64>,
    pub f_hat: Option<f64>,
}

/// Final parameters plus bookkeeping shared by all methods.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub params: DenoiserParams,
    /// Number of gradient evaluations performed.
    pub grad_steps: usize,
    pub trace: Vec<StepTrace>,
}

/// `n` indices drawn with replacement.
pub fn sample_batch(data: &Dataset, n: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if data.is_empty() || n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok((0..n).map(|_| rng.below(data.len())).collect())
}

fn make_batch<'a>(data: &'a Dataset, idx: &[usize]) -> Vec<(&'a [f64], Option<usize>)> {
    idx.iter()
        .map(|&i| (data.points[i].as_slice(), Some(data.labels[i])))
        .collect()
}

/// Draws per-sample (t, eps, eps_hat) for the forgetting objective: the
/// noised input uses Gaussian eps, the regression target is elementwise
/// uniform eps_hat, and the true class is passed through.
fn forget_samples(
    batch: &[(&[f64], Option<usize>)],
    s: &NoiseSchedule,
    rng: &mut RngState,
) -> Result<Vec<LossSample>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = Vec::with_capacity(batch.len());
    for (x0, label) in batch {
        let t = 1 + rng.below(s.t_max());
        let eps = rng.normal_vec(x0.len());
        let eps_hat = rng.uniform_vec(x0.len());
        let xt = forward_diffuse(s, x0, t, &eps)?;
        out.push(LossSample { x: xt, t, label: *label, target: eps_hat, weight: 1.0 });
    }
    Ok(out)
}

/// Forgetting loss with analytic gradients.
pub fn forget_loss_and_grads(
    params: &DenoiserParams,
    batch: &[(&[f64], Option<usize>)],
    s: &NoiseSchedule,
    rng: &mut RngState,
) -> Result<(f64, GradientBuffer)> {
    let samples = forget_samples(batch, s, rng)?;
    denoiser::backward(params, &samples)
}

/// Forgetting loss only (consumes the same draws as
/// [`forget_loss_and_grads`]).
pub fn forget_loss(
    params: &DenoiserParams,
    batch: &[(&[f64], Option<usize>)],
    s: &NoiseSchedule,
    rng: &mut RngState,
) -> Result<f64> {
    let samples = forget_samples(batch, s, rng)?;
    let d = params.cfg.data_dim as f64;
    let b = samples.len() as f64;
    let mut loss = 0.0;
    for sample in &samples {
        let (pred, _) = params.forward(&sample.x, sample.t, sample.label)?;
        let sq: f64 = pred
            .iter()
            .zip(&sample.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        loss += sample.weight * sq / (d * b);
    }
    Ok(loss)
}

/// Runs `k` plain gradient-descent steps driven by `grad_fn`; returns the
/// loss observed before each step.
pub fn sgd_descend<F>(
    params: &mut DenoiserParams,
    k: usize,
    zeta: f64,
    mut grad_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&DenoiserParams) -> Result<(f64, GradientBuffer)>,
{
    let mut losses = Vec::with_capacity(k);
    for _ in 0..k {
        let (loss, grads) = grad_fn(params)?;
        denoiser::sgd_step(params, &grads, zeta)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// K steps of descent on the forgetting loss (fresh minibatch every step),
/// then the detached constant evaluated at the result on one more fresh draw.
pub fn inner_descent(
    theta: &DenoiserParams,
    d_f: &Dataset,
    k: usize,
    zeta: f64,
    batch_forget: usize,
    s: &NoiseSchedule,
    rng: &mut RngState,
) -> Result<InnerLoopResult> {
    let mut phi = theta.clone();
    let losses = sgd_descend(&mut phi, k, zeta, |p| {
        let idx = sample_batch(d_f, batch_forget, rng)?;
        forget_loss_and_grads(p, &make_batch(d_f, &idx), s, rng)
    })?;
    let idx = sample_batch(d_f, batch_forget, rng)?;
    let l_cs = forget_loss(&phi, &make_batch(d_f, &idx), s, rng)?;
    Ok(InnerLoopResult { phi_k: phi, l_cs, losses })
}

/// One optimizer step on a freshly sampled minibatch. `grad_sign = -1`
/// ascends instead of descending.
pub fn train_step(
    params: &mut DenoiserParams,
    data: &Dataset,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    adam: &mut AdamState,
    rng: &mut RngState,
    grad_sign: f64,
) -> Result<f64> {
    let idx = sample_batch(data, ts.batch_size, rng)?;
    let (loss, grads) =
        diffusion::training_loss_and_grads(params, &make_batch(data, &idx), s, ts.weighting, &ts.guidance, rng)?;
    if grad_sign == 1.0 {
        denoiser::adam_step(params, &grads, adam)?;
    } else {
        let mut signed = GradientBuffer::zeros_like(params);
        signed.add_scaled(&grads, grad_sign);
        denoiser::adam_step(params, &signed, adam)?;
    }
    Ok(loss)
}

/// `steps` fine-tuning steps with a fresh optimizer; returns per-step losses.
pub fn finetune_steps(
    params: &mut DenoiserParams,
    data: &Dataset,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    steps: usize,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(params, ts.lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        losses.push(train_step(params, data, s, ts, &mut adam, rng, 1.0)?);
    }
    Ok(losses)
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

fn epoch_trace(losses: &[f64], per_epoch: usize, remaining: bool) -> Vec<StepTrace> {
    losses
        .chunks(per_epoch.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            StepTrace {
                iteration: i,
                remaining_loss: if remaining { Some(mean) } else { None },
                forget_loss: if remaining { None } else { Some(mean) },
                f_hat: None,
            }
        })
        .collect()
}

/// Continued training on the remaining data.
pub fn finetune(
    theta0: &DenoiserParams,
    d_r: &Dataset,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    epochs: usize,
    rng: &mut RngState,
) -> Result<UnlearnOutcome> {
    let mut params = theta0.clone();
    let per_epoch = steps_per_epoch(d_r.len(), ts.batch_size);
    let losses = finetune_steps(&mut params, d_r, s, ts, epochs * per_epoch, rng)?;
    Ok(UnlearnOutcome {
        params,
        grad_steps: epochs * per_epoch,
        trace: epoch_trace(&losses, per_epoch, true),
    })
}

/// Gradient ascent on the forgetting data (sign-flipped fine-tuning).
pub fn neggrad(
    theta0: &DenoiserParams,
    d_f: &Dataset,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    epochs: usize,
    rng: &mut RngState,
) -> Result<UnlearnOutcome> {
    let mut params = theta0.clone();
    let per_epoch = steps_per_epoch(d_f.len(), ts.batch_size);
    let steps = epochs * per_epoch;
    let mut adam = AdamState::new(&params, ts.lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        losses.push(train_step(&mut params, d_f, s, ts, &mut adam, rng, -1.0)?);
    }
    Ok(UnlearnOutcome {
        params,
        grad_steps: steps,
        trace: epoch_trace(&losses, per_epoch, false),
    })
}

/// The per-concern RNG streams threaded through the erase iterations.
#[derive(Debug, Clone)]
pub struct EraseDiffStreams {
    pub inner: RngState,
    pub forget: RngState,
    pub remain: RngState,
}

impl EraseDiffStreams {
    pub fn derive(rng: &RngState) -> Self {
        Self {
            inner: rng.substream(STREAM_INNER),
            forget: rng.substream(STREAM_FORGET),
            remain: rng.substream(STREAM_REMAIN),
        }
    }
}

/// One outer iteration: inner descent for the detached constant, then a
/// single optimizer step on grad_remaining + lambda * grad_forget. The
/// constant contributes no gradient, so the update never depends on the
/// inner stream.
pub fn erasediff_step(
    params: &mut DenoiserParams,
    d_rs: &Dataset,
    d_f: &Dataset,
    s: &NoiseSchedule,
    ucfg: &UnlearnConfig,
    weighting: LossWeighting,
    guidance: &CfgConfig,
    adam: &mut AdamState,
    streams: &mut EraseDiffStreams,
) -> Result<StepTrace> {
    let inner = inner_descent(
        params,
        d_f,
        ucfg.inner_steps,
        ucfg.lr,
        ucfg.batch_forget,
        s,
        &mut streams.inner,
    )?;

    let fidx = sample_batch(d_f, ucfg.batch_forget, &mut streams.forget)?;
    let (f_loss, f_grads) =
        forget_loss_and_grads(params, &make_batch(d_f, &fidx), s, &mut streams.forget)?;

    let ridx = sample_batch(d_rs, ucfg.batch_remain, &mut streams.remain)?;
    let (r_loss, mut grads) = diffusion::training_loss_and_grads(
        params,
        &make_batch(d_rs, &ridx),
        s,
        weighting,
        guidance,
        &mut streams.remain,
    )?;
    // Skipped (not scaled by zero) so that lambda = 0 stays bitwise identical
    // to plain fine-tuning.
    if ucfg.lambda != 0.0 {
        grads.add_scaled(&f_grads, ucfg.lambda);
    }
    denoiser::adam_step(params, &grads, adam)?;
    Ok(StepTrace {
        iteration: 0,
        remaining_loss: Some(r_loss),
        forget_loss: Some(f_loss),
        f_hat: Some(f_loss - inner.l_cs),
    })
}

fn check_disjoint(d_r: &Dataset, d_f: &Dataset) -> Result<()> {
    if d_r.is_empty() || d_f.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let overlap: Vec<usize> = d_r.label_set().intersection(&d_f.label_set()).copied().collect();
    if !overlap.is_empty() {
        return Err(Error::SplitOverlap(format!(
            "remain and forget share labels {overlap:?}"
        )));
    }
    Ok(())
}

/// The full bi-level erase procedure: fix a working subset of the remaining
/// data, then run S outer iterations of [`erasediff_step`].
pub fn erasediff(
    theta0: &DenoiserParams,
    d_r: &Dataset,
    d_f: &Dataset,
    s: &NoiseSchedule,
    ucfg: &UnlearnConfig,
    weighting: LossWeighting,
    guidance: &CfgConfig,
    rng: &RngState,
) -> Result<UnlearnOutcome> {
    ucfg.validate()?;
    check_disjoint(d_r, d_f)?;

    let mut sel = rng.substream(STREAM_SELECT);
    let mut idx: Vec<usize> = (0..d_r.len()).collect();
    sel.shuffle(&mut idx);
    let keep = ((ucfg.rs_fraction * d_r.len() as f64).round() as usize).max(1);
    idx.truncate(keep);
    let d_rs = d_r.select(&idx);

    let mut params = theta0.clone();
    let mut adam = AdamState::new(&params, ucfg.lr);
    let mut streams = EraseDiffStreams::derive(rng);
    let mut trace = Vec::with_capacity(ucfg.outer_iters);
    for it in 0..ucfg.outer_iters {
        let mut row =
            erasediff_step(&mut params, &d_rs, d_f, s, ucfg, weighting, guidance, &mut adam, &mut streams)?;
        row.iteration = it;
        trace.push(row);
    }
    Ok(UnlearnOutcome {
        params,
        grad_steps: ucfg.outer_iters * (ucfg.inner_steps + 2),
        trace,
    })
}

/// Unlearning phase of blindspot against a fixed teacher `psi`: over the full
/// dataset, unmasked samples keep the standard objective while masked
/// (forget) samples regress onto the teacher's prediction and match its
/// hidden activations.
pub fn blindspot_phase2(
    theta0: &DenoiserParams,
    psi: &DenoiserParams,
    d: &Dataset,
    mask: &[bool],
    lambda_bs: f64,
    epochs: usize,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    rng: &mut RngState,
) -> Result<UnlearnOutcome> {
    if mask.len() != d.len() {
        return Err(Error::ShapeMismatch("mask length vs dataset size".into()));
    }
    if d.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut params = theta0.clone();
    let mut adam = AdamState::new(&params, ts.lr);
    let per_epoch = steps_per_epoch(d.len(), ts.batch_size);
    let mut idx: Vec<usize> = (0..d.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        rng.shuffle(&mut idx);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(ts.batch_size.max(1)) {
            let bsize = chunk.len() as f64;
            // The per-sample draw order (t, eps, uncond swap) mirrors the
            // standard training loop exactly.
            let mut samples = Vec::with_capacity(chunk.len());
            let mut teacher_post: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = 1 + rng.below(s.t_max());
                let eps = rng.normal_vec(d.points[i].len());
                let u = rng.uniform01();
                let label = if u < ts.guidance.p_uncond { None } else { Some(d.labels[i]) };
                let xt = forward_diffuse(s, &d.points[i], t, &eps)?;
                if mask[i] {
                    let (pred, post) = psi.forward(&xt, t, label)?;
                    samples.push(LossSample { x: xt, t, label, target: pred, weight: 1.0 });
                    teacher_post.push(Some(post));
                } else {
                    samples.push(LossSample {
                        x: xt,
                        t,
                        label,
                        target: eps,
                        weight: ts.weighting.coefficient(s, t),
                    });
                    teacher_post.push(None);
                }
            }
            let (mut loss, mut grads) = denoiser::backward(&params, &samples)?;
            // Activation matching: unsquared per-layer norms of the student /
            // teacher gap, injected at the hidden post-activations.
            let zero_out = vec![0.0; params.cfg.data_dim];
            for (sample, tpost) in samples.iter().zip(&teacher_post) {
                let Some(tpost) = tpost else { continue };
                let (_, cache) = params.forward_cached(&sample.x, sample.t, sample.label)?;
                let mut inject: Vec<Vec<f64>> = Vec::with_capacity(cache.post.len());
                for (a_theta, a_psi) in cache.post.iter().zip(tpost) {
                    let diff: Vec<f64> = a_theta.iter().zip(a_psi).map(|(a, b)| a - b).collect();
                    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                    loss += lambda_bs * norm / bsize;
                    let scale = lambda_bs / (norm.max(1e-12) * bsize);
                    inject.push(diff.iter().map(|v| v * scale).collect());
                }
                denoiser::backprop_sample(
                    &params,
                    &cache,
                    sample.label,
                    &zero_out,
                    Some(&inject),
                    &mut grads,
                )?;
            }
            denoiser::adam_step(&mut params, &grads, &mut adam)?;
            total += loss;
            batches += 1;
        }
        trace.push(StepTrace {
            iteration: epoch,
            remaining_loss: Some(total / batches as f64),
            forget_loss: None,
            f_hat: None,
        });
    }
    Ok(UnlearnOutcome { params, grad_steps: epochs * per_epoch, trace })
}

/// Blindspot: train a randomly initialized teacher on the unmasked data,
/// then run the masked unlearning phase against it.
pub fn blindspot(
    theta0: &DenoiserParams,
    d: &Dataset,
    mask: &[bool],
    bcfg: &BaselineConfig,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    rng: &RngState,
) -> Result<UnlearnOutcome> {
    bcfg.validate()?;
    if mask.len() != d.len() {
        return Err(Error::ShapeMismatch("mask length vs dataset size".into()));
    }
    let mut remain = Dataset::empty();
    for (i, keep) in mask.iter().enumerate() {
        if !keep {
            remain.push(d.points[i].clone(), d.labels[i]);
        }
    }
    let mut init_rng = rng.substream(STREAM_INIT);
    let mut psi = DenoiserParams::init(theta0.cfg.clone(), &mut init_rng)?;
    let mut teacher_steps = 0;
    if bcfg.partial_epochs > 0 && !remain.is_empty() {
        let mut adam = AdamState::new(&psi, ts.lr);
        let mut p1 = rng.substream(STREAM_PHASE1);
        diffusion::train(
            &mut psi,
            &remain,
            s,
            ts.weighting,
            &ts.guidance,
            bcfg.partial_epochs,
            ts.batch_size,
            &mut adam,
            &mut p1,
        )?;
        teacher_steps = bcfg.partial_epochs * steps_per_epoch(remain.len(), ts.batch_size);
    }
    let mut p2 = rng.substream(STREAM_PHASE2);
    let mut out = blindspot_phase2(
        theta0,
        &psi,
        d,
        mask,
        bcfg.blindspot_lambda,
        bcfg.unlearn_epochs,
        s,
        ts,
        &mut p2,
    )?;
    out.grad_steps += teacher_steps;
    Ok(out)
}

/// Joint objective: each step applies grad on the remaining batch minus
/// `alpha` times grad on a forgetting batch.
pub fn simultaneous(
    theta0: &DenoiserParams,
    d_r: &Dataset,
    d_f: &Dataset,
    alpha: f64,
    epochs: usize,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    rng: &RngState,
) -> Result<UnlearnOutcome> {
    if alpha < 0.0 {
        return Err(Error::InvalidConfig("alpha must be >= 0".into()));
    }
    check_disjoint(d_r, d_f)?;
    let mut params = theta0.clone();
    let mut adam = AdamState::new(&params, ts.lr);
    let mut remain_rng = rng.substream(STREAM_REMAIN);
    let mut forget_rng = rng.substream(STREAM_FORGET);
    let per_epoch = steps_per_epoch(d_r.len(), ts.batch_size);
    let steps = epochs * per_epoch;
    let mut r_losses = Vec::with_capacity(steps);
    let mut f_losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let ridx = sample_batch(d_r, ts.batch_size, &mut remain_rng)?;
        let (r_loss, mut grads) = diffusion::training_loss_and_grads(
            &params,
            &make_batch(d_r, &ridx),
            s,
            ts.weighting,
            &ts.guidance,
            &mut remain_rng,
        )?;
        // alpha = 0 skips the forgetting term entirely (and its stream),
        // collapsing bitwise onto fine-tuning.
        if alpha != 0.0 {
            let fidx = sample_batch(d_f, ts.batch_size, &mut forget_rng)?;
            let (f_loss, f_grads) = diffusion::training_loss_and_grads(
                &params,
                &make_batch(d_f, &fidx),
                s,
                ts.weighting,
                &ts.guidance,
                &mut forget_rng,
            )?;
            grads.add_scaled(&f_grads, -alpha);
            f_losses.push(f_loss);
        }
        denoiser::adam_step(&mut params, &grads, &mut adam)?;
        r_losses.push(r_loss);
    }
    let grad_evals = steps * if alpha != 0.0 { 2 } else { 1 };
    let mut trace = epoch_trace(&r_losses, per_epoch, true);
    if alpha != 0.0 {
        for (row, chunk) in trace.iter_mut().zip(f_losses.chunks(per_epoch.max(1))) {
            row.forget_loss = Some(chunk.iter().sum::<f64>() / chunk.len() as f64);
        }
    }
    Ok(UnlearnOutcome { params, grad_steps: grad_evals, trace })
}

/// Phase 1 gradient ascent on the forgetting data, phase 2 fine-tuning on
/// the remaining data.
pub fn two_step(
    theta0: &DenoiserParams,
    d_f: &Dataset,
    d_r: &Dataset,
    e1: usize,
    e2: usize,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    rng: &mut RngState,
) -> Result<UnlearnOutcome> {
    let phase1 = if e1 > 0 {
        neggrad(theta0, d_f, s, ts, e1, rng)?
    } else {
        UnlearnOutcome { params: theta0.clone(), grad_steps: 0, trace: Vec::new() }
    };
    let phase2 = if e2 > 0 {
        finetune(&phase1.params, d_r, s, ts, e2, rng)?
    } else {
        UnlearnOutcome { params: phase1.params.clone(), grad_steps: 0, trace: Vec::new() }
    };
    let mut trace = phase1.trace;
    let offset = trace.len();
    trace.extend(phase2.trace.into_iter().map(|mut row| {
        row.iteration += offset;
        row
    }));
    Ok(UnlearnOutcome {
        params: phase2.params,
        grad_steps: phase1.grad_steps + phase2.grad_steps,
        trace,
    })
}

/// From-scratch training on the remaining data only; never sees the original
/// parameters.
pub fn retrain(
    model_cfg: &DenoiserConfig,
    d_r: &Dataset,
    s: &NoiseSchedule,
    ts: &TrainSettings,
    epochs: usize,
    rng: &RngState,
) -> Result<UnlearnOutcome> {
    let mut init_rng = rng.substream(STREAM_INIT);
    let mut params = DenoiserParams::init(model_cfg.clone(), &mut init_rng)?;
    let mut adam = AdamState::new(&params, ts.lr);
    let mut train_rng = rng.substream(STREAM_REMAIN);
    let losses = diffusion::train(
        &mut params,
        d_r,
        s,
        ts.weighting,
        &ts.guidance,
        epochs,
        ts.batch_size,
        &mut adam,
        &mut train_rng,
    )?;
    let trace = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| StepTrace {
            iteration: i,
            remaining_loss: Some(l),
            forget_loss: None,
            f_hat: None,
        })
        .collect();
    Ok(UnlearnOutcome {
        params,
        grad_steps: epochs * steps_per_epoch(d_r.len(), ts.batch_size),
        trace,
    })
}
