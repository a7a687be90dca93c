//! Metric battery: energy distance between sample clouds, a softmax-regression
//! toy classifier for conditional accuracy, loss-based membership inference,
//! KL of predicted noise to a standard Gaussian, and weight distance.

use crate::denoiser::DenoiserParams;
use crate::diffusion::{forward_diffuse, sample, CfgConfig, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::mathcore::{mean_and_covariance, RealArray, RngState};
use serde::{Deserialize, Serialize};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unbiased energy-distance estimator `2 E||a-b|| - E||a-a'|| - E||b-b'||`
/// with U-statistic pairings (diagonals excluded). Can dip slightly below
/// zero from estimation noise.
pub fn energy_distance(a: &RealArray, b: &RealArray) -> Result<f64> {
    let (n, m) = (a.rows(), b.rows());
    if n < 2 || m < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n.min(m) });
    }
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch("sample dims differ".into()));
    }
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += euclid(a.row(i), b.row(j));
        }
    }
    cross /= (n * m) as f64;
    let mut within_a = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            within_a += euclid(a.row(i), a.row(j));
        }
    }
    within_a *= 2.0 / (n * (n - 1)) as f64;
    let mut within_b = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            within_b += euclid(b.row(i), b.row(j));
        }
    }
    within_b *= 2.0 / (m * (m - 1)) as f64;
    Ok(2.0 * cross - within_a - within_b)
}

/// Multinomial logistic regression over raw coordinates, with a bias column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    /// C x (d + 1) weights, bias last.
    pub w: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
}

impl ToyClassifier {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.dim + 1;
        (0..self.num_classes)
            .map(|c| {
                let row = &self.w[c * stride..(c + 1) * stride];
                row[self.dim] + row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in z.iter_mut() {
            *v /= sum;
        }
        z
    }
}

/// Full-batch gradient training from zero initialization. Samples are
/// canonicalized by sorting before the loop, so the result is independent of
/// input order.
pub fn train_toy_classifier(
    points: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    iters: usize,
    lr: f64,
) -> Result<ToyClassifier> {
    if points.is_empty() || points.len() != labels.len() {
        return Err(Error::ShapeMismatch("points/labels size mismatch".into()));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidConfig("classifier needs >= 2 classes".into()));
    }
    if let Some(&max) = distinct.iter().next_back() {
        if max >= num_classes {
            return Err(Error::UnknownClass { class: max, num_classes });
        }
    }
    let dim = points[0].len();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .partial_cmp(&points[j])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(labels[i].cmp(&labels[j]))
    });
    let stride = dim + 1;
    let mut clf = ToyClassifier { w: vec![0.0; num_classes * stride], num_classes, dim };
    let n = points.len() as f64;
    let mut grad = vec![0.0; clf.w.len()];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in &order {
            let p = clf.probs(&points[i]);
            for c in 0..num_classes {
                let err = p[c] - if c == labels[i] { 1.0 } else { 0.0 };
                let row = &mut grad[c * stride..(c + 1) * stride];
                for (g, x) in row[..dim].iter_mut().zip(&points[i]) {
                    *g += err * x / n;
                }
                row[dim] += err / n;
            }
        }
        for (w, g) in clf.w.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    Ok(clf)
}

/// Argmax class per sample.
pub fn classify(clf: &ToyClassifier, samples: &RealArray) -> Result<Vec<usize>> {
    if samples.cols() != clf.dim {
        return Err(Error::ShapeMismatch("classifier dim vs sample dim".into()));
    }
    Ok((0..samples.rows())
        .map(|i| {
            let z = clf.logits(samples.row(i));
            z.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect())
}

/// Fraction of `n` class-conditional samples the classifier assigns to `c`.
pub fn conditional_accuracy(
    params: &DenoiserParams,
    clf: &ToyClassifier,
    s: &NoiseSchedule,
    sampler: &SamplerConfig,
    cfg: &CfgConfig,
    class: usize,
    n: usize,
    rng: &RngState,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let samples = sample(params, s, sampler, cfg, n, Some(class), rng)?;
    let labels = classify(clf, &samples)?;
    Ok(labels.iter().filter(|&&l| l == class).count() as f64 / n as f64)
}

/// Mean simplified diffusion loss of one data point over `n_t` fresh
/// (t, eps) draws.
pub fn per_sample_diffusion_loss(
    params: &DenoiserParams,
    x0: &[f64],
    c: Option<usize>,
    s: &NoiseSchedule,
    n_t: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if n_t == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let d = x0.len() as f64;
    let mut total = 0.0;
    for _ in 0..n_t {
        let t = 1 + rng.below(s.t_max());
        let eps = rng.normal_vec(x0.len());
        let xt = forward_diffuse(s, x0, t, &eps)?;
        let (pred, _) = params.forward(&xt, t, c)?;
        total += pred
            .iter()
            .zip(&eps)
            .map(|(p, e)| (p - e) * (p - e))
            .sum::<f64>()
            / d;
    }
    Ok(total / n_t as f64)
}

/// Rank-based AUC: the probability a random unseen-sample loss exceeds a
/// random forget-sample loss, with ties counted half.
pub fn mia_auc(losses_forget: &[f64], losses_unseen: &[f64]) -> Result<f64> {
    if losses_forget.is_empty() || losses_unseen.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    // Mann-Whitney via a merged sort with midranks for ties.
    let n_f = losses_forget.len();
    let n_u = losses_unseen.len();
    let mut merged: Vec<(f64, bool)> = losses_forget
        .iter()
        .map(|&l| (l, false))
        .chain(losses_unseen.iter().map(|&l| (l, true)))
        .collect();
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum_unseen = 0.0;
    let mut i = 0;
    while i < merged.len() {
        let mut j = i;
        while j < merged.len() && merged[j].0 == merged[i].0 {
            j += 1;
        }
        // ranks are 1-based; tied entries share the average rank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for entry in &merged[i..j] {
            if entry.1 {
                rank_sum_unseen += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_unseen - (n_u * (n_u + 1)) as f64 / 2.0;
    Ok(u / (n_f as f64 * n_u as f64))
}

/// Closed-form KL of a moment-matched Gaussian fit to the standard normal:
/// `0.5 (tr S + ||mu||^2 - d - ln det S)` with light diagonal regularization.
pub fn kl_to_standard_gaussian(eps_outputs: &RealArray) -> Result<f64> {
    let n = eps_outputs.rows();
    let d = eps_outputs.cols();
    if n < d + 2 {
        return Err(Error::InsufficientSamples { need: d + 2, got: n });
    }
    let (mu, mut sigma) = mean_and_covariance(eps_outputs)?;
    let cov = sigma.as_mut_slice();
    for i in 0..d {
        cov[i * d + i] += 1e-6;
    }
    // ln det via Cholesky (the regularized covariance is positive definite)
    let mut chol = vec![0.0_f64; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = cov[i * d + j];
            for k in 0..j {
                sum -= chol[i * d + k] * chol[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::MetricOutOfRange("covariance not positive definite".into()));
                }
                chol[i * d + i] = sum.sqrt();
            } else {
                chol[i * d + j] = sum / chol[j * d + j];
            }
        }
    }
    let ln_det: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mu_sq: f64 = mu.iter().map(|v| v * v).sum();
    Ok(0.5 * (trace + mu_sq - d as f64 - ln_det))
}

/// L2 distance between flattened parameter vectors.
pub fn weight_distance(a: &DenoiserParams, b: &DenoiserParams) -> Result<f64> {
    if !a.congruent_with(b) {
        return Err(Error::IncongruentParams);
    }
    Ok(a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// The full per-run metric record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    /// Energy distance of class-conditional samples to that class's data.
    pub per_class_energy: Vec<f64>,
    pub forgotten_accuracy: f64,
    pub remaining_accuracy: f64,
    pub mia_auc: f64,
    pub kl_forget: f64,
    pub kl_remain: f64,
    /// L2 distance to the retrain reference, when one exists.
    pub weight_distance_to_retrain: Option<f64>,
    pub grad_steps: usize,
}

/// Validates ranges and assembles the report.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    method: &str,
    seed: u64,
    config_hash: &str,
    per_class_energy: Vec<f64>,
    forgotten_accuracy: f64,
    remaining_accuracy: f64,
    auc: f64,
    kl_forget: f64,
    kl_remain: f64,
    weight_distance_to_retrain: Option<f64>,
    grad_steps: usize,
) -> Result<MetricsReport> {
    for (name, v) in [("forgotten_accuracy", forgotten_accuracy), ("remaining_accuracy", remaining_accuracy), ("mia_auc", auc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::MetricOutOfRange(format!("{name} = {v} outside [0, 1]")));
        }
    }
    for (name, v) in [("kl_forget", kl_forget), ("kl_remain", kl_remain)] {
        if !(v >= -1e-8) {
            return Err(Error::MetricOutOfRange(format!("{name} = {v} negative")));
        }
    }
    if let Some(wd) = weight_distance_to_retrain {
        if !(wd >= 0.0) {
            return Err(Error::MetricOutOfRange(format!("weight distance {wd} negative")));
        }
    }
    // Energy distances may sit a hair below zero from U-statistic noise.
    for &e in &per_class_energy {
        if !(e >= -1e-6) {
            return Err(Error::MetricOutOfRange(format!("energy distance {e} negative")));
        }
    }
    Ok(MetricsReport {
        method: method.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        per_class_energy,
        forgotten_accuracy,
        remaining_accuracy,
        mia_auc: auc,
        kl_forget,
        kl_remain,
        weight_distance_to_retrain,
        grad_steps,
    })
}
