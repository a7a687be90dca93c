//! Experiment orchestration: data preparation, the unscrubbed model cache,
//! method dispatch, the metric battery, artifact persistence, and
//! multi-method comparison tables.

use crate::denoiser::{AdamState, DenoiserConfig, DenoiserParams};
use crate::diffusion::{self, forward_diffuse, cfg_predict, LossWeighting, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::eval::{
    self, build_report, classify, energy_distance, kl_to_standard_gaussian, mia_auc,
    per_sample_diffusion_loss, train_toy_classifier, MetricsReport, ToyClassifier,
};
use crate::harness::config::ExperimentConfig;
use crate::harness::dataset::{generate_dataset, split_forget, Dataset, DatasetSplit, ToyDatasetSpec};
use crate::harness::persist;
use crate::harness::plots::{self, ScatterSeries};
use crate::mathcore::{RealArray, RngState};
use crate::unlearn::{
    self, StepTrace, UnlearnOutcome, STREAM_FORGET, STREAM_REMAIN,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

// Substream ids 0..=6 belong to the unlearning methods; the harness draws
// its own randomness from ids that cannot collide with them.
const STREAM_HOLDOUT: u64 = 9;
const STREAM_PRETRAIN_INIT: u64 = 10;
const STREAM_PRETRAIN: u64 = 11;
const STREAM_EVAL: u64 = 12;

/// Everything derived deterministically from the config before any model
/// is trained.
pub struct Prepared {
    /// Training pool (holdout removed).
    pub train: Dataset,
    /// Unseen points never shown to any model.
    pub holdout: Dataset,
    pub split: DatasetSplit,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub model_cfg: DenoiserConfig,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let spec = ToyDatasetSpec::ring(
        cfg.dataset.classes,
        cfg.dataset.radius,
        cfg.dataset.sigma,
        cfg.dataset.samples_per_class,
        cfg.seed,
    );
    let full = generate_dataset(&spec)?;
    let mut idx: Vec<usize> = (0..full.len()).collect();
    let mut rng = RngState::new(cfg.seed).substream(STREAM_HOLDOUT);
    rng.shuffle(&mut idx);
    let n_hold = (cfg.dataset.holdout_fraction * full.len() as f64).round() as usize;
    let holdout = full.select(&idx[..n_hold]);
    let train = full.select(&idx[n_hold..]);
    let forget_classes: BTreeSet<usize> = cfg.dataset.forget_classes.iter().copied().collect();
    let split = split_forget(&train, &forget_classes, cfg.erasediff.rs_fraction, cfg.seed)?;
    let schedule = diffusion::linear_schedule(
        cfg.schedule.t_max,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;
    let sampler = cfg.sampler.build(cfg.schedule.t_max)?;
    let model_cfg = DenoiserConfig {
        data_dim: train.dim(),
        hidden: cfg.model.hidden.clone(),
        time_embed_dim: cfg.model.time_embed_dim,
        class_embed_dim: cfg.model.class_embed_dim,
        num_classes: cfg.dataset.classes,
        max_timestep: cfg.schedule.t_max,
    };
    model_cfg.validate()?;
    Ok(Prepared { train, holdout, split, schedule, sampler, model_cfg })
}

fn steps_for(n: usize, batch: usize, epochs: usize) -> usize {
    epochs * n.div_ceil(batch)
}

/// Trains the base model on the full training pool (all classes).
pub fn train_unscrubbed(
    cfg: &ExperimentConfig,
    prep: &Prepared,
) -> Result<(DenoiserParams, usize, Vec<StepTrace>)> {
    let base = RngState::new(cfg.seed);
    let mut init_rng = base.substream(STREAM_PRETRAIN_INIT);
    let mut params = DenoiserParams::init(prep.model_cfg.clone(), &mut init_rng)?;
    let mut adam = AdamState::new(&params, cfg.train.lr);
    let mut train_rng = base.substream(STREAM_PRETRAIN);
    let losses = diffusion::train(
        &mut params,
        &prep.train,
        &prep.schedule,
        LossWeighting::Simplified,
        &cfg.guidance,
        cfg.train.epochs,
        cfg.train.batch_size,
        &mut adam,
        &mut train_rng,
    )?;
    let trace = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| StepTrace {
            iteration: i + 1,
            remaining_loss: Some(l),
            forget_loss: None,
            f_hat: None,
        })
        .collect();
    let steps = steps_for(prep.train.len(), cfg.train.batch_size, cfg.train.epochs);
    Ok((params, steps, trace))
}

/// Loads the unscrubbed model from the cache keyed by the base hash, or
/// trains and caches it. The trace is empty on a cache hit.
pub fn load_or_train_unscrubbed(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cache_dir: &Path,
) -> Result<(DenoiserParams, usize, Vec<StepTrace>)> {
    std::fs::create_dir_all(cache_dir)?;
    let path = cache_dir.join(format!("unscrubbed-{}.json", cfg.base_hash()));
    let steps = steps_for(prep.train.len(), cfg.train.batch_size, cfg.train.epochs);
    if path.exists() {
        let (params, _) = persist::load_checkpoint(&path)?;
        if params.cfg != prep.model_cfg {
            return Err(Error::CheckpointCorrupt(format!(
                "{}: cached model shape disagrees with the config",
                path.display()
            )));
        }
        return Ok((params, steps, Vec::new()));
    }
    let (params, steps, trace) = train_unscrubbed(cfg, prep)?;
    persist::save_checkpoint(&path, &params, cfg.seed, "unscrubbed")?;
    Ok((params, steps, trace))
}

/// Runs the configured method from the unscrubbed parameters.
pub fn run_method(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    theta0: &DenoiserParams,
    theta0_steps: usize,
    theta0_trace: Vec<StepTrace>,
) -> Result<UnlearnOutcome> {
    let base = RngState::new(cfg.seed);
    let ts = cfg.train_settings();
    let s = &prep.schedule;
    let d_r = &prep.split.remain;
    let d_f = &prep.split.forget;
    match cfg.method.as_str() {
        "unscrubbed" => Ok(UnlearnOutcome {
            params: theta0.clone(),
            grad_steps: theta0_steps,
            trace: theta0_trace,
        }),
        "retrain" => unlearn::retrain(&prep.model_cfg, d_r, s, &ts, cfg.epochs.retrain, &base),
        "finetune" => {
            let mut rng = base.substream(STREAM_REMAIN);
            unlearn::finetune(theta0, d_r, s, &ts, cfg.epochs.finetune, &mut rng)
        }
        "neggrad" => {
            let mut rng = base.substream(STREAM_FORGET);
            unlearn::neggrad(theta0, d_f, s, &ts, cfg.epochs.neggrad, &mut rng)
        }
        "blindspot" => {
            let mask: Vec<bool> = prep
                .train
                .labels
                .iter()
                .map(|l| prep.split.forget_classes.contains(l))
                .collect();
            unlearn::blindspot(theta0, &prep.train, &mask, &cfg.baseline, s, &ts, &base)
        }
        "so" => unlearn::simultaneous(theta0, d_r, d_f, cfg.baseline.alpha, cfg.epochs.so, s, &ts, &base),
        "ts" => {
            let mut rng = base.substream(STREAM_FORGET);
            unlearn::two_step(
                theta0,
                d_f,
                d_r,
                cfg.baseline.ts_phase1_epochs,
                cfg.baseline.ts_phase2_epochs,
                s,
                &ts,
                &mut rng,
            )
        }
        "erasediff" => unlearn::erasediff(
            theta0,
            d_r,
            d_f,
            s,
            &cfg.erasediff,
            ts.weighting,
            &ts.guidance,
            &base,
        ),
        other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
    }
}

/// Raw evaluation material kept alongside the report so plots can be drawn
/// without recomputation.
pub struct EvalArtifacts {
    /// Generated samples, one array per class.
    pub per_class_samples: Vec<RealArray>,
    pub losses_forget: Vec<f64>,
    pub losses_unseen: Vec<f64>,
    /// Model outputs entering the two KL estimates.
    pub kl_outputs_forget: RealArray,
    pub kl_outputs_remain: RealArray,
}

fn cap<'a>(d: &'a Dataset, n: usize) -> (Vec<&'a [f64]>, Vec<usize>) {
    let k = d.len().min(n);
    (
        d.points[..k].iter().map(|p| p.as_slice()).collect(),
        d.labels[..k].to_vec(),
    )
}

/// Model outputs at the terminal timestep for noised versions of `points`.
fn terminal_outputs(
    params: &DenoiserParams,
    points: &[&[f64]],
    labels: &[usize],
    s: &NoiseSchedule,
    w: f64,
    rng: &mut RngState,
) -> Result<RealArray> {
    let t = s.t_max();
    let mut rows = Vec::with_capacity(points.len());
    for (x0, &c) in points.iter().zip(labels) {
        let eps = rng.normal_vec(x0.len());
        let xt = forward_diffuse(s, x0, t, &eps)?;
        rows.push(cfg_predict(params, &xt, t, Some(c), w)?);
    }
    RealArray::from_rows(&rows)
}

pub fn train_classifier(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ToyClassifier> {
    train_toy_classifier(
        &prep.train.points,
        &prep.train.labels,
        cfg.dataset.classes,
        cfg.eval.classifier_iters,
        cfg.eval.classifier_lr,
    )
}

/// The full metric battery for one set of parameters.
pub fn compute_metrics(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    clf: &ToyClassifier,
    params: &DenoiserParams,
    grad_steps: usize,
    weight_distance_to_retrain: Option<f64>,
) -> Result<(MetricsReport, EvalArtifacts)> {
    let eval_rng = RngState::new(cfg.seed).substream(STREAM_EVAL);
    let classes = cfg.dataset.classes;
    let w = cfg.guidance.guidance_scale;

    let mut per_class_samples = Vec::with_capacity(classes);
    let mut per_class_energy = Vec::with_capacity(classes);
    let mut forgotten = Vec::new();
    let mut remaining = Vec::new();
    for c in 0..classes {
        let gen = diffusion::sample(
            params,
            &prep.schedule,
            &prep.sampler,
            &cfg.guidance,
            cfg.eval.samples_per_class,
            Some(c),
            &eval_rng.substream(c as u64),
        )?;
        let real = prep.train.filter_classes(&[c].into());
        let real_arr = RealArray::from_rows(&real.points)?;
        per_class_energy.push(energy_distance(&gen, &real_arr)?);
        let labels = classify(clf, &gen)?;
        let acc = labels.iter().filter(|&&l| l == c).count() as f64 / labels.len() as f64;
        if prep.split.forget_classes.contains(&c) {
            forgotten.push(acc);
        } else {
            remaining.push(acc);
        }
        per_class_samples.push(gen);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;

    let mut mia_rng = eval_rng.substream(100);
    let unseen_f = prep.holdout.filter_classes(&prep.split.forget_classes);
    if unseen_f.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (f_pts, f_lab) = cap(&prep.split.forget, cfg.eval.max_points);
    let (u_pts, u_lab) = cap(&unseen_f, cfg.eval.max_points);
    let mut losses_forget = Vec::with_capacity(f_pts.len());
    for (x, &c) in f_pts.iter().zip(&f_lab) {
        losses_forget.push(per_sample_diffusion_loss(
            params,
            x,
            Some(c),
            &prep.schedule,
            cfg.eval.loss_draws,
            &mut mia_rng,
        )?);
    }
    let mut losses_unseen = Vec::with_capacity(u_pts.len());
    for (x, &c) in u_pts.iter().zip(&u_lab) {
        losses_unseen.push(per_sample_diffusion_loss(
            params,
            x,
            Some(c),
            &prep.schedule,
            cfg.eval.loss_draws,
            &mut mia_rng,
        )?);
    }
    let auc = mia_auc(&losses_forget, &losses_unseen)?;

    let mut kl_rng = eval_rng.substream(200);
    let (kf_pts, kf_lab) = cap(&prep.split.forget, cfg.eval.max_points);
    let (kr_pts, kr_lab) = cap(&prep.split.remain, cfg.eval.max_points);
    let kl_outputs_forget =
        terminal_outputs(params, &kf_pts, &kf_lab, &prep.schedule, w, &mut kl_rng)?;
    let kl_outputs_remain =
        terminal_outputs(params, &kr_pts, &kr_lab, &prep.schedule, w, &mut kl_rng)?;
    let kl_forget = kl_to_standard_gaussian(&kl_outputs_forget)?;
    let kl_remain = kl_to_standard_gaussian(&kl_outputs_remain)?;

    let report = build_report(
        &cfg.method,
        cfg.seed,
        &cfg.hash(),
        per_class_energy,
        mean(&forgotten),
        mean(&remaining),
        auc,
        kl_forget.max(0.0),
        kl_remain.max(0.0),
        weight_distance_to_retrain,
        grad_steps,
    )?;
    Ok((
        report,
        EvalArtifacts {
            per_class_samples,
            losses_forget,
            losses_unseen,
            kl_outputs_forget,
            kl_outputs_remain,
        },
    ))
}

/// Outcome record for a single experiment; failures are recorded rather
/// than propagated so partial artifacts survive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub failure: Option<String>,
    pub report: Option<MetricsReport>,
    pub artifacts: Vec<String>,
}

fn draw_plots(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    art: &EvalArtifacts,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut series = Vec::new();
    for c in 0..cfg.dataset.classes {
        let real = prep.train.filter_classes(&[c].into());
        series.push(ScatterSeries {
            label: format!("real class {c}"),
            color: plots::class_color(c).into(),
            filled: true,
            points: real.points.iter().take(200).map(|p| [p[0], p[1]]).collect(),
        });
        let gen = &art.per_class_samples[c];
        series.push(ScatterSeries {
            label: format!("generated class {c}"),
            color: plots::class_color(c).into(),
            filled: false,
            points: (0..gen.rows()).map(|i| [gen.row(i)[0], gen.row(i)[1]]).collect(),
        });
    }
    let scatter = out_dir.join("samples.svg");
    plots::write_scatter_svg(&scatter, &format!("{} samples", cfg.method), &series)?;
    written.push(scatter);

    let hist = out_dir.join("mia_losses.svg");
    plots::write_histogram_svg(
        &hist,
        "per-sample loss: forgotten vs unseen",
        &[("forgotten", &art.losses_forget[..]), ("unseen", &art.losses_unseen[..])],
        24,
    )?;
    written.push(hist);
    let h = plots::histogram(&art.losses_forget, 24, None)?;
    let hist_csv = out_dir.join("mia_losses_forget.csv");
    plots::write_histogram_csv(&hist_csv, &h)?;
    written.push(hist_csv);

    let norms = |a: &RealArray| -> Vec<f64> {
        (0..a.rows())
            .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    };
    let klh = out_dir.join("kl_outputs.svg");
    plots::write_histogram_svg(
        &klh,
        "terminal output norms: forgotten vs remaining",
        &[
            ("forgotten", &norms(&art.kl_outputs_forget)[..]),
            ("remaining", &norms(&art.kl_outputs_remain)[..]),
        ],
        24,
    )?;
    written.push(klh);
    Ok(written)
}

/// Runs one experiment end to end, writing artifacts into `out_dir` and a
/// cache of the unscrubbed model into `out_dir/cache`. A stage failure is
/// captured in the returned record; artifacts written before it remain.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord> {
    run_experiment_with_reference(cfg, out_dir, None)
}

pub fn run_experiment_with_reference(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    retrain_reference: Option<&DenoiserParams>,
) -> Result<RunRecord> {
    std::fs::create_dir_all(out_dir)?;
    let mut record = RunRecord {
        config_hash: cfg.hash(),
        method: cfg.method.clone(),
        seed: cfg.seed,
        failure: None,
        report: None,
        artifacts: Vec::new(),
    };
    match run_stages(cfg, out_dir, retrain_reference, &mut record) {
        Ok(()) => {}
        Err(e) => record.failure = Some(e.to_string()),
    }
    std::fs::write(out_dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    record.artifacts.push(out_dir.join("record.json").display().to_string());
    Ok(record)
}

fn run_stages(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    retrain_reference: Option<&DenoiserParams>,
    record: &mut RunRecord,
) -> Result<()> {
    let prep = prepare(cfg)?;
    let cache_dir = out_dir.join("cache");
    let (theta0, theta0_steps, theta0_trace) = load_or_train_unscrubbed(cfg, &prep, &cache_dir)?;
    let outcome = run_method(cfg, &prep, &theta0, theta0_steps, theta0_trace)?;

    let ckpt = out_dir.join("checkpoint.json");
    persist::save_checkpoint(&ckpt, &outcome.params, cfg.seed, &cfg.method)?;
    record.artifacts.push(ckpt.display().to_string());
    let trace_path = out_dir.join("trace.csv");
    persist::write_trace_csv(&trace_path, &outcome.trace)?;
    record.artifacts.push(trace_path.display().to_string());

    let clf = train_classifier(cfg, &prep)?;
    let wd = match retrain_reference {
        Some(r) => Some(eval::weight_distance(&outcome.params, r)?),
        None => None,
    };
    let (report, art) = compute_metrics(cfg, &prep, &clf, &outcome.params, outcome.grad_steps, wd)?;
    let report_path = out_dir.join("report.json");
    persist::write_report(&report_path, &report)?;
    record.artifacts.push(report_path.display().to_string());
    record.report = Some(report);

    for p in draw_plots(cfg, &prep, &art, out_dir)? {
        record.artifacts.push(p.display().to_string());
    }
    Ok(())
}

/// Runs each config into its own subdirectory and renders a comparison
/// table. All rows must describe the same data, base model, and seed; the
/// output preserves the given row order. Returns the text table.
pub fn compare_methods(configs: &[ExperimentConfig], out_dir: &Path) -> Result<String> {
    if configs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let base = configs[0].base_hash();
    for c in configs {
        if c.base_hash() != base {
            return Err(Error::InvalidConfig(
                "comparison rows disagree on dataset, base model, or seed".into(),
            ));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    // the retrain row, when present, is computed first so every other row
    // can report its parameter distance to it
    let retrain_ref: Option<DenoiserParams> = match configs
        .iter()
        .position(|c| c.method == "retrain")
    {
        Some(i) => {
            let dir = out_dir.join(format!("row{i}-{}", configs[i].method));
            let rec = run_experiment(&configs[i], &dir)?;
            if let Some(f) = &rec.failure {
                return Err(Error::InvalidConfig(format!("retrain row failed: {f}")));
            }
            Some(persist::load_checkpoint(&dir.join("checkpoint.json"))?.0)
        }
        None => None,
    };

    let mut records: Vec<RunRecord> = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        let dir = out_dir.join(format!("row{i}-{}", c.method));
        if c.method == "retrain" && retrain_ref.is_some() {
            // already run; annotate its self-distance of zero
            let mut rec: RunRecord =
                serde_json::from_str(&std::fs::read_to_string(dir.join("record.json"))?)?;
            if let Some(rep) = &mut rec.report {
                rep.weight_distance_to_retrain = Some(0.0);
                persist::write_report(&dir.join("report.json"), rep)?;
            }
            records.push(rec);
        } else {
            records.push(run_experiment_with_reference(c, &dir, retrain_ref.as_ref())?);
        }
    }

    let classes = configs[0].dataset.classes;
    let mut headers: Vec<String> = [
        "method",
        "seed",
        "grad_steps",
        "forgotten_acc",
        "remaining_acc",
        "mia_auc",
        "kl_forget",
        "kl_remain",
        "wd_retrain",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for c in 0..classes {
        headers.push(format!("energy_c{c}"));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in &records {
        let mut row = vec![rec.method.clone(), rec.seed.to_string()];
        match &rec.report {
            Some(r) => {
                row.push(r.grad_steps.to_string());
                for v in [r.forgotten_accuracy, r.remaining_accuracy, r.mia_auc, r.kl_forget, r.kl_remain] {
                    row.push(format!("{v:.4}"));
                }
                row.push(
                    r.weight_distance_to_retrain
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_default(),
                );
                for e in &r.per_class_energy {
                    row.push(format!("{e:.4}"));
                }
            }
            None => {
                row.push(format!("failed: {}", rec.failure.as_deref().unwrap_or("?")));
                while row.len() < headers.len() {
                    row.push(String::new());
                }
            }
        }
        while row.len() < headers.len() {
            row.push(String::new());
        }
        rows.push(row);
    }

    let csv = std::iter::once(headers.join(","))
        .chain(rows.iter().map(|r| r.join(",")))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    std::fs::write(out_dir.join("table.csv"), &csv)?;

    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (i, cell) in r.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:>width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut text = fmt_row(&headers) + "\n";
    for r in &rows {
        text.push_str(&fmt_row(r));
        text.push('\n');
    }
    std::fs::write(out_dir.join("table.txt"), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::load_config;

    /// A deliberately tiny configuration so harness tests stay fast.
    fn tiny(method: &str, seed: u64) -> ExperimentConfig {
        load_config(
            None,
            &[
                "dataset.samples_per_class=40".into(),
                "schedule.t_max=20".into(),
                "model.hidden=[8]".into(),
                "model.time_embed_dim=4".into(),
                "model.class_embed_dim=3".into(),
                "train.epochs=3".into(),
                "train.batch_size=16".into(),
                "sampler.steps=5".into(),
                "erasediff.outer_iters=4".into(),
                "erasediff.batch_remain=16".into(),
                "erasediff.batch_forget=16".into(),
                "epochs.finetune=2".into(),
                "epochs.neggrad=1".into(),
                "epochs.retrain=3".into(),
                "epochs.so=2".into(),
                "baseline.ts_phase1_epochs=1".into(),
                "baseline.ts_phase2_epochs=1".into(),
                "baseline.partial_epochs=1".into(),
                "baseline.unlearn_epochs=1".into(),
                "eval.samples_per_class=24".into(),
                "eval.loss_draws=4".into(),
                "eval.max_points=30".into(),
                "eval.classifier_iters=60".into(),
            ],
            Some(seed),
            Some(method),
        )
        .unwrap()
    }

    #[test]
    fn prepare_is_deterministic_and_partitions() {
        let cfg = tiny("erasediff", 5);
        let a = prepare(&cfg).unwrap();
        let b = prepare(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.holdout, b.holdout);
        assert_eq!(a.train.len() + a.holdout.len(), 160);
        assert_eq!(a.holdout.len(), 32);
        a.split.validate().unwrap();
    }

    #[test]
    fn run_experiment_writes_all_artifacts_and_is_deterministic() {
        let cfg = tiny("erasediff", 7);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = run_experiment(&cfg, d1.path()).unwrap();
        let r2 = run_experiment(&cfg, d2.path()).unwrap();
        assert!(r1.failure.is_none(), "{:?}", r1.failure);
        for name in ["checkpoint.json", "trace.csv", "report.json", "samples.svg", "mia_losses.svg", "kl_outputs.svg", "record.json"] {
            assert!(d1.path().join(name).exists(), "missing {name}");
        }
        let rep1 = std::fs::read_to_string(d1.path().join("report.json")).unwrap();
        let rep2 = std::fs::read_to_string(d2.path().join("report.json")).unwrap();
        assert_eq!(rep1, rep2);
        let c1 = std::fs::read_to_string(d1.path().join("checkpoint.json")).unwrap();
        let c2 = std::fs::read_to_string(d2.path().join("checkpoint.json")).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(r1.report.unwrap().grad_steps, r2.report.unwrap().grad_steps);
    }

    #[test]
    fn unscrubbed_cache_is_reused_across_methods() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&tiny("unscrubbed", 3), dir.path()).unwrap();
        assert!(a.failure.is_none(), "{:?}", a.failure);
        let cache = dir.path().join("cache");
        let entries: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
        assert_eq!(entries.len(), 1);
        // a second method with the same base finds the cache and matches the
        // fresh-training result bit for bit
        let dir2 = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir2.path().join("cache")).unwrap();
        for e in std::fs::read_dir(&cache).unwrap() {
            let e = e.unwrap();
            std::fs::copy(e.path(), dir2.path().join("cache").join(e.file_name())).unwrap();
        }
        let b = run_experiment(&tiny("finetune", 3), dir2.path()).unwrap();
        assert!(b.failure.is_none(), "{:?}", b.failure);
        let dir3 = tempfile::tempdir().unwrap();
        let c = run_experiment(&tiny("finetune", 3), dir3.path()).unwrap();
        assert!(c.failure.is_none(), "{:?}", c.failure);
        let rb = std::fs::read_to_string(dir2.path().join("checkpoint.json")).unwrap();
        let rc = std::fs::read_to_string(dir3.path().join("checkpoint.json")).unwrap();
        assert_eq!(rb, rc);
    }

    #[test]
    fn every_method_runs_on_the_tiny_config() {
        let dir = tempfile::tempdir().unwrap();
        for method in crate::harness::config::METHOD_NAMES {
            let sub = dir.path().join(method);
            let rec = run_experiment(&tiny(method, 2), &sub).unwrap();
            assert!(rec.failure.is_none(), "{method}: {:?}", rec.failure);
            assert!(rec.report.is_some(), "{method} lost its report");
        }
    }

    #[test]
    fn compare_methods_preserves_row_order_and_checks_bases() {
        let dir = tempfile::tempdir().unwrap();
        let cfgs = vec![tiny("erasediff", 4), tiny("unscrubbed", 4), tiny("finetune", 4)];
        let text = compare_methods(&cfgs, dir.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("erasediff"));
        assert!(lines[2].contains("unscrubbed"));
        assert!(lines[3].contains("finetune"));
        let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
        assert!(csv.starts_with("method,seed,grad_steps"));

        let mismatched = vec![tiny("erasediff", 4), tiny("finetune", 5)];
        assert!(compare_methods(&mismatched, dir.path()).is_err());
    }

    #[test]
    fn retrain_row_supplies_the_weight_distance_reference() {
        let dir = tempfile::tempdir().unwrap();
        let cfgs = vec![tiny("finetune", 6), tiny("retrain", 6)];
        compare_methods(&cfgs, dir.path()).unwrap();
        let rep_ft = persist::read_report(&dir.path().join("row0-finetune/report.json")).unwrap();
        let rep_rt = persist::read_report(&dir.path().join("row1-retrain/report.json")).unwrap();
        assert!(rep_ft.weight_distance_to_retrain.unwrap() > 0.0);
        assert_eq!(rep_rt.weight_distance_to_retrain, Some(0.0));
    }
}
