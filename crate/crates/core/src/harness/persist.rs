//! On-disk artifacts: checkpoints with integrity hashes, loss-trace CSVs,
//! and metric reports.

use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::unlearn::StepTrace;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Serialized model snapshot. Parameters are stored as JSON numbers, which
/// round-trip f64 exactly; the hash is over their raw bit patterns so any
/// corruption is caught at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: DenoiserConfig,
    pub params: Vec<f64>,
    pub seed: u64,
    pub method: String,
    pub params_sha256: String,
}

fn param_hash(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in params {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    path: &Path,
    params: &DenoiserParams,
    seed: u64,
    method: &str,
) -> Result<()> {
    let flat = params.flatten();
    let ckpt = Checkpoint {
        model: params.cfg.clone(),
        params_sha256: param_hash(&flat),
        params: flat,
        seed,
        method: method.to_string(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, Checkpoint)> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::CheckpointCorrupt(format!("{}: {e}", path.display())))?;
    if param_hash(&ckpt.params) != ckpt.params_sha256 {
        return Err(Error::CheckpointCorrupt(format!(
            "{}: parameter hash mismatch",
            path.display()
        )));
    }
    if ckpt.params.len() != ckpt.model.param_count() {
        return Err(Error::CheckpointCorrupt(format!(
            "{}: parameter count mismatch",
            path.display()
        )));
    }
    let params = DenoiserParams::from_flat(ckpt.model.clone(), &ckpt.params)?;
    Ok((params, ckpt))
}

/// Writes `iteration,remaining_loss,forget_loss,f_hat` with empty cells for
/// terms a method never evaluates.
pub fn write_trace_csv(path: &Path, trace: &[StepTrace]) -> Result<()> {
    let mut out = String::from("iteration,remaining_loss,forget_loss,f_hat\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.iteration,
            cell(row.remaining_loss),
            cell(row.forget_loss),
            cell(row.f_hat)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<StepTrace>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidConfig(format!("trace row {i} has {} fields", fields.len())));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::InvalidConfig(format!("trace row {i}: {e}")))
            }
        };
        rows.push(StepTrace {
            iteration: fields[0]
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("trace row {i}: {e}")))?,
            remaining_loss: opt(fields[1])?,
            forget_loss: opt(fields[2])?,
            f_hat: opt(fields[3])?,
        });
    }
    Ok(rows)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::RngState;

    fn small_params() -> DenoiserParams {
        let cfg = DenoiserConfig {
            data_dim: 2,
            hidden: vec![5],
            time_embed_dim: 4,
            class_embed_dim: 3,
            num_classes: 4,
            max_timestep: 50,
        };
        let mut rng = RngState::new(31);
        DenoiserParams::init(cfg, &mut rng).unwrap()
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let params = small_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&path, &params, 9, "finetune").unwrap();
        let (loaded, ckpt) = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.seed, 9);
        assert_eq!(ckpt.method, "finetune");
        let a = params.flatten();
        let b = loaded.flatten();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let params = small_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&path, &params, 1, "unscrubbed").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first = params.flatten()[0];
        let tampered = text.replacen(&format!("{first}"), &format!("{}", first + 1.0), 1);
        assert_ne!(text, tampered, "tamper target must appear in the file");
        std::fs::write(&path, tampered).unwrap();
        match load_checkpoint(&path) {
            Err(Error::CheckpointCorrupt(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_round_trips_with_empty_cells() {
        let trace = vec![
            StepTrace { iteration: 1, remaining_loss: Some(0.5), forget_loss: None, f_hat: Some(-0.25) },
            StepTrace { iteration: 2, remaining_loss: None, forget_loss: Some(1.0 / 3.0), f_hat: None },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,remaining_loss,forget_loss,f_hat\n"));
        assert!(text.contains("2,,"));
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].iteration, 1);
        assert_eq!(back[0].remaining_loss, Some(0.5));
        assert_eq!(back[0].forget_loss, None);
        assert_eq!(back[1].forget_loss, Some(1.0 / 3.0));
    }
}

