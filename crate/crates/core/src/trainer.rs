//! Chunk-by-chunk incremental training with weight carry-over, plateau early
//! stopping, and per-chunk resource logging.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::featsel::FeatureReport;
use crate::matrix::Matrix;
use crate::prep::{self, ScalerParams, SequenceBatch, TrainWindows};
use crate::rng::Seed;
use crate::rules::RuleConfig;
use crate::tinylstm::{
    self, Dims, LstmParams, ModelArtifact, OptimizerDefaults, OptimizerState, SeedRecord,
    FORMAT_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub w: usize,
    pub chunk_size: usize,
    pub batch_size: usize,
    pub units: usize,
    pub tau: f64,
    pub lr: f64,
    pub patience: usize,
    pub plateau_epsilon: f64,
    /// Validate every k-th chunk. The final chunk is always validated so the
    /// report carries a final F1 either way.
    pub val_every: usize,
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w: 5,
            chunk_size: 1000,
            batch_size: 64,
            units: 16,
            tau: 0.5,
            lr: 2e-2,
            patience: 5,
            plateau_epsilon: 1e-4,
            val_every: 1,
            seed: Seed(42),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w", self.w),
            ("chunk_size", self.chunk_size),
            ("batch_size", self.batch_size),
            ("units", self.units),
            ("patience", self.patience),
            ("val_every", self.val_every),
        ] {
            if v < 1 {
                return Err(Error::config(format!("train config: {name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!(
                "train config: tau {} outside [0, 1]",
                self.tau
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train config: lr must be positive and finite"));
        }
        if !(self.plateau_epsilon >= 0.0 && self.plateau_epsilon.is_finite()) {
            return Err(Error::config("train config: plateau_epsilon must be >= 0"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerDefaults {
        OptimizerDefaults {
            lr: self.lr,
            ..OptimizerDefaults::default()
        }
    }
}

/// rss_mb is MiB-based; -1 is the sentinel for platforms without a readable
/// resident-set counter. wall_clock_s counts from a process-local monotonic
/// origin, so it only supports differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceSnapshot {
    pub rss_mb: f64,
    pub wall_clock_s: f64,
}

fn clock_origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

pub fn sample_resources() -> ResourceSnapshot {
    ResourceSnapshot {
        rss_mb: rss_mb(),
        wall_clock_s: clock_origin().elapsed().as_secs_f64(),
    }
}

static RSS_WARNED: AtomicBool = AtomicBool::new(false);

fn rss_unsupported() -> f64 {
    if !RSS_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("resident-set size unavailable on this platform; reporting -1");
    }
    -1.0
}

#[cfg(target_os = "linux")]
fn rss_mb() -> f64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return rss_unsupported();
    };
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmRSS:") {
            if let Some(kb) = rest
                .split_whitespace()
                .next()
                .and_then(|v| v.parse::<f64>().ok())
            {
                return kb / 1024.0;
            }
        }
    }
    rss_unsupported()
}

#[cfg(not(target_os = "linux"))]
fn rss_mb() -> f64 {
    rss_unsupported()
}

/// Validation metrics are None on chunks skipped by val_every.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkLog {
    pub chunk_index: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_roc_auc: Option<f64>,
    pub rss_before_mb: f64,
    pub rss_after_mb: f64,
    pub val_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub logs: Vec<ChunkLog>,
    pub stopped_early: bool,
    pub stop_reason: String,
    pub total_chunks: usize,
    pub final_val_f1: f64,
}

/// Fires iff the last patience+1 validation scores span at most epsilon
/// (max - min over that suffix). Never fires with fewer entries.
pub fn early_stop(history: &[f64], patience: usize, epsilon: f64) -> bool {
    debug_assert!(patience >= 1);
    if history.len() < patience + 1 {
        return false;
    }
    let suffix = &history[history.len() - (patience + 1)..];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in suffix {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo <= epsilon
}

/// Everything the model artifact carries beyond the weights.
#[derive(Debug, Clone, Default)]
pub struct ArtifactMeta {
    pub scaler: ScalerParams,
    pub features: FeatureReport,
    pub rule_config: RuleConfig,
    pub provenance: serde_json::Value,
}

/// Trains one epoch per chunk in order, carrying weights across chunks, and
/// validates after each chunk (subject to val_every; the final chunk always
/// validates). Only one chunk's windows are materialized at a time; the
/// buffers drop at the end of each iteration.
pub fn train_incremental(
    train: &TrainWindows,
    val: &SequenceBatch,
    cfg: &TrainConfig,
    meta: ArtifactMeta,
    resume: Option<LstmParams>,
) -> Result<(ModelArtifact, TrainReport)> {
    cfg.validate()?;
    if train.n_windows() == 0 {
        return Err(Error::data("train_incremental: no training windows"));
    }
    if train.w != cfg.w {
        return Err(Error::config(format!(
            "train_incremental: window length {} in data vs {} in config",
            train.w, cfg.w
        )));
    }
    if val.targets.is_empty() {
        return Err(Error::data("train_incremental: empty validation set"));
    }
    let has0 = val.targets.iter().any(|&y| y == 0);
    let has1 = val.targets.iter().any(|&y| y == 1);
    if !(has0 && has1) {
        return Err(Error::data(
            "train_incremental: validation set must contain both classes",
        ));
    }
    let n_features = train.x_rows.cols();
    if val.n_features != n_features || val.w != cfg.w {
        return Err(Error::data(format!(
            "train_incremental: validation windows are {} x {} features, train is {} x {}",
            val.w, val.n_features, cfg.w, n_features
        )));
    }

    let mut params = match resume {
        Some(p) => {
            if p.n_features != n_features || p.units != cfg.units {
                return Err(Error::config(format!(
                    "resume weights are {}x{}, config wants {}x{}",
                    p.n_features, p.units, n_features, cfg.units
                )));
            }
            p.check_shapes()?;
            p
        }
        None => tinylstm::init_params(n_features, cfg.units, cfg.seed)?,
    };
    let mut opt = OptimizerState::new(n_features, cfg.units, cfg.optimizer());

    let specs = prep::chunks(train.n_windows(), cfg.chunk_size);
    let mut logs: Vec<ChunkLog> = Vec::with_capacity(specs.len());
    let mut history: Vec<f64> = Vec::new();
    let mut stopped_early = false;
    let mut stop_reason = String::new();

    for spec in &specs {
        let before = sample_resources();
        let train_loss = {
            let (x, y) = train.materialize(spec.start, spec.len);
            let mut loss_sum = 0.0;
            let dim = x.cols();
            let mut start = 0;
            while start < spec.len {
                let len = cfg.batch_size.min(spec.len - start);
                let batch = Matrix::from_vec(
                    len,
                    dim,
                    x.data()[start * dim..(start + len) * dim].to_vec(),
                );
                let (loss, grads) =
                    tinylstm::loss_and_grads(&params, &batch, &y[start..start + len], cfg.w)?;
                if !loss.is_finite() {
                    log::error!(
                        "non-finite loss {loss} in chunk {} at window offset {start}",
                        spec.index
                    );
                    return Err(Error::numeric(format!(
                        "non-finite training loss in chunk {}",
                        spec.index
                    )));
                }
                tinylstm::adam_step(&mut params, &grads, &mut opt)?;
                loss_sum += loss * len as f64;
                start += len;
            }
            loss_sum / spec.len as f64
        }; // chunk buffers reclaimed here, before the next chunk begins

        let is_last = spec.index + 1 == specs.len();
        let validate = (spec.index + 1) % cfg.val_every == 0 || is_last;
        let (val_f1, val_roc_auc, val_time_s) = if validate {
            let t0 = Instant::now();
            let (report, _) = eval::eval_batch(&params, val, cfg.tau)?;
            history.push(report.f1);
            (report.f1.into(), report.roc_auc, Some(t0.elapsed().as_secs_f64()))
        } else {
            (None, None, None)
        };
        let after = sample_resources();
        logs.push(ChunkLog {
            chunk_index: spec.index,
            train_loss,
            val_f1,
            val_roc_auc,
            rss_before_mb: before.rss_mb,
            rss_after_mb: after.rss_mb,
            val_time_s,
        });
        if validate && early_stop(&history, cfg.patience, cfg.plateau_epsilon) {
            stopped_early = true;
            stop_reason = format!(
                "val F1 plateau: range <= {:e} over the last {} evaluations",
                cfg.plateau_epsilon,
                cfg.patience + 1
            );
            break;
        }
    }
    if !stopped_early {
        stop_reason = "chunks exhausted".to_string();
    }
    let final_val_f1 = *history
        .last()
        .expect("final chunk always validates, so history is non-empty");

    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        created: chrono::Utc::now().to_rfc3339(),
        dims: Dims {
            n_features,
            units: cfg.units,
            window: cfg.w,
        },
        weights: params,
        optimizer_defaults: cfg.optimizer(),
        scaler: meta.scaler,
        features: meta.features,
        rule_config: meta.rule_config,
        seeds: SeedRecord {
            run_seed: cfg.seed.0,
        },
        provenance: meta.provenance,
    };
    let total_chunks = logs.len();
    Ok((
        artifact,
        TrainReport {
            logs,
            stopped_early,
            stop_reason,
            total_chunks,
            final_val_f1,
        },
    ))
}

/// One row per chunk, matching the training-figure column set. Skipped
/// validation fields are left empty.
pub fn write_chunk_log_csv(logs: &[ChunkLog], path: &Path) -> Result<()> {
    let mut out = String::from(
        "chunk_index,train_loss,val_f1,val_roc_auc,rss_before_mb,rss_after_mb,val_time_s\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for log in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            log.chunk_index,
            log.train_loss,
            opt(log.val_f1),
            opt(log.val_roc_auc),
            log.rss_before_mb,
            log.rss_after_mb,
            opt(log.val_time_s),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
