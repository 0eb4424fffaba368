//! Confusion-matrix metrics, ROC analysis, whole-table model evaluation, and
//! the one-at-a-time parameter sweep harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{self, TagMapping, TagTable};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prep::{self, SequenceBatch};
use crate::rules;
use crate::tinylstm::{self, LstmParams, ModelArtifact};
use crate::trainer::{self, ArtifactMeta, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fneg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fneg
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::data(format!(
            "confusion: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::data("confusion: empty input"));
    }
    let mut cm = ConfusionMatrix {
        tp: 0,
        tn: 0,
        fp: 0,
        fneg: 0,
    };
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fneg += 1,
            _ => return Err(Error::data("confusion: values must be 0 or 1")),
        }
    }
    Ok(cm)
}

/// Zero-denominator metrics are reported as 0 and named in `undefined` so
/// downstream tables stay numeric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
    pub cm: ConfusionMatrix,
    pub tau: Option<f64>,
    pub undefined: Vec<String>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("metrics: empty confusion matrix"));
    }
    let (tp, tn, fp, fneg) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fneg as f64);
    let mut undefined = Vec::new();
    let accuracy = (tp + tn) / total as f64;
    let precision = if cm.tp + cm.fp == 0 {
        undefined.push("precision".to_string());
        0.0
    } else {
        tp / (tp + fp)
    };
    let recall = if cm.tp + cm.fneg == 0 {
        undefined.push("recall".to_string());
        0.0
    } else {
        tp / (tp + fneg)
    };
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".to_string());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        accuracy,
        precision,
        recall,
        f1,
        roc_auc: None,
        cm: *cm,
        tau: None,
        undefined,
    })
}

/// Mann-Whitney rank statistic with midrank tie handling. Equals the
/// trapezoidal area under the ROC curve; `pairwise_auc` is the independent
/// reference used to arbitrate this in tests.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = auc_pre(scores, labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j]
        let midrank = (i + j + 2) as f64 / 2.0;
        for &ix in &idx[i..=j] {
            if labels[ix] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Exhaustive O(n_pos * n_neg) comparison: fraction of positive/negative
/// pairs ordered correctly, ties counting one half. Slow oracle for
/// `roc_auc`; kept public so integration suites can run both routes.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = auc_pre(scores, labels)?;
    let mut s = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                s += 1.0;
            } else if scores[i] == scores[j] {
                s += 0.5;
            }
        }
    }
    Ok(s / (n_pos as f64 * n_neg as f64))
}

fn auc_pre(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("roc_auc: non-finite score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data("roc_auc: both classes required"));
    }
    Ok((n_pos, n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per distinct score, counting predictions by `score >= threshold`
/// so the curve ends at (1,1); the leading point uses +inf. Runtime
/// classification (`classify`) is strictly greater-than; the curve is a
/// plotting artifact and its trapezoidal area equals `roc_auc` exactly.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = auc_pre(scores, labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let t = scores[idx[i]];
        let mut j = i;
        while j < n && scores[idx[j]] == t {
            if labels[idx[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        i = j;
    }
    Ok(points)
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Scores one window batch and builds the full report at threshold `tau`.
/// Trainer validation and whole-table evaluation share this path, so their
/// metrics agree bit-exactly on identical batches.
pub fn eval_batch(
    params: &LstmParams,
    batch: &SequenceBatch,
    tau: f64,
) -> Result<(EvalReport, Vec<f64>)> {
    let scores = tinylstm::predict_batch(params, &batch.windows, batch.w)?;
    let preds: Vec<u8> = scores.iter().map(|&p| tinylstm::classify(p, tau)).collect();
    let cm = confusion(&preds, &batch.targets)?;
    let mut report = metrics(&cm)?;
    report.roc_auc = Some(roc_auc(&scores, &batch.targets)?);
    report.tau = Some(tau);
    Ok((report, scores))
}

/// Columns pulled in `names` order, which is the model's input order.
/// Unresolvable names are reported together.
pub fn feature_matrix(table: &TagTable, names: &[String]) -> Result<Matrix> {
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| table.col_index(n).is_none())
        .map(|n| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "unresolvable features: {}",
            missing.join(", ")
        )));
    }
    let mut x = Matrix::zeros(table.n_rows(), names.len());
    for (c, name) in names.iter().enumerate() {
        let ci = table.col_index(name).unwrap();
        for r in 0..table.n_rows() {
            x.set(r, c, table.values.get(r, ci));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub rss_before_mb: f64,
    pub rss_after_mb: f64,
    pub infer_time_s: f64,
    #[serde(skip)]
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub targets: Vec<u8>,
}

/// Whole-table inference: optional tag mapping, labels taken from the table
/// or derived with the stored rule config, stored scaler and window length
/// applied, then scored at `tau`.
pub fn evaluate(
    artifact: &ModelArtifact,
    table: &TagTable,
    mapping: Option<&TagMapping>,
    tau: f64,
) -> Result<EvalOutcome> {
    let mapped;
    let t = match mapping {
        Some(m) => {
            mapped = dataio::map_tags(table, m)?;
            &mapped
        }
        None => table,
    };
    // Labels need the rule tags, which selection may have dropped, so derive
    // them before projecting to the model's features.
    let labels: Vec<u8> = match &t.labels {
        Some(l) => l.clone(),
        None => rules::label_table(t, &artifact.rule_config)?.0,
    };
    let x = feature_matrix(t, &artifact.features.selected)?;
    artifact.check_input_width(x.cols())?;
    let scaled = prep::apply_scaler(&x, &artifact.scaler)?;
    let batch = prep::build_windows(&scaled, &labels, artifact.dims.window)?;
    let before = trainer::sample_resources();
    let t0 = Instant::now();
    let (report, scores) = eval_batch(&artifact.weights, &batch, tau)?;
    let infer_time_s = t0.elapsed().as_secs_f64();
    let after = trainer::sample_resources();
    Ok(EvalOutcome {
        report,
        rss_before_mb: before.rss_mb,
        rss_after_mb: after.rss_mb,
        infer_time_s,
        scores,
        targets: batch.targets,
    })
}

pub const SWEEP_KEYS: [&str; 5] = ["W", "B", "C", "U", "tau"];

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    /// "baseline" for the reference row, otherwise one of SWEEP_KEYS.
    pub parameter: String,
    pub value: f64,
    pub report: EvalReport,
    pub peak_rss_mb: f64,
    pub total_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub baseline: SweepPoint,
    pub points: Vec<SweepPoint>,
}

/// Scaled training/validation rows shared by every sweep point. Windowing
/// and balancing depend on W, so they happen per point.
pub struct SweepInputs<'a> {
    pub x_train: &'a Matrix,
    pub y_train: &'a [u8],
    pub x_val: &'a Matrix,
    pub y_val: &'a [u8],
    pub smote_k: usize,
    pub meta: ArtifactMeta,
}

/// One-at-a-time sweep. The baseline configuration is trained once; grid
/// values equal to the baseline reuse that row, and tau points re-threshold
/// the baseline model instead of retraining.
pub fn sweep(
    inputs: &SweepInputs,
    baseline: &TrainConfig,
    grid: &BTreeMap<String, Vec<f64>>,
) -> Result<SweepResult> {
    baseline.validate()?;
    for key in grid.keys() {
        if !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "sweep: unknown parameter {key:?}; valid keys: W, B, C, U, tau"
            )));
        }
    }
    let (base_artifact, base_point, base_val) =
        run_train_point(inputs, baseline, "baseline", f64::NAN)?;
    let mut points = Vec::new();
    for key in SWEEP_KEYS {
        let Some(values) = grid.get(key) else {
            continue;
        };
        let baseline_value = match key {
            "W" => baseline.w as f64,
            "B" => baseline.batch_size as f64,
            "C" => baseline.chunk_size as f64,
            "U" => baseline.units as f64,
            "tau" => baseline.tau,
            _ => unreachable!(),
        };
        for &v in values {
            if v == baseline_value {
                let mut p = base_point.clone();
                p.parameter = key.to_string();
                p.value = v;
                points.push(p);
            } else if key == "tau" {
                let t0 = Instant::now();
                let before = trainer::sample_resources();
                let (report, _) = eval_batch(&base_artifact.weights, &base_val, v)?;
                let after = trainer::sample_resources();
                points.push(SweepPoint {
                    parameter: key.to_string(),
                    value: v,
                    report,
                    peak_rss_mb: before.rss_mb.max(after.rss_mb),
                    total_time_s: t0.elapsed().as_secs_f64(),
                });
            } else {
                let cfg = override_param(baseline, key, v)?;
                let (_, p, _) = run_train_point(inputs, &cfg, key, v)?;
                points.push(p);
            }
        }
    }
    Ok(SweepResult {
        baseline: base_point,
        points,
    })
}

fn override_param(base: &TrainConfig, key: &str, v: f64) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    if key == "tau" {
        cfg.tau = v;
    } else {
        if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
            return Err(Error::config(format!(
                "sweep: {key} must be a positive integer, got {v}"
            )));
        }
        let iv = v as usize;
        match key {
            "W" => cfg.w = iv,
            "B" => cfg.batch_size = iv,
            "C" => cfg.chunk_size = iv,
            "U" => cfg.units = iv,
            _ => unreachable!(),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train_point(
    inputs: &SweepInputs,
    cfg: &TrainConfig,
    parameter: &str,
    value: f64,
) -> Result<(ModelArtifact, SweepPoint, SequenceBatch)> {
    let t0 = Instant::now();
    let tw = prep::train_windows_smote(
        inputs.x_train.clone(),
        inputs.y_train.to_vec(),
        cfg.w,
        inputs.smote_k,
        cfg.seed,
    )?;
    let val = prep::build_windows(inputs.x_val, inputs.y_val, cfg.w)?;
    let (artifact, train_report) =
        trainer::train_incremental(&tw, &val, cfg, inputs.meta.clone(), None)?;
    let (report, _) = eval_batch(&artifact.weights, &val, cfg.tau)?;
    let mut peak = f64::NEG_INFINITY;
    for log in &train_report.logs {
        peak = peak.max(log.rss_before_mb).max(log.rss_after_mb);
    }
    let point = SweepPoint {
        parameter: parameter.to_string(),
        value,
        report,
        peak_rss_mb: peak,
        total_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok((artifact, point, val))
}

/// Sweep table with the baseline row first; its value cell is left empty.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out =
        String::from("parameter,value,accuracy,precision,recall,f1,roc_auc,peak_rss_mb,total_time_s\n");
    let mut push_row = |p: &SweepPoint| {
        let value = if p.value.is_nan() {
            String::new()
        } else {
            format!("{}", p.value)
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.parameter,
            value,
            p.report.accuracy,
            p.report.precision,
            p.report.recall,
            p.report.f1,
            p.report.roc_auc.unwrap_or(0.0),
            p.peak_rss_mb,
            p.total_time_s,
        ));
    };
    // Grid values equal to the baseline already appear as relabeled points,
    // so the bare baseline row is only written when the grid was empty.
    if result.points.is_empty() {
        push_row(&result.baseline);
    }
    for p in &result.points {
        push_row(p);
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: u64, tn: u64, fp: u64, fneg: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, tn, fp, fneg }
    }

    #[test]
    fn confusion_counts() {
        let got = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!(got, cm(2, 1, 0, 0));
    }

    #[test]
    fn confusion_inversion() {
        let labels = [1, 0, 1, 0];
        let preds: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let got = confusion(&preds, &labels).unwrap();
        assert_eq!(got.tp, 0);
        assert_eq!(got.tn, 0);
        assert_eq!(got.fp, 2);
        assert_eq!(got.fneg, 2);
    }

    #[test]
    fn confusion_length_mismatch() {
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn metrics_reference_counts() {
        // Oracle values computed once from the counts with exact f64 division.
        let r = metrics(&cm(13387, 16154, 342, 108)).unwrap();
        assert!((r.accuracy - 0.9849954986495949).abs() < 1e-15);
        assert!((r.precision - 0.9750892271833346).abs() < 1e-15);
        assert!((r.recall - 0.9919970359392367).abs() < 1e-15);
        assert!((r.f1 - 0.9834704672347928).abs() < 1e-15);
        assert!(r.undefined.is_empty());
        // 5 d.p. presentation of the same numbers.
        assert_eq!(format!("{:.5}", r.accuracy), "0.98500");
        assert_eq!(format!("{:.5}", r.precision), "0.97509");
        assert_eq!(format!("{:.5}", r.recall), "0.99200");
        assert_eq!(format!("{:.5}", r.f1), "0.98347");
    }

    #[test]
    fn metrics_all_correct() {
        let r = metrics(&cm(5, 7, 0, 0)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn metrics_zero_denominator_flags() {
        let r = metrics(&cm(0, 3, 0, 2)).unwrap();
        assert_eq!(r.precision, 0.0);
        assert!(r.undefined.contains(&"precision".to_string()));
        assert_eq!(r.f1, 0.0);
        assert!(r.undefined.contains(&"f1".to_string()));
    }

    #[test]
    fn metrics_harmonic_mean() {
        let r = metrics(&cm(8, 5, 3, 2)).unwrap();
        let hm = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        assert!((r.f1 - hm).abs() < 1e-12);
    }

    #[test]
    fn auc_perfect_separation() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_worked_example() {
        // 3 of 4 positive/negative pairs correctly ordered.
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_all_ties() {
        let auc = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert!((auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_single_class_errors() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        let scores = [0.3, 0.7, 0.3, 0.9, 0.1, 0.7, 0.5, 0.3];
        let labels = [0, 1, 1, 1, 0, 0, 1, 0];
        let a = roc_auc(&scores, &labels).unwrap();
        let b = pairwise_auc(&scores, &labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn trapezoid(points: &[RocPoint]) -> f64 {
        points
            .windows(2)
            .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0)
            .sum()
    }

    #[test]
    fn roc_curve_endpoints_and_area() {
        let scores = [0.3, 0.7, 0.3, 0.9, 0.1, 0.7, 0.5, 0.3];
        let labels = [0, 1, 1, 1, 0, 0, 1, 0];
        let curve = roc_curve(&scores, &labels).unwrap();
        let first = curve.first().unwrap();
        let last = curve.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        let area = trapezoid(&curve);
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((area - auc).abs() < 1e-12);
    }

    // Coarse grid keeps affine transforms exact so ties are preserved.
    fn grid_scores() -> impl Strategy<Value = Vec<(f64, u8)>> {
        proptest::collection::vec((0u32..=64, 0u8..=1), 4..60).prop_map(|v| {
            v.into_iter()
                .map(|(s, y)| (s as f64 / 64.0, y))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn auc_complement(data in grid_scores()) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&y| y == 0) && labels.iter().any(|&y| y == 1));
            let flipped: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_monotone_transform_invariant(data in grid_scores()) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&y| y == 0) && labels.iter().any(|&y| y == 1));
            let transformed: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 2.0).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&transformed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn auc_agrees_with_pairwise(data in grid_scores()) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&y| y == 0) && labels.iter().any(|&y| y == 1));
            let a = roc_auc(&scores, &labels).unwrap();
            let b = pairwise_auc(&scores, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn threshold_monotonicity(data in grid_scores()) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&y| y == 1));
            let taus = [0.1, 0.3, 0.5, 0.7, 0.9];
            let mut prev_pos = usize::MAX;
            let mut prev_recall = f64::INFINITY;
            let mut prev_fp = u64::MAX;
            for tau in taus {
                let preds: Vec<u8> = scores.iter().map(|&s| crate::tinylstm::classify(s, tau)).collect();
                let pos = preds.iter().filter(|&&p| p == 1).count();
                let cm = confusion(&preds, &labels).unwrap();
                let r = metrics(&cm).unwrap();
                prop_assert!(pos <= prev_pos);
                prop_assert!(r.recall <= prev_recall + 1e-15);
                prop_assert!(cm.fp <= prev_fp);
                prev_pos = pos;
                prev_recall = r.recall;
                prev_fp = cm.fp;
            }
        }
    }

    #[test]
    fn sweep_rejects_unknown_key() {
        let x = Matrix::zeros(12, 2);
        let y = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let inputs = SweepInputs {
            x_train: &x,
            y_train: &y,
            x_val: &x,
            y_val: &y,
            smote_k: 5,
            meta: ArtifactMeta::default(),
        };
        let mut grid = BTreeMap::new();
        grid.insert("gamma".to_string(), vec![1.0]);
        let err = sweep(&inputs, &TrainConfig::default(), &grid).unwrap_err();
        assert!(err.to_string().contains("valid keys"));
    }

    #[test]
    fn feature_matrix_reports_all_missing() {
        let t = TagTable {
            timestamps: vec![0.0, 1.0],
            columns: vec![("a".to_string(), crate::dataio::Kind::Analog)],
            values: Matrix::from_vec(2, 1, vec![1.0, 2.0]),
            labels: None,
        };
        let err = feature_matrix(&t, &["a".into(), "b".into(), "c".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b") && msg.contains("c"));
    }
}
