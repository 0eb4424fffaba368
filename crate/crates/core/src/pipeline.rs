//! End-to-end orchestration over the other modules: derive labels, select
//! features, prepare windows, train. One seed flows in; every stage derives
//! its own stream by purpose label, so a whole run replays bit-identically.

use serde_json::Value;

use crate::dataio::TagTable;
use crate::error::{Error, Result};
use crate::eval;
use crate::featsel::{self, FeatureReport, FeatureSelConfig};
use crate::matrix::Matrix;
use crate::prep::{self, ScalerParams, SequenceBatch, SplitIndices, TrainWindows};
use crate::rng::Seed;
use crate::rules::{self, RuleConfig};
use crate::tinylstm::ModelArtifact;
use crate::trainer::{self, ArtifactMeta, TrainConfig, TrainReport};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub rules: RuleConfig,
    pub featsel: FeatureSelConfig,
    pub train: TrainConfig,
    /// Train fraction of the stratified row split.
    pub split_ratio: f64,
    pub smote_k: usize,
    /// `rows` mode balances raw rows before windowing instead of balancing
    /// window units; see prep for the trade-off.
    pub rows_mode_smote: bool,
    /// Echoed verbatim into the model artifact.
    pub provenance: Value,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            rules: RuleConfig::default(),
            featsel: FeatureSelConfig::default(),
            train: TrainConfig::default(),
            split_ratio: 0.8,
            smote_k: 5,
            rows_mode_smote: false,
            provenance: Value::Null,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("split_ratio must be in (0, 1)"));
        }
        if self.smote_k < 1 {
            return Err(Error::config("smote_k must be >= 1"));
        }
        self.rules.validate()?;
        self.featsel.validate()?;
        self.train.validate()
    }
}

/// Labels straight from the table when present, else from the rules.
pub fn labels_of(table: &TagTable, rules_cfg: &RuleConfig) -> Result<Vec<u8>> {
    match &table.labels {
        Some(l) => Ok(l.clone()),
        None => Ok(rules::label_table(table, rules_cfg)?.0),
    }
}

fn gather(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), x.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(x.row(r));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: TrainWindows,
    pub val: SequenceBatch,
    pub scaler: ScalerParams,
    pub split: SplitIndices,
}

/// Split rows, fit the scaler on the train partition only, window each
/// partition independently, then balance and shuffle the train windows.
pub fn prepare(
    table: &TagTable,
    labels: &[u8],
    features: &[String],
    w: usize,
    smote_k: usize,
    split_ratio: f64,
    rows_mode: bool,
    seed: Seed,
) -> Result<Prepared> {
    let rows = prepare_rows(table, labels, features, split_ratio, seed)?;
    let train = if rows_mode {
        prep::train_windows_rows_mode(&rows.x_train, &rows.y_train, w, smote_k, seed)?
    } else {
        prep::train_windows_smote(rows.x_train, rows.y_train, w, smote_k, seed)?
    };
    let val = prep::build_windows(&rows.x_val, &rows.y_val, w)?;
    Ok(Prepared {
        train,
        val,
        scaler: rows.scaler,
        split: rows.split,
    })
}

/// Row-stage output: projected, split, and scaled, but not yet windowed.
/// Sweeps reuse this across points because windowing depends on W.
pub struct PreparedRows {
    pub x_train: Matrix,
    pub y_train: Vec<u8>,
    pub x_val: Matrix,
    pub y_val: Vec<u8>,
    pub scaler: ScalerParams,
    pub split: SplitIndices,
}

pub fn prepare_rows(
    table: &TagTable,
    labels: &[u8],
    features: &[String],
    split_ratio: f64,
    seed: Seed,
) -> Result<PreparedRows> {
    let x = eval::feature_matrix(table, features)?;
    if labels.len() != x.rows() {
        return Err(Error::data(format!(
            "prepare: {} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let split = prep::stratified_split(labels, split_ratio, seed)?;
    let x_train = gather(&x, &split.train);
    let y_train: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let x_val = gather(&x, &split.validation);
    let y_val: Vec<u8> = split.validation.iter().map(|&i| labels[i]).collect();

    let scaler = prep::fit_scaler(&x_train)?;
    let x_train = prep::apply_scaler(&x_train, &scaler)?;
    let x_val = prep::apply_scaler(&x_val, &scaler)?;
    Ok(PreparedRows {
        x_train,
        y_train,
        x_val,
        y_val,
        scaler,
        split,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifact: ModelArtifact,
    pub report: TrainReport,
    pub features: FeatureReport,
}

/// Full training pipeline on a single table.
pub fn run(table: &TagTable, opts: &RunOptions, seed: Seed) -> Result<RunOutput> {
    opts.validate()?;
    let labels = labels_of(table, &opts.rules)?;
    let features = featsel::select_features(table, &labels, &opts.featsel, seed.derive("select"))?;
    let prepared = prepare(
        table,
        &labels,
        &features.selected,
        opts.train.w,
        opts.smote_k,
        opts.split_ratio,
        opts.rows_mode_smote,
        seed,
    )?;
    let meta = ArtifactMeta {
        scaler: prepared.scaler.clone(),
        features: features.clone(),
        rule_config: opts.rules.clone(),
        provenance: opts.provenance.clone(),
    };
    let mut cfg = opts.train.clone();
    cfg.seed = seed.derive("train");
    let (artifact, report) = trainer::train_incremental(&prepared.train, &prepared.val, &cfg, meta, None)?;
    Ok(RunOutput {
        artifact,
        report,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthplant::{self, TagNames};

    #[test]
    fn pipeline_runs_on_small_plant() {
        let (table, _) =
            synthplant::injected_plant(3000, Seed(7).derive("plant_a"), TagNames::plant_a())
                .unwrap();
        let opts = RunOptions {
            rules: TagNames::plant_a().rule_config(),
            ..RunOptions::default()
        };
        let out = run(&table, &opts, Seed(7)).unwrap();
        assert_eq!(out.features.selected.len(), 10);
        assert_eq!(out.artifact.features.selected, out.features.selected);
        assert!(out.report.final_val_f1 > 0.80, "val F1 {}", out.report.final_val_f1);
        // Validation partition has no synthetic windows and the scaler came
        // from train rows only: the leakage guards the split carries.
        assert!(out
            .report
            .logs
            .iter()
            .all(|l| l.val_f1.is_none() || l.val_f1.unwrap() <= 1.0));
    }

    #[test]
    fn prepare_balances_and_windows() {
        let (table, _) =
            synthplant::injected_plant(1500, Seed(3).derive("plant_a"), TagNames::plant_a())
                .unwrap();
        let labels = labels_of(&table, &TagNames::plant_a().rule_config()).unwrap();
        let names = table.tag_names();
        let p = prepare(&table, &labels, &names, 5, 5, 0.8, false, Seed(3)).unwrap();
        let (n0, n1) = p.train.class_counts();
        assert_eq!(n0, n1);
        assert_eq!(p.val.windows.rows(), p.split.validation.len() - 5 + 1);
    }
}
