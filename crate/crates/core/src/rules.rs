//! Logic-rule labeling. Three cause-and-effect consistency checks produce
//! per-row indicators, OR-aggregated into the training labels:
//!
//! 1. pump/level: pump continuously ON over a trailing window yet the level
//!    barely moved,
//! 2. valve/flow: valve commanded open yet the line reads (near) zero flow,
//! 3. sensor freeze: a pump state transition with the level reading pinned
//!    for the samples right after it.
//!
//! Tolerances exist so ordinary sensor noise does not fire the rules; their
//! defaults are what the synthetic plant is calibrated against.

use serde::{Deserialize, Serialize};

use crate::dataio::TagTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    pub pump_tag: String,
    pub level_tag: String,
    pub valve_tag: String,
    pub flow_tag: String,
    /// Trailing samples of continuous ON required before rule 1 can fire.
    pub pump_window: usize,
    /// Max-minus-min of level below this while pumping means "no change".
    pub level_tolerance: f64,
    pub flow_zero_threshold: f64,
    /// Samples after a pump transition watched by rule 3.
    pub transition_window: usize,
    pub freeze_tolerance: f64,
    pub pump_on_value: f64,
    pub valve_open_value: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            pump_tag: "P_101".into(),
            level_tag: "LIT_101".into(),
            valve_tag: "MV_101".into(),
            flow_tag: "FIT_101".into(),
            pump_window: 10,
            level_tolerance: 0.5,
            flow_zero_threshold: 0.05,
            transition_window: 5,
            freeze_tolerance: 0.1,
            // Testbed state encoding: 1 = closed/off, 2 = open/on.
            pump_on_value: 2.0,
            valve_open_value: 2.0,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pump_window < 1 || self.transition_window < 1 {
            return Err(Error::config("rule windows must be >= 1"));
        }
        if self.level_tolerance < 0.0
            || self.flow_zero_threshold < 0.0
            || self.freeze_tolerance < 0.0
        {
            return Err(Error::config("rule tolerances must be >= 0"));
        }
        let tags = [
            &self.pump_tag,
            &self.level_tag,
            &self.valve_tag,
            &self.flow_tag,
        ];
        for i in 0..tags.len() {
            for j in i + 1..tags.len() {
                if tags[i] == tags[j] {
                    return Err(Error::config(format!(
                        "rule tags must be distinct, {} repeats",
                        tags[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleEvaluation {
    pub delta_pump: Vec<u8>,
    pub delta_valve: Vec<u8>,
    pub delta_freeze: Vec<u8>,
}

pub type LabelVector = Vec<u8>;

fn range_of(xs: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

/// Rule 1: continuous ON over the trailing `pump_window` samples ending at t
/// and level range over those samples within `level_tolerance`. Rows before
/// the first complete window are 0.
pub fn eval_pump_level(table: &TagTable, cfg: &RuleConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let pump = table.column(&cfg.pump_tag)?;
    let level = table.column(&cfg.level_tag)?;
    let n = pump.len();
    if cfg.pump_window > n {
        return Err(Error::data(format!(
            "pump_window {} exceeds table length {n}",
            cfg.pump_window
        )));
    }
    let w = cfg.pump_window;
    let mut out = vec![0u8; n];
    let mut on_run = 0usize;
    for t in 0..n {
        on_run = if pump[t] == cfg.pump_on_value {
            on_run + 1
        } else {
            0
        };
        if t + 1 >= w && on_run >= w && range_of(&level[t + 1 - w..=t]) <= cfg.level_tolerance {
            out[t] = 1;
        }
    }
    Ok(out)
}

/// Rule 2: valve open but the flow reading is within the zero band.
pub fn eval_valve_flow(table: &TagTable, cfg: &RuleConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let valve = table.column(&cfg.valve_tag)?;
    let flow = table.column(&cfg.flow_tag)?;
    Ok(valve
        .iter()
        .zip(&flow)
        .map(|(&v, &f)| u8::from(v == cfg.valve_open_value && f.abs() <= cfg.flow_zero_threshold))
        .collect())
}

/// Rule 3: a pump state transition at t0 with the level pinned from t0 up to
/// t, for t in [t0, t0+transition_window). The level range is over [t0, t]
/// inclusive, so the transition row itself always fires (single-point range
/// is 0 <= tolerance).
pub fn eval_sensor_freeze(table: &TagTable, cfg: &RuleConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let pump = table.column(&cfg.pump_tag)?;
    let level = table.column(&cfg.level_tag)?;
    let n = pump.len();
    if cfg.transition_window > n {
        return Err(Error::data(format!(
            "transition_window {} exceeds table length {n}",
            cfg.transition_window
        )));
    }
    let mut out = vec![0u8; n];
    for t0 in 1..n {
        if pump[t0] == pump[t0 - 1] {
            continue;
        }
        let mut lo = level[t0];
        let mut hi = level[t0];
        for t in t0..n.min(t0 + cfg.transition_window) {
            lo = lo.min(level[t]);
            hi = hi.max(level[t]);
            // Range over [t0, t] only grows with t; stop at first breach.
            if hi - lo > cfg.freeze_tolerance {
                break;
            }
            out[t] = 1;
        }
    }
    Ok(out)
}

pub fn evaluate(table: &TagTable, cfg: &RuleConfig) -> Result<RuleEvaluation> {
    Ok(RuleEvaluation {
        delta_pump: eval_pump_level(table, cfg)?,
        delta_valve: eval_valve_flow(table, cfg)?,
        delta_freeze: eval_sensor_freeze(table, cfg)?,
    })
}

/// y_t = max of the three indicators (logical OR).
pub fn aggregate_labels(eval: &RuleEvaluation) -> Result<LabelVector> {
    let n = eval.delta_pump.len();
    if eval.delta_valve.len() != n || eval.delta_freeze.len() != n {
        return Err(Error::data(format!(
            "rule indicator lengths differ: {} / {} / {}",
            n,
            eval.delta_valve.len(),
            eval.delta_freeze.len()
        )));
    }
    Ok((0..n)
        .map(|t| {
            eval.delta_pump[t]
                .max(eval.delta_valve[t])
                .max(eval.delta_freeze[t])
        })
        .collect())
}

/// Full labeling pass: evaluate all three rules and OR them.
pub fn label_table(table: &TagTable, cfg: &RuleConfig) -> Result<(LabelVector, RuleEvaluation)> {
    let eval = evaluate(table, cfg)?;
    let labels = aggregate_labels(&eval)?;
    Ok((labels, eval))
}
