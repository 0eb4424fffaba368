//! Deterministic toy water plant: a two-tank hysteresis process sampled at
//! 1 Hz, with reading-level anomaly injection and ground-truth annotation.
//!
//! Injections manipulate recorded readings, never the physics: the controller
//! keeps acting on true state while the logged values go wrong, which is the
//! deception scenario the logic rules exist to catch. Physics is noise-free
//! and fully determined by the config; the seed only drives measurement noise
//! and small placement jitter, so anomaly budgets are stable across seeds.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::dataio::{Kind, MappingEntry, TagMapping, TagTable};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Seed};
use crate::rules::{self, RuleConfig};

/// Tag roster: one flow, two levels, two valves, three analysers, one
/// differential pressure, two pump states, plus decoy names derived from
/// `decoy_prefix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagNames {
    pub flow: String,
    pub level1: String,
    pub valve1: String,
    pub pump: String,
    pub level2: String,
    pub valve2: String,
    pub dpit: String,
    pub ait1: String,
    pub ait2: String,
    pub ait3: String,
    pub pump3: String,
    pub decoy_prefix: String,
}

impl TagNames {
    pub fn plant_a() -> Self {
        TagNames {
            flow: "FIT_101".into(),
            level1: "LIT_101".into(),
            valve1: "MV_101".into(),
            pump: "P_101".into(),
            level2: "LIT_301".into(),
            valve2: "MV_302".into(),
            dpit: "DPIT_301".into(),
            ait1: "AIT_202".into(),
            ait2: "AIT_203".into(),
            ait3: "AIT_302".into(),
            pump3: "P3_STATE".into(),
            decoy_prefix: "XA".into(),
        }
    }

    /// Renamed roster standing in for a second site's historian.
    pub fn plant_b() -> Self {
        TagNames {
            flow: "FT_201".into(),
            level1: "LT_201".into(),
            valve1: "MV_201".into(),
            pump: "P_201".into(),
            level2: "LT_301".into(),
            valve2: "MV_402".into(),
            dpit: "DPT_301".into(),
            ait1: "AT_202".into(),
            ait2: "AT_203".into(),
            ait3: "AT_302".into(),
            pump3: "P4_STATE".into(),
            decoy_prefix: "XB".into(),
        }
    }

    /// Rate-of-change tag the historian derives from the level PV.
    pub fn roc_tag(&self) -> String {
        format!("{}_ROC", self.level1)
    }

    pub fn real_tags(&self) -> Vec<String> {
        vec![
            self.flow.clone(),
            self.level1.clone(),
            self.roc_tag(),
            self.valve1.clone(),
            self.pump.clone(),
            self.level2.clone(),
            self.valve2.clone(),
            self.dpit.clone(),
            self.ait1.clone(),
            self.ait2.clone(),
            self.ait3.clone(),
            self.pump3.clone(),
        ]
    }

    /// Rule tags rebound to this roster; thresholds stay at defaults.
    pub fn rule_config(&self) -> RuleConfig {
        RuleConfig {
            pump_tag: self.pump.clone(),
            level_tag: self.level1.clone(),
            valve_tag: self.valve1.clone(),
            flow_tag: self.flow.clone(),
            ..RuleConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n_rows: usize,
    pub seed: Seed,
    pub capacity: f64,
    /// Pump feed into tank 1, units/s.
    pub inflow: f64,
    /// Tank 1 to tank 2 transfer when the main valve is open, units/s.
    pub outflow: f64,
    /// Pump ON at or below this level, OFF at or above `level_hi`.
    pub level_lo: f64,
    pub level_hi: f64,
    pub level_start: f64,
    /// Main valve schedule: open for the first `valve_open_rows` of each
    /// `valve_period` rows.
    pub valve_period: usize,
    pub valve_open_rows: usize,
    pub level_noise: f64,
    pub flow_noise: f64,
    pub analyser_noise: f64,
    pub decoys: bool,
    pub names: TagNames,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            n_rows: 30_000,
            seed: Seed(42),
            capacity: 100.0,
            inflow: 0.25,
            outflow: 0.18,
            level_lo: 20.0,
            level_hi: 80.0,
            level_start: 50.0,
            valve_period: 60,
            valve_open_rows: 45,
            level_noise: 0.05,
            flow_noise: 0.02,
            analyser_noise: 1.0,
            decoys: true,
            names: TagNames::plant_a(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 1 {
            return Err(Error::config("plant: n_rows must be >= 1"));
        }
        if !(self.level_lo < self.level_hi && self.level_hi <= self.capacity) {
            return Err(Error::config("plant: need level_lo < level_hi <= capacity"));
        }
        if self.inflow <= 0.0 || self.outflow <= 0.0 {
            return Err(Error::config("plant: rates must be > 0"));
        }
        if self.level_noise < 0.0 || self.flow_noise < 0.0 || self.analyser_noise < 0.0 {
            return Err(Error::config("plant: noise std must be >= 0"));
        }
        if self.valve_period < 1 || self.valve_open_rows > self.valve_period {
            return Err(Error::config("plant: valve schedule invalid"));
        }
        if !(0.0..=self.capacity).contains(&self.level_start) {
            return Err(Error::config("plant: level_start outside tank"));
        }
        Ok(())
    }
}

/// Tank 2 constants. Fixed rather than configurable: they only shape the
/// secondary tags, and the rules never look at them.
const P3_DRAIN: f64 = 0.25;
const MV302_DRAIN: f64 = 0.04;
const P3_ON_AT: f64 = 55.0;
const P3_OFF_AT: f64 = 30.0;
const LEVEL2_START: f64 = 40.0;
const MV302_PERIOD: usize = 100;
const MV302_OPEN_ROWS: usize = 50;

/// State encoding shared with the rules: 1 = closed/off, 2 = open/on.
const OFF: f64 = 1.0;
const ON: f64 = 2.0;

struct Physics {
    level1: Vec<f64>,
    level2: Vec<f64>,
    pump_on: Vec<bool>,
    valve1_open: Vec<bool>,
    p3_on: Vec<bool>,
    mv302_open: Vec<bool>,
}

fn run_physics(cfg: &PlantConfig) -> Physics {
    let n = cfg.n_rows;
    let mut ph = Physics {
        level1: Vec::with_capacity(n),
        level2: Vec::with_capacity(n),
        pump_on: Vec::with_capacity(n),
        valve1_open: Vec::with_capacity(n),
        p3_on: Vec::with_capacity(n),
        mv302_open: Vec::with_capacity(n),
    };
    let mut level1 = cfg.level_start;
    let mut level2 = LEVEL2_START;
    let mut pump = true;
    let mut p3 = false;
    for t in 0..n {
        if level1 <= cfg.level_lo {
            pump = true;
        } else if level1 >= cfg.level_hi {
            pump = false;
        }
        if level2 >= P3_ON_AT {
            p3 = true;
        } else if level2 <= P3_OFF_AT {
            p3 = false;
        }
        let valve1 = (t % cfg.valve_period) < cfg.valve_open_rows;
        let mv302 = (t % MV302_PERIOD) < MV302_OPEN_ROWS;
        ph.level1.push(level1);
        ph.level2.push(level2);
        ph.pump_on.push(pump);
        ph.valve1_open.push(valve1);
        ph.p3_on.push(p3);
        ph.mv302_open.push(mv302);

        let transfer = if valve1 { cfg.outflow } else { 0.0 };
        level1 = (level1 + if pump { cfg.inflow } else { 0.0 } - transfer)
            .clamp(0.0, cfg.capacity);
        let drain2 = if p3 { P3_DRAIN } else { 0.0 } + if mv302 { MV302_DRAIN } else { 0.0 };
        level2 = (level2 + transfer - drain2).clamp(0.0, cfg.capacity);
    }
    ph
}

fn state(b: bool) -> f64 {
    if b {
        ON
    } else {
        OFF
    }
}

/// Normal operation trace. Ground truth is all zeros by construction.
pub fn simulate(cfg: &PlantConfig) -> Result<(TagTable, Vec<u8>)> {
    cfg.validate()?;
    let n = cfg.n_rows;
    let ph = run_physics(cfg);
    let names = &cfg.names;

    let noise = |label: &str| -> Vec<f64> {
        let mut r = cfg.seed.derive(&format!("noise/{label}")).rng();
        (0..n).map(|_| gauss(&mut r)).collect()
    };
    let n_flow = noise("flow");
    let n_level1 = noise("level1");
    let n_level2 = noise("level2");
    let n_dpit = noise("dpit");
    let n_ait1 = noise("ait1");
    let n_ait2 = noise("ait2");
    let n_ait3 = noise("ait3");
    let n_mv302 = noise("mv302");
    let n_p3 = noise("p3");
    let n_twin_a = noise("twin_a");
    let n_twin_b = noise("twin_b");
    let n_mix = noise("mix");
    let n_hum1 = noise("hum_1");
    let n_hum2 = noise("hum_2");

    let s = cfg.analyser_noise;
    let mut flow = Vec::with_capacity(n);
    let mut level1 = Vec::with_capacity(n);
    let mut level2 = Vec::with_capacity(n);
    let mut dpit = Vec::with_capacity(n);
    let mut ait1 = Vec::with_capacity(n);
    let mut ait2 = Vec::with_capacity(n);
    let mut ait3 = Vec::with_capacity(n);
    for t in 0..n {
        let transfer = if ph.valve1_open[t] { cfg.outflow } else { 0.0 };
        let drain2 = if ph.p3_on[t] { P3_DRAIN } else { 0.0 }
            + if ph.mv302_open[t] { MV302_DRAIN } else { 0.0 };
        flow.push(transfer + cfg.flow_noise * n_flow[t]);
        level1.push(ph.level1[t] + cfg.level_noise * n_level1[t]);
        level2.push(ph.level2[t] + cfg.level_noise * n_level2[t]);
        dpit.push(8.0 * drain2 + 0.5 * n_dpit[t]);
        ait1.push(
            180.0 + 0.6 * ph.level1[t] + 20.0 * (TAU * t as f64 / 890.0).sin()
                + 0.5 * s * n_ait1[t],
        );
        ait2.push(
            7.2 + 0.5 * f64::from(ph.pump_on[t])
                + 0.4 * (TAU * t as f64 / 730.0 + 1.0).sin()
                + 0.05 * s * n_ait2[t],
        );
        ait3.push(
            95.0 + 0.4 * ph.level2[t]
                + 10.0 * (TAU * t as f64 / 1170.0 + 2.0).sin()
                + 0.3 * s * n_ait3[t],
        );
    }
    // Historian-side rate of change of the logged level PV. Derived from the
    // recorded reading, so injections that pin the level recompute it.
    let roc = roc_of(&level1);

    let mut tags: Vec<(String, Kind, Vec<f64>)> = vec![
        (names.flow.clone(), Kind::Analog, flow),
        (names.level1.clone(), Kind::Analog, level1),
        (names.roc_tag(), Kind::Analog, roc),
        (
            names.valve1.clone(),
            Kind::Binary,
            ph.valve1_open.iter().map(|&b| state(b)).collect(),
        ),
        (
            names.pump.clone(),
            Kind::Binary,
            ph.pump_on.iter().map(|&b| state(b)).collect(),
        ),
        (names.level2.clone(), Kind::Analog, level2),
        // Non-rule state tags are logged the way a historian samples a 4-20mA
        // loop: a small analog residue rides on the nominal state. The rule
        // tags valve1/pump stay exact because the rules match them by value.
        (
            names.valve2.clone(),
            Kind::Analog,
            (0..n)
                .map(|t| state(ph.mv302_open[t]) + 0.01 * n_mv302[t])
                .collect(),
        ),
        (names.dpit.clone(), Kind::Analog, dpit),
        (names.ait1.clone(), Kind::Analog, ait1.clone()),
        (names.ait2.clone(), Kind::Analog, ait2),
        (names.ait3.clone(), Kind::Analog, ait3.clone()),
        (
            names.pump3.clone(),
            Kind::Analog,
            (0..n).map(|t| state(ph.p3_on[t]) + 0.01 * n_p3[t]).collect(),
        ),
    ];
    if cfg.decoys {
        // TWIN pair: white near-duplicates for the correlation filter.
        // MIX: tight linear blend of two analysers for the VIF stage.
        // HUM pair: independent white noise for the importance stage.
        let p = &names.decoy_prefix;
        tags.push((format!("{p}_TWIN_A"), Kind::Analog, n_twin_a.clone()));
        tags.push((
            format!("{p}_TWIN_B"),
            Kind::Analog,
            (0..n).map(|t| n_twin_a[t] + 0.25 * n_twin_b[t]).collect(),
        ));
        tags.push((
            format!("{p}_MIX"),
            Kind::Analog,
            (0..n)
                .map(|t| 0.3 * ait1[t] + 0.7 * ait3[t] + 0.3 * n_mix[t])
                .collect(),
        ));
        tags.push((format!("{p}_HUM_1"), Kind::Analog, n_hum1));
        tags.push((format!("{p}_HUM_2"), Kind::Analog, n_hum2));
    }

    let columns: Vec<(String, Kind)> = tags.iter().map(|(n, k, _)| (n.clone(), *k)).collect();
    let mut values = Matrix::zeros(n, tags.len());
    for (c, (_, _, v)) in tags.iter().enumerate() {
        for t in 0..n {
            values.set(t, c, v[t]);
        }
    }
    let table = TagTable {
        timestamps: (0..n).map(|t| t as f64).collect(),
        columns,
        values,
        labels: None,
    };
    Ok((table, vec![0u8; n]))
}

fn roc_of(level: &[f64]) -> Vec<f64> {
    let mut roc = Vec::with_capacity(level.len());
    for t in 0..level.len() {
        roc.push(if t == 0 { 0.0 } else { level[t] - level[t - 1] });
    }
    roc
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    PumpLevelFreeze,
    ValveFlowBlock,
    SensorFreezeOnTransition,
}

/// `intensity` bounds the residual wobble written into the pinned readings:
/// frozen levels move within +-intensity of the pinned base, a blocked flow
/// reads within +-intensity of zero. The matching rule fires as long as the
/// wobble stays inside its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub start: usize,
    pub duration: usize,
    pub intensity: f64,
}

/// Applies reading-level injections and keeps the ground truth in step.
/// After each apply, truth is the union of every injected kind's own firing
/// set on the table as edited so far.
pub struct Injector<'a> {
    table: &'a mut TagTable,
    truth: &'a mut Vec<u8>,
    rules_cfg: &'a RuleConfig,
    seed: Seed,
    count: u64,
    applied: Vec<(AnomalyKind, usize, usize)>,
}

impl<'a> Injector<'a> {
    pub fn new(
        table: &'a mut TagTable,
        truth: &'a mut Vec<u8>,
        rules_cfg: &'a RuleConfig,
        seed: Seed,
    ) -> Result<Self> {
        if truth.len() != table.n_rows() {
            return Err(Error::data("injector: truth length differs from table"));
        }
        Ok(Injector {
            table,
            truth,
            rules_cfg,
            seed,
            count: 0,
            applied: Vec::new(),
        })
    }

    pub fn apply(&mut self, spec: &AnomalySpec) -> Result<()> {
        let n = self.table.n_rows();
        if spec.duration < 1 {
            return Err(Error::config("injection: duration must be >= 1"));
        }
        if spec.start + spec.duration > n {
            return Err(Error::config(format!(
                "injection [{}, {}) outside trace of {n} rows",
                spec.start,
                spec.start + spec.duration
            )));
        }
        if !(spec.intensity >= 0.0 && spec.intensity.is_finite()) {
            return Err(Error::config("injection: intensity must be >= 0"));
        }
        for &(kind, s, d) in &self.applied {
            if kind == spec.kind && spec.start < s + d && s < spec.start + spec.duration {
                return Err(Error::config(format!(
                    "injection [{}, {}) overlaps an earlier {:?} injection",
                    spec.start,
                    spec.start + spec.duration,
                    kind
                )));
            }
        }
        let mut rng = self.seed.derive_idx("inject", self.count).rng();
        self.count += 1;
        let end = spec.start + spec.duration;
        let wobble = |rng: &mut ChaCha8Rng| spec.intensity * (2.0 * rng::uniform_f64(rng) - 1.0);

        let delta = match spec.kind {
            AnomalyKind::PumpLevelFreeze => {
                let col = self.col(&self.rules_cfg.level_tag)?;
                let base = self.table.values.get(spec.start, col);
                for t in spec.start..end {
                    let v = base + wobble(&mut rng);
                    self.table.values.set(t, col, v);
                }
                self.refresh_roc(spec.start, end);
                rules::eval_pump_level(self.table, self.rules_cfg)?
            }
            AnomalyKind::ValveFlowBlock => {
                let col = self.col(&self.rules_cfg.flow_tag)?;
                for t in spec.start..end {
                    let v = wobble(&mut rng);
                    self.table.values.set(t, col, v);
                }
                rules::eval_valve_flow(self.table, self.rules_cfg)?
            }
            AnomalyKind::SensorFreezeOnTransition => {
                if spec.start < 1 {
                    return Err(Error::config(
                        "sensor freeze needs a prior row to define the transition",
                    ));
                }
                let pump_col = self.col(&self.rules_cfg.pump_tag)?;
                let level_col = self.col(&self.rules_cfg.level_tag)?;
                // Recorded pump state flips against the previous row; the
                // physical pump is untouched.
                let forced = if self.table.values.get(spec.start - 1, pump_col) == ON {
                    OFF
                } else {
                    ON
                };
                let base = self.table.values.get(spec.start - 1, level_col);
                for t in spec.start..end {
                    self.table.values.set(t, pump_col, forced);
                    let v = base + wobble(&mut rng);
                    self.table.values.set(t, level_col, v);
                }
                self.refresh_roc(spec.start, end);
                rules::eval_sensor_freeze(self.table, self.rules_cfg)?
            }
        };
        for (t, &d) in delta.iter().enumerate() {
            self.truth[t] = self.truth[t].max(d);
        }
        self.applied.push((spec.kind, spec.start, spec.duration));
        Ok(())
    }

    fn col(&self, tag: &str) -> Result<usize> {
        self.table
            .col_index(tag)
            .ok_or_else(|| Error::data(format!("injection: tag {tag:?} not in table")))
    }

    /// The historian's rate tag derives from the logged level PV, so an edit
    /// to rows [start, end) of the level invalidates rates [start, end].
    fn refresh_roc(&mut self, start: usize, end: usize) {
        let roc_name = format!("{}_ROC", self.rules_cfg.level_tag);
        let Some(roc_col) = self.table.col_index(&roc_name) else {
            return;
        };
        let level_col = match self.table.col_index(&self.rules_cfg.level_tag) {
            Some(c) => c,
            None => return,
        };
        let n = self.table.n_rows();
        for t in start..=end.min(n - 1) {
            let v = if t == 0 {
                0.0
            } else {
                self.table.values.get(t, level_col) - self.table.values.get(t - 1, level_col)
            };
            self.table.values.set(t, roc_col, v);
        }
    }
}

/// One-shot wrapper over `Injector` for a single spec.
pub fn inject(
    table: &mut TagTable,
    truth: &mut Vec<u8>,
    spec: &AnomalySpec,
    rules_cfg: &RuleConfig,
    seed: Seed,
) -> Result<()> {
    Injector::new(table, truth, rules_cfg, seed)?.apply(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Small,
    Baseline,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Profile> {
        match s {
            "small" => Ok(Profile::Small),
            "baseline" => Ok(Profile::Baseline),
            other => Err(Error::config(format!(
                "unknown profile {other:?}; valid profiles: small, baseline"
            ))),
        }
    }

    pub fn n_rows(self) -> usize {
        match self {
            Profile::Small => 3_000,
            Profile::Baseline => 30_000,
        }
    }
}

/// Injection sizing. Budgets are fractions of rows that should end up
/// carrying each rule's label; durations set the quantization.
struct PlanParams {
    pump_d: usize,
    valve_d: usize,
    freeze_d: usize,
    margin: usize,
    pump_budget: f64,
    valve_budget: f64,
    freeze_budget: f64,
}

fn plan_params(n_rows: usize) -> PlanParams {
    if n_rows >= 10_000 {
        PlanParams {
            pump_d: 280,
            valve_d: 380,
            freeze_d: 6,
            margin: 15,
            pump_budget: 0.20,
            valve_budget: 0.22,
            freeze_budget: 0.007,
        }
    } else {
        PlanParams {
            pump_d: 90,
            valve_d: 110,
            freeze_d: 6,
            margin: 15,
            pump_budget: 0.20,
            valve_budget: 0.22,
            freeze_budget: 0.007,
        }
    }
}

/// Chooses disjoint injection intervals off the deterministic state columns.
/// Pump freezes sit inside pump-ON runs; flow blocks start where the stage-3
/// pump and secondary valve are active, which gives those tags a real,
/// per-row association with the label; sensor freezes spread over what is
/// left. Seeded jitter decorrelates plants without moving the budget.
fn plan_injections(table: &TagTable, names: &TagNames, seed: Seed) -> Result<Vec<AnomalySpec>> {
    let n = table.n_rows();
    let p = plan_params(n);
    let pump = table.column(&names.pump)?;
    let valve1 = table.column(&names.valve1)?;
    let p3 = table.column(&names.pump3)?;
    let mv302 = table.column(&names.valve2)?;
    let mut rng = seed.derive("plan").rng();
    let mut jitter = |m: usize| rng::uniform_index(&mut rng, m as u64) as usize;

    let mut busy = vec![false; n];
    let reserve = |busy: &mut Vec<bool>, start: usize, len: usize, margin: usize| {
        let a = start.saturating_sub(margin);
        let b = (start + len + margin).min(n);
        for t in a..b {
            busy[t] = true;
        }
    };
    let free = |busy: &[bool], start: usize, len: usize, margin: usize| -> bool {
        let a = start.saturating_sub(margin);
        let b = start + len + margin;
        b <= n && busy[a..b].iter().all(|&x| !x)
    };

    let mut specs = Vec::new();

    // Pump-level freezes: tile the ON runs until the budget is met.
    let mut pump_rows = 0usize;
    let pump_target = (p.pump_budget * n as f64) as usize;
    let mut run_start = None;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for t in 0..=n {
        let on = t < n && pump[t] == ON;
        match (run_start, on) {
            (None, true) => run_start = Some(t),
            (Some(a), false) => {
                runs.push((a, t));
                run_start = None;
            }
            _ => {}
        }
    }
    'pump: for &(a, b) in &runs {
        let mut pos = a + 10 + jitter(8);
        while pos + p.pump_d + 10 <= b {
            if pump_rows >= pump_target {
                break 'pump;
            }
            if free(&busy, pos, p.pump_d, p.margin) {
                reserve(&mut busy, pos, p.pump_d, p.margin);
                specs.push(AnomalySpec {
                    kind: AnomalyKind::PumpLevelFreeze,
                    start: pos,
                    duration: p.pump_d,
                    intensity: 0.0,
                });
                pump_rows += p.pump_d - 9;
                pos += p.pump_d + 2 * p.margin + jitter(8);
            } else {
                pos += 5;
            }
        }
    }

    // Flow blocks: the label only lands on valve-open rows, so count those.
    // First pass gates starts on stage-3 activity; a second ungated pass
    // fills any budget the gating left unmet.
    let valve_target = (p.valve_budget * n as f64) as usize;
    let mut valve_rows = 0usize;
    for pass in 0..2 {
        let mut t = 1 + jitter(20);
        while t + p.valve_d <= n && valve_rows < valve_target {
            let gated = pass == 0 && !(p3[t] > 1.5 && mv302[t] > 1.5);
            if !gated && free(&busy, t, p.valve_d, p.margin) {
                let open = valve1[t..t + p.valve_d].iter().filter(|&&v| v == ON).count();
                if open > p.valve_d / 3 {
                    reserve(&mut busy, t, p.valve_d, p.margin);
                    specs.push(AnomalySpec {
                        kind: AnomalyKind::ValveFlowBlock,
                        start: t,
                        duration: p.valve_d,
                        intensity: 0.01,
                    });
                    valve_rows += open;
                    t += p.valve_d + p.margin + 10 + jitter(8);
                    continue;
                }
            }
            t += 7;
        }
        if valve_rows >= valve_target {
            break;
        }
    }

    // Sensor freezes: short forced transitions in the remaining space.
    let freeze_target = (p.freeze_budget * n as f64) as usize;
    let mut freeze_rows = 0usize;
    let mut t = 30 + jitter(40);
    while t + p.freeze_d <= n && freeze_rows < freeze_target {
        if free(&busy, t, p.freeze_d, p.margin) {
            reserve(&mut busy, t, p.freeze_d, p.margin);
            specs.push(AnomalySpec {
                kind: AnomalyKind::SensorFreezeOnTransition,
                start: t,
                duration: p.freeze_d,
                intensity: 0.0,
            });
            freeze_rows += p.freeze_d;
        }
        t += 150 + jitter(30);
    }

    Ok(specs)
}

/// Simulates one plant and injects all three anomaly kinds per the plan.
/// Returns the table (no label column) and the injection ground truth.
pub fn injected_plant(n_rows: usize, seed: Seed, names: TagNames) -> Result<(TagTable, Vec<u8>)> {
    let cfg = PlantConfig {
        n_rows,
        seed: seed.derive("plant"),
        names,
        ..PlantConfig::default()
    };
    let (mut table, mut truth) = simulate(&cfg)?;
    let rules_cfg = cfg.names.rule_config();
    let specs = plan_injections(&table, &cfg.names, seed.derive("plan"))?;
    let mut injector = Injector::new(&mut table, &mut truth, &rules_cfg, seed.derive("inject"))?;
    for spec in &specs {
        injector.apply(spec)?;
    }
    // Rare natural firings recorded mid-sequence can be unmade by a later
    // reading edit, so ground truth is rebuilt from the finished table; this
    // keeps truth exactly the rules' firing set on what the generator ships.
    let (truth, _) = rules::label_table(&table, &rules_cfg)?;
    Ok((table, truth))
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub plant_a: TagTable,
    pub truth_a: Vec<u8>,
    pub plant_b: TagTable,
    pub truth_b: Vec<u8>,
    /// plant B source tags onto plant A canonical names, all twelve real tags.
    pub mapping: TagMapping,
}

pub fn label_fraction(labels: &[u8]) -> f64 {
    labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64
}

/// Two disjoint seeded plants: A trains, B (renamed tags plus mapping)
/// evaluates transfer. The baseline profile asserts the anomalous fraction
/// lands in the construction band.
pub fn make_benchmark(profile: Profile, seed: Seed) -> Result<Benchmark> {
    let n = profile.n_rows();
    let (plant_a, truth_a) = injected_plant(n, seed.derive("plant_a"), TagNames::plant_a())?;
    let (plant_b, truth_b) = injected_plant(n, seed.derive("plant_b"), TagNames::plant_b())?;
    let a_names = TagNames::plant_a();
    let b_names = TagNames::plant_b();
    let mapping = TagMapping {
        entries: b_names
            .real_tags()
            .into_iter()
            .zip(a_names.real_tags())
            .map(|(source, canonical)| MappingEntry { source, canonical })
            .collect(),
    };
    mapping.validate()?;

    let (labels_a, _) = rules::label_table(&plant_a, &a_names.rule_config())?;
    let frac = label_fraction(&labels_a);
    let band = match profile {
        Profile::Baseline => (0.43, 0.47),
        Profile::Small => (0.35, 0.55),
    };
    if !(frac >= band.0 && frac <= band.1) {
        return Err(Error::data(format!(
            "benchmark calibration: anomalous fraction {frac:.4} outside [{}, {}]",
            band.0, band.1
        )));
    }
    Ok(Benchmark {
        plant_a,
        truth_a,
        plant_b,
        truth_b,
        mapping,
    })
}
