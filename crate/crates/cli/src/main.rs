use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tiilstm_core::dataio::{self, TagMapping, TagTable};
use tiilstm_core::error::{Error, Result};
use tiilstm_core::eval::{self, SweepInputs};
use tiilstm_core::exec;
use tiilstm_core::featsel::{self, FeatureReport, FeatureSelConfig};
use tiilstm_core::pipeline;
use tiilstm_core::rng::Seed;
use tiilstm_core::rules::{self, RuleConfig};
use tiilstm_core::synthplant::{self, Profile};
use tiilstm_core::tinylstm;
use tiilstm_core::trainer::{self, ArtifactMeta, TrainConfig};

/// Version of the JSON layout used for config files, report envelopes and
/// `--json` stdout. Bump only on breaking layout changes.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "tiilstm", version, about = "Logic-labeled anomaly detection pipeline for process logs")]
struct Cli {
    /// JSON run config file. Flags override file values, file values
    /// override built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed. Every random stream derives from it by purpose label.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Emit one machine-readable JSON object on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for data-parallel math (0 = library default).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-plant benchmark into a directory.
    Synth {
        /// Benchmark size: small or baseline.
        #[arg(long, default_value = "baseline")]
        profile: String,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Derive logic-rule labels for a process log and write a labeled copy.
    Label {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Run three-stage feature selection and write the report as JSON.
    Select {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Number of features to keep (overrides config).
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Train the incremental detector on a labeled or rule-labelable log.
    Train {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Feature report from `select`.
        #[arg(long, value_name = "JSON")]
        features: PathBuf,
        #[arg(long, value_name = "JSON")]
        model_out: PathBuf,
        /// Per-chunk training log CSV.
        #[arg(long, value_name = "CSV")]
        log_out: Option<PathBuf>,
        /// Existing model whose weights seed this run (optimizer state
        /// restarts fresh).
        #[arg(long, value_name = "JSON")]
        resume: Option<PathBuf>,
    },
    /// Score a log with a trained model and report metrics.
    Eval {
        #[arg(long, value_name = "JSON")]
        model: PathBuf,
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Tag mapping JSON for logs whose column names differ from the
        /// training plant.
        #[arg(long, value_name = "JSON")]
        mapping: Option<PathBuf>,
        /// Decision threshold (overrides the model's stored default).
        #[arg(long)]
        tau: Option<f64>,
        /// Write the ROC curve to this CSV.
        #[arg(long, value_name = "CSV")]
        emit_roc: Option<PathBuf>,
        /// Write the full report envelope to this JSON file.
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
    },
    /// One-at-a-time parameter sweep; writes a plot-ready CSV table.
    Sweep {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Grid JSON mapping parameter names (W, B, C, U, tau) to value
        /// lists. Omitted or empty means baseline only.
        #[arg(long, value_name = "JSON")]
        grid: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
}

/// Everything a run needs, aggregated so one file can pin a whole
/// experiment. Unknown keys are rejected; missing keys take defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    schema_version: u32,
    seed: u64,
    rules: RuleConfig,
    featsel: FeatureSelConfig,
    train: TrainConfig,
    split_ratio: f64,
    smote_k: usize,
    rows_mode_smote: bool,
    /// Default output directory for commands that take none.
    out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            rules: RuleConfig::default(),
            featsel: FeatureSelConfig::default(),
            train: TrainConfig::default(),
            split_ratio: 0.8,
            smote_k: 5,
            rows_mode_smote: false,
            out_dir: ".".to_string(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config schema_version {} unsupported; this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.rules.validate()?;
        self.train.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("split_ratio must be in (0, 1)"));
        }
        if self.smote_k < 1 {
            return Err(Error::config("smote_k must be >= 1"));
        }
        Ok(())
    }
}

fn load_run_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<RunConfig> {
    let mut rc = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::config(format!("config {}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::config(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed_flag {
        rc.seed = s;
    }
    rc.validate()?;
    Ok(rc)
}

/// Envelope shared by JSON stdout and report files: schema version, command
/// name, the effective config after precedence, and the payload.
fn envelope(command: &str, rc: &RunConfig, body: serde_json::Value) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "effective_config": rc,
        "body": body,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn emit(json_mode: bool, env: &serde_json::Value, human: &str) {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(env).expect("serializable envelope"));
    } else {
        print!("{human}");
    }
}

fn load_table(path: &Path) -> Result<TagTable> {
    dataio::load_csv(path, None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TIILSTM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        exec::configure_threads(n);
    }
    let rc = load_run_config(cli.config.as_deref(), cli.seed)?;
    match cli.cmd {
        Cmd::Synth { profile, out } => cmd_synth(&rc, &profile, &out, cli.json),
        Cmd::Label { input, out } => cmd_label(&rc, &input, &out, cli.json),
        Cmd::Select { input, target, out } => cmd_select(&rc, &input, target, &out, cli.json),
        Cmd::Train {
            input,
            features,
            model_out,
            log_out,
            resume,
        } => cmd_train(&rc, &input, &features, &model_out, log_out.as_deref(), resume.as_deref(), cli.json),
        Cmd::Eval {
            model,
            input,
            mapping,
            tau,
            emit_roc,
            out,
        } => cmd_eval(&rc, &model, &input, mapping.as_deref(), tau, emit_roc.as_deref(), out.as_deref(), cli.json),
        Cmd::Sweep { input, grid, out } => cmd_sweep(&rc, &input, grid.as_deref(), &out, cli.json),
    }
}

fn cmd_synth(rc: &RunConfig, profile: &str, out: &Path, json_mode: bool) -> Result<()> {
    let profile = Profile::parse(profile)?;
    let bench = synthplant::make_benchmark(profile, Seed(rc.seed))?;
    fs::create_dir_all(out)?;

    let a_path = out.join("plant_a.csv");
    let truth_path = out.join("plant_a_truth.csv");
    let b_path = out.join("plant_b.csv");
    let map_path = out.join("plant_b_mapping.json");

    dataio::write_csv(&bench.plant_a, &a_path)?;
    let mut truth = String::from("ts,label\n");
    for (t, &v) in bench.truth_a.iter().enumerate() {
        let _ = writeln!(truth, "{t},{v}");
    }
    fs::write(&truth_path, truth)?;
    dataio::write_csv(&bench.plant_b, &b_path)?;
    write_json(&map_path, &serde_json::to_value(&bench.mapping)?)?;

    let frac = synthplant::label_fraction(&bench.truth_a);
    let files = [&a_path, &truth_path, &b_path, &map_path];
    let body = json!({
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "rows": bench.plant_a.n_rows(),
        "anomaly_fraction": frac,
    });
    let mut human = String::new();
    for p in files {
        let _ = writeln!(human, "wrote {}", p.display());
    }
    let _ = writeln!(
        human,
        "{} rows, anomaly fraction {:.4}",
        bench.plant_a.n_rows(),
        frac
    );
    emit(json_mode, &envelope("synth", rc, body), &human);
    Ok(())
}

fn cmd_label(rc: &RunConfig, input: &Path, out: &Path, json_mode: bool) -> Result<()> {
    let mut table = load_table(input)?;
    for tag in [
        &rc.rules.pump_tag,
        &rc.rules.level_tag,
        &rc.rules.valve_tag,
        &rc.rules.flow_tag,
    ] {
        if table.col_index(tag).is_none() {
            return Err(Error::config(format!(
                "label: rule tag {tag:?} not present in {}",
                input.display()
            )));
        }
    }
    let (labels, detail) = rules::label_table(&table, &rc.rules)?;
    let n = labels.len();
    let pos: usize = labels.iter().map(|&v| v as usize).sum();
    let rows_of = |v: &[u8]| v.iter().map(|&x| x as usize).sum::<usize>();
    let (pump_rows, valve_rows, freeze_rows) = (
        rows_of(&detail.delta_pump),
        rows_of(&detail.delta_valve),
        rows_of(&detail.delta_freeze),
    );
    table.labels = Some(labels);
    dataio::write_csv_with_label(&table, out, "logic_label")?;

    let body = json!({
        "out": out.display().to_string(),
        "rows": n,
        "anomalous": pos,
        "normal": n - pos,
        "fraction": pos as f64 / n as f64,
        "rule_rows": {
            "pump_level": pump_rows,
            "valve_flow": valve_rows,
            "sensor_freeze": freeze_rows,
        },
    });
    let human = format!(
        "wrote {}\nlogic_label: {pos} anomalous, {} normal ({:.2}% anomalous)\nrule rows: pump_level {}, valve_flow {}, sensor_freeze {}\n",
        out.display(),
        n - pos,
        100.0 * pos as f64 / n as f64,
        pump_rows,
        valve_rows,
        freeze_rows,
    );
    emit(json_mode, &envelope("label", rc, body), &human);
    Ok(())
}

fn cmd_select(
    rc: &RunConfig,
    input: &Path,
    target: Option<usize>,
    out: &Path,
    json_mode: bool,
) -> Result<()> {
    let mut rc = rc.clone();
    if let Some(t) = target {
        rc.featsel.target_count = t;
    }
    let table = load_table(input)?;
    let labels = pipeline::labels_of(&table, &rc.rules)?;
    let report = featsel::select_features(&table, &labels, &rc.featsel, Seed(rc.seed).derive("select"))?;

    let env = envelope("select", &rc, json!({ "report": report }));
    write_json(out, &env)?;
    let human = format!(
        "wrote {}\nselected {} of {} features: {}\nremoved: {} correlation, {} vif, {} rfe\n",
        out.display(),
        report.selected.len(),
        table.n_cols(),
        report.selected.join(", "),
        report.stage1_removed.len(),
        report.stage2_removed.len(),
        report.stage3_removed.len(),
    );
    emit(json_mode, &env, &human);
    Ok(())
}

/// Reads a feature report written by `select` (envelope) or a bare
/// FeatureReport JSON object.
fn load_feature_report(path: &Path) -> Result<FeatureReport> {
    if !path.exists() {
        return Err(Error::config(format!(
            "feature report {} does not exist",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("feature report {}: {e}", path.display())))?;
    let inner = v.pointer("/body/report").or_else(|| v.get("report")).unwrap_or(&v);
    serde_json::from_value(inner.clone())
        .map_err(|e| Error::config(format!("feature report {}: {e}", path.display())))
}

fn cmd_train(
    rc: &RunConfig,
    input: &Path,
    features: &Path,
    model_out: &Path,
    log_out: Option<&Path>,
    resume: Option<&Path>,
    json_mode: bool,
) -> Result<()> {
    let report = load_feature_report(features)?;
    let table = load_table(input)?;
    let labels = pipeline::labels_of(&table, &rc.rules)?;
    let prepared = pipeline::prepare(
        &table,
        &labels,
        &report.selected,
        rc.train.w,
        rc.smote_k,
        rc.split_ratio,
        rc.rows_mode_smote,
        Seed(rc.seed),
    )?;
    let provenance = envelope(
        "train",
        rc,
        json!({
            "input": input.display().to_string(),
            "features": features.display().to_string(),
            "resumed_from": resume.map(|p| p.display().to_string()),
        }),
    );
    let meta = ArtifactMeta {
        scaler: prepared.scaler.clone(),
        features: report,
        rule_config: rc.rules.clone(),
        provenance,
    };
    let mut cfg = rc.train.clone();
    cfg.seed = Seed(rc.seed).derive("train");
    let start_weights = match resume {
        Some(p) => {
            let prior = tinylstm::load_model(&fs::read_to_string(p)?)?;
            Some(prior.weights)
        }
        None => None,
    };
    let (artifact, train_report) =
        trainer::train_incremental(&prepared.train, &prepared.val, &cfg, meta, start_weights)?;
    fs::write(model_out, tinylstm::save_model(&artifact)?)?;
    if let Some(p) = log_out {
        trainer::write_chunk_log_csv(&train_report.logs, p)?;
    }

    let body = json!({
        "model": model_out.display().to_string(),
        "chunk_log": log_out.map(|p| p.display().to_string()),
        "chunks": train_report.total_chunks,
        "stopped_early": train_report.stopped_early,
        "stop_reason": train_report.stop_reason,
        "final_val_f1": train_report.final_val_f1,
    });
    let human = format!(
        "wrote {}\ntrained {} chunks ({}); final val F1 {:.4}\n",
        model_out.display(),
        train_report.total_chunks,
        train_report.stop_reason,
        train_report.final_val_f1,
    );
    emit(json_mode, &envelope("train", rc, body), &human);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    rc: &RunConfig,
    model: &Path,
    input: &Path,
    mapping: Option<&Path>,
    tau: Option<f64>,
    emit_roc: Option<&Path>,
    out: Option<&Path>,
    json_mode: bool,
) -> Result<()> {
    let artifact = tinylstm::load_model(&fs::read_to_string(model)?)?;
    let table = load_table(input)?;
    let mapping = match mapping {
        Some(p) => Some(TagMapping::load(p)?),
        None => None,
    };
    // Threshold precedence: flag, then the tau the model was trained with,
    // then the library default.
    let tau = tau
        .or_else(|| artifact.provenance.pointer("/effective_config/train/tau").and_then(|v| v.as_f64()))
        .unwrap_or(0.5);
    let outcome = eval::evaluate(&artifact, &table, mapping.as_ref(), tau)?;
    if let Some(p) = emit_roc {
        let points = eval::roc_curve(&outcome.scores, &outcome.targets)?;
        eval::write_roc_csv(&points, p)?;
    }
    let body = json!({
        "result": outcome,
        "roc_csv": emit_roc.map(|p| p.display().to_string()),
    });
    let env = envelope("eval", rc, body);
    if let Some(p) = out {
        write_json(p, &env)?;
    }
    let r = &outcome.report;
    let human = format!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  roc_auc {}\nwindows {}  tau {}\nrss {:.1} -> {:.1} MB  inference {:.3}s\n",
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        r.roc_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
        outcome.targets.len(),
        tau,
        outcome.rss_before_mb,
        outcome.rss_after_mb,
        outcome.infer_time_s,
    );
    emit(json_mode, &env, &human);
    Ok(())
}

fn cmd_sweep(
    rc: &RunConfig,
    input: &Path,
    grid_path: Option<&Path>,
    out: &Path,
    json_mode: bool,
) -> Result<()> {
    let grid: BTreeMap<String, Vec<f64>> = match grid_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::config(format!("grid {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("grid {}: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    let table = load_table(input)?;
    let labels = pipeline::labels_of(&table, &rc.rules)?;
    let features =
        featsel::select_features(&table, &labels, &rc.featsel, Seed(rc.seed).derive("select"))?;
    let rows = pipeline::prepare_rows(&table, &labels, &features.selected, rc.split_ratio, Seed(rc.seed))?;
    let meta = ArtifactMeta {
        scaler: rows.scaler.clone(),
        features,
        rule_config: rc.rules.clone(),
        provenance: envelope("sweep", rc, json!({ "input": input.display().to_string() })),
    };
    let mut base = rc.train.clone();
    base.seed = Seed(rc.seed).derive("train");
    let inputs = SweepInputs {
        x_train: &rows.x_train,
        y_train: &rows.y_train,
        x_val: &rows.x_val,
        y_val: &rows.y_val,
        smote_k: rc.smote_k,
        meta,
    };
    let result = eval::sweep(&inputs, &base, &grid)?;
    eval::write_sweep_csv(&result, out)?;

    let rows_written = if result.points.is_empty() {
        1
    } else {
        result.points.len()
    };
    let body = json!({
        "out": out.display().to_string(),
        "rows": rows_written,
        "baseline_f1": result.baseline.report.f1,
    });
    let human = format!(
        "wrote {} ({} rows); baseline F1 {:.4}\n",
        out.display(),
        rows_written,
        result.baseline.report.f1,
    );
    emit(json_mode, &envelope("sweep", rc, body), &human);
    Ok(())
}
