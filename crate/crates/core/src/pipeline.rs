//! Config-driven pipeline: simulate, train, predict, evaluate, policy,
//! enrich, report and gradcheck, all writing into one output directory.
//!
//! Every stage seed comes from the master seed through [`derive_seed`] with
//! a fixed tag, so a stage can be re-run on its own and reproduce the same
//! bytes. Seed fields inside the cohort, net and train sections are
//! overwritten by these derived values.
//!
//! | stage         | tag                  |
//! |---------------|----------------------|
//! | train cohort  | `stage/cohort-train` |
//! | test cohort   | `stage/cohort-test`  |
//! | network init  | `stage/net-init`     |
//! | training      | `stage/train`        |
//! | gradcheck     | `stage/gradcheck`    |
//!
//! Each subcommand finishes by rewriting `manifest.json`, which lists every
//! other file in the directory with its SHA-256.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::enrichment::{stratified_enrichment_sweep, CountWindow, EnrichmentReport};
use crate::error::{Error, Result};
use crate::eval::{check_fractions, evaluate_table, kfold_evaluate, EvalReport, PredictionTable, DEFAULT_FRACTIONS};
use crate::gradcheck::{gradcheck_suite, GradCheckCase, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::net::{load_params, save_params, train, NetConfig, TrainConfig, TrainReport};
use crate::policy::{policy_sweep, PolicyCurve, PolicyFamily};
use crate::rng::derive_seed;
use crate::sim::{export_cohort, generate_cohort, import_cohort, import_observations, sidecar_paths, CohortConfig};

pub const TRAIN_COHORT: &str = "cohort_train.csv";
pub const TEST_COHORT: &str = "cohort_test.csv";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const MODEL: &str = "model.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const PREDICTIONS: &str = "predictions.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const KFOLD_REPORT: &str = "kfold_report.json";
pub const POLICY_REPORT: &str = "policy_report.json";
pub const ENRICHMENT_REPORT: &str = "enrichment_report.json";
pub const FULL_REPORT: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const GRADCHECK_REPORT: &str = "gradcheck.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub fractions: Vec<f64>,
    /// Also run stratified k-fold on the training cohort when set.
    pub kfold: Option<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { fractions: DEFAULT_FRACTIONS.to_vec(), kfold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub families: Vec<PolicyFamily>,
    /// Grid for the confidence families.
    pub confidence_grid: Vec<f64>,
    /// Grid for the cost families.
    pub cost_grid: Vec<f64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            families: vec![
                PolicyFamily::ThresholdConfidence { arm: 1, count_threshold: 2.0 },
                PolicyFamily::ResponseConfidence { arm: 1 },
                PolicyFamily::MeanCost { arm: 1 },
                PolicyFamily::UncertaintyCost { arm: 1 },
            ],
            confidence_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            cost_grid: vec![2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 14.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichmentSection {
    pub arm: usize,
    pub control_window: CountWindow,
    pub treatment_window: CountWindow,
    pub fractions: Vec<f64>,
}

impl Default for EnrichmentSection {
    fn default() -> Self {
        Self {
            arm: 1,
            control_window: CountWindow { low: 2.0, high: 3.0 },
            treatment_window: CountWindow { low: 1.0, high: 2.0 },
            fractions: vec![1.0, 0.8, 0.6, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSection {
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { cases: 20, step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Training cohort; the test cohort reuses it with `test_patients`.
    pub cohort: CohortConfig,
    pub test_patients: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationSection,
    pub policy: PolicySection,
    pub enrichment: EnrichmentSection,
    pub gradcheck: GradcheckSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cohort = CohortConfig::heteroscedastic(5000, 0);
        let net = NetConfig::new(cohort.n_features, cohort.n_arms);
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            cohort,
            test_patients: 5000,
            net,
            train: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
            policy: PolicySection::default(),
            enrichment: EnrichmentSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

/// Stage configurations with derived seeds filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub train_cohort: CohortConfig,
    pub test_cohort: CohortConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub gradcheck_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.cohort.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        let m = self.cohort.n_arms;
        if self.net.input_dim != self.cohort.n_features {
            return bad(format!("net.input_dim {} != cohort.n_features {}", self.net.input_dim, self.cohort.n_features));
        }
        if self.net.n_heads != m {
            return bad(format!("net.n_heads {} != cohort.n_arms {m}", self.net.n_heads));
        }
        if self.test_patients == 0 {
            return bad("test_patients must be positive".into());
        }
        check_fractions(&self.evaluation.fractions)?;
        check_fractions(&self.enrichment.fractions)?;
        if matches!(self.evaluation.kfold, Some(k) if k < 2) {
            return bad("evaluation.kfold must be at least 2".into());
        }
        for f in &self.policy.families {
            let arm = f.at(0.0).arm();
            if arm == 0 || arm >= m {
                return bad(format!("policy family {} refers to arm {arm}; treated arms are 1..{m}", f.name()));
            }
        }
        if self.enrichment.arm == 0 || self.enrichment.arm >= m {
            return bad(format!("enrichment.arm {} is not a treated arm", self.enrichment.arm));
        }
        CountWindow::new(self.enrichment.control_window.low, self.enrichment.control_window.high)?;
        CountWindow::new(self.enrichment.treatment_window.low, self.enrichment.treatment_window.high)?;
        if self.gradcheck.cases == 0 || !(self.gradcheck.step > 0.0) || !(self.gradcheck.tolerance > 0.0) {
            return bad("gradcheck needs positive cases, step and tolerance".into());
        }
        Ok(())
    }

    pub fn stages(&self) -> Stages {
        let s = |tag: &str| derive_seed(self.master_seed, tag, 0);
        Stages {
            train_cohort: CohortConfig { seed: s("stage/cohort-train"), ..self.cohort.clone() },
            test_cohort: CohortConfig {
                n_patients: self.test_patients,
                seed: s("stage/cohort-test"),
                ..self.cohort.clone()
            },
            net: NetConfig { init_seed: s("stage/net-init"), ..self.net.clone() },
            train: TrainConfig { seed: s("stage/train"), ..self.train.clone() },
            gradcheck_seed: s("stage/gradcheck"),
        }
    }

    /// The config with derived seeds written into its sections and without
    /// the output directory, which never affects artifact contents.
    pub fn resolved_json(&self) -> Value {
        let st = self.stages();
        let resolved = ExperimentConfig {
            cohort: CohortConfig { seed: st.train_cohort.seed, ..self.cohort.clone() },
            net: st.net,
            train: st.train,
            ..self.clone()
        };
        let mut v = serde_json::to_value(resolved).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        v
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.resolved_json().to_string().as_bytes())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Sets the value at a dotted path such as `train.max_epochs` or
/// `policy.cost_grid.0`. The value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown key `{part}` in `{key}`")))?
            }
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| Error::Config(format!("`{part}` in `{key}` is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| Error::Config(format!("index {i} out of range ({len}) in `{key}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a scalar"))),
        };
    }
    Err(Error::Config("empty override key".into()))
}

/// Builds a config from an optional JSON file, `--set` overrides, then the
/// `--seed` and `--out` shortcuts, and validates it.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig> {
    let base: ExperimentConfig = match path {
        Some(p) => read_json(p, "a config file")?,
        None => ExperimentConfig::default(),
    };
    let mut v = serde_json::to_value(base)?;
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Simulate,
    Train,
    Predict,
    Evaluate,
    Policy,
    Enrich,
    Report,
    Gradcheck,
}

impl Subcommand {
    /// Pipeline order used by [`run_all`].
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Simulate,
        Subcommand::Train,
        Subcommand::Predict,
        Subcommand::Evaluate,
        Subcommand::Policy,
        Subcommand::Enrich,
        Subcommand::Report,
        Subcommand::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Train => "train",
            Subcommand::Predict => "predict",
            Subcommand::Evaluate => "evaluate",
            Subcommand::Policy => "policy",
            Subcommand::Enrich => "enrich",
            Subcommand::Report => "report",
            Subcommand::Gradcheck => "gradcheck",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub module_versions: BTreeMap<String, String>,
    /// Seconds spent in the latest run of each subcommand.
    pub wall_clock_seconds: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

fn module_versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION").to_string();
    let mut m: BTreeMap<String, String> =
        ["sim", "net", "ite", "eval", "policy", "enrichment", "pipeline"].iter().map(|k| (k.to_string(), v.clone())).collect();
    m.insert("model_blob".into(), "uncertain-ite/params v1".into());
    m
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    read_json(&dir.join(MANIFEST), "any subcommand")
}

fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n != MANIFEST)
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let bytes = fs::read(dir.join(&name))?;
            Ok(FileEntry { path: name, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
        })
        .collect()
}

fn update_manifest(cfg: &ExperimentConfig, cmd: Subcommand, seconds: f64) -> Result<RunManifest> {
    let config_hash = cfg.hash();
    let mut wall_clock_seconds = match read_manifest(&cfg.output_dir) {
        Ok(m) if m.config_hash == config_hash => m.wall_clock_seconds,
        _ => BTreeMap::new(),
    };
    wall_clock_seconds.insert(cmd.name().into(), seconds);
    let manifest = RunManifest {
        config_hash,
        module_versions: module_versions(),
        wall_clock_seconds,
        files: inventory(&cfg.output_dir)?,
    };
    write_json(&cfg.output_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact { path: path.to_path_buf(), producer: producer.into() },
        _ => Error::Io(e),
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })
}

fn require(cfg: &ExperimentConfig, name: &str, producer: Subcommand) -> Result<PathBuf> {
    let path = cfg.path(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, producer: producer.name().into() })
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let st = cfg.stages();
    export_cohort(&generate_cohort(&st.train_cohort)?, &cfg.path(TRAIN_COHORT))?;
    export_cohort(&generate_cohort(&st.test_cohort)?, &cfg.path(TEST_COHORT))?;
    write_json(&cfg.path(RESOLVED_CONFIG), &cfg.resolved_json())
}

fn train_stage(cfg: &ExperimentConfig) -> Result<()> {
    let st = cfg.stages();
    let data = import_observations(&require(cfg, TRAIN_COHORT, Subcommand::Simulate)?)?;
    let fit = train(&data, &st.net, &st.train)?;
    save_params(&fit.params, &cfg.path(MODEL))?;
    write_json(&cfg.path(TRAIN_REPORT), &fit.report)
}

/// Predictions for the test cohort, with oracle columns when its sidecar exists.
fn predict(cfg: &ExperimentConfig) -> Result<()> {
    let st = cfg.stages();
    let params = load_params(&require(cfg, MODEL, Subcommand::Train)?, &st.net)?;
    let test = require(cfg, TEST_COHORT, Subcommand::Simulate)?;
    let table = if sidecar_paths(&test).0.is_file() {
        PredictionTable::from_cohort(&params, &import_cohort(&test)?)?
    } else {
        PredictionTable::from_observations(&params, &import_observations(&test)?)?
    };
    write_json(&cfg.path(PREDICTIONS), &table)?;
    write_predictions_csv(&table, &cfg.path(PREDICTIONS_CSV))
}

/// Columns `id,arm,outcome,mu_0,var_0,..,ite_mu_1,ite_var_1,..`.
fn write_predictions_csv(table: &PredictionTable, path: &Path) -> Result<()> {
    let m = table.n_arms();
    let mut header = vec!["id".to_string(), "arm".into(), "outcome".into()];
    for t in 0..m {
        header.push(format!("mu_{t}"));
        header.push(format!("var_{t}"));
    }
    for t in 1..m {
        header.push(format!("ite_mu_{t}"));
        header.push(format!("ite_var_{t}"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for i in table.all() {
        let r = &table.rows()[i];
        let mut rec = vec![r.id.to_string(), r.arm.to_string(), r.outcome.to_string()];
        for p in &r.preds {
            rec.push(p.mu.to_string());
            rec.push(p.var.to_string());
        }
        for t in 1..m {
            let d = r.ite(t);
            rec.push(d.mu_diff.to_string());
            rec.push(d.var_sum.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn load_predictions(cfg: &ExperimentConfig) -> Result<PredictionTable> {
    require(cfg, MODEL, Subcommand::Train)?;
    let path = require(cfg, PREDICTIONS, Subcommand::Predict)?;
    read_json(&path, Subcommand::Predict.name())
}

/// The realized oracle ITE MSE can never exceed the oracle upper bound,
/// since `(a - b)^2 <= 2a^2 + 2b^2` holds patient by patient.
fn check_bounds(report: &EvalReport) -> Result<()> {
    for b in &report.bounds {
        for r in &b.rows {
            if let (Some(o), Some(u)) = (r.oracle_ite_mse_realized, r.upper_bound_oracle) {
                if o > u * (1.0 + 1e-12) {
                    return Err(Error::CheckFailed(format!(
                        "arm {} at kept fraction {}: realized ITE MSE {o} exceeds oracle upper bound {u}",
                        b.arm, r.kept_fraction
                    )));
                }
            }
        }
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let table = load_predictions(cfg)?;
    let mut report = evaluate_table(&table, &cfg.evaluation.fractions)?;
    report.train_reports = vec![read_json::<TrainReport>(&cfg.path(TRAIN_REPORT), Subcommand::Train.name())?];
    for c in &report.rejection_curves {
        c.write_csv(&cfg.path(&format!("rejection_arm{}.csv", c.arm)))?;
    }
    for b in &report.bounds {
        b.write_csv(&cfg.path(&format!("bounds_arm{}.csv", b.arm)))?;
    }
    write_json(&cfg.path(EVAL_REPORT), &report)?;
    if let Some(k) = cfg.evaluation.kfold {
        let st = cfg.stages();
        let cohort = import_cohort(&require(cfg, TRAIN_COHORT, Subcommand::Simulate)?)?;
        let out = kfold_evaluate(&cohort, &st.net, &st.train, k, &cfg.evaluation.fractions)?;
        write_json(&cfg.path(KFOLD_REPORT), &out.report)?;
        check_bounds(&out.report)?;
    }
    check_bounds(&report)
}

fn grid_for<'a>(cfg: &'a ExperimentConfig, family: &PolicyFamily) -> &'a [f64] {
    match family {
        PolicyFamily::ThresholdConfidence { .. } | PolicyFamily::ResponseConfidence { .. } => &cfg.policy.confidence_grid,
        PolicyFamily::MeanCost { .. } | PolicyFamily::UncertaintyCost { .. } => &cfg.policy.cost_grid,
    }
}

fn policy(cfg: &ExperimentConfig) -> Result<()> {
    let table = load_predictions(cfg)?;
    let curves = cfg
        .policy
        .families
        .iter()
        .map(|f| {
            let c = policy_sweep(f, grid_for(cfg, f), &table)?;
            c.write_csv(&cfg.path(&format!("policy_{}.csv", f.name())))?;
            Ok(c)
        })
        .collect::<Result<Vec<PolicyCurve>>>()?;
    write_json(&cfg.path(POLICY_REPORT), &curves)
}

fn enrich(cfg: &ExperimentConfig) -> Result<()> {
    let table = load_predictions(cfg)?;
    let e = &cfg.enrichment;
    let report = stratified_enrichment_sweep(&table, e.arm, e.control_window, e.treatment_window, &e.fractions)?;
    report.write_csv(&cfg.path(&format!("enrichment_arm{}.csv", e.arm)))?;
    write_json(&cfg.path(ENRICHMENT_REPORT), &report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Collates the stage outputs into one JSON report, figure-style CSV tables
/// and a short markdown summary.
fn report(cfg: &ExperimentConfig) -> Result<()> {
    let mut full: EvalReport = read_json(&cfg.path(EVAL_REPORT), Subcommand::Evaluate.name())?;
    full.policy_curves = read_json(&cfg.path(POLICY_REPORT), Subcommand::Policy.name())?;
    full.enrichment = vec![read_json::<EnrichmentReport>(&cfg.path(ENRICHMENT_REPORT), Subcommand::Enrich.name())?];

    let mut w = csv::Writer::from_path(cfg.path("fig_rejection.csv"))?;
    w.write_record(["arm", "kept_fraction", "n_kept", "factual_mse"])?;
    for c in &full.rejection_curves {
        for ((q, v), n) in c.kept_fractions.iter().zip(&c.metric_values).zip(&c.n_kept) {
            w.write_record([c.arm.to_string(), q.to_string(), n.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cfg.path("fig_ite_bounds.csv"))?;
    w.write_record(["arm", "kept_fraction", "mean_ite_uncertainty", "lower", "upper", "upper_oracle", "oracle", "oracle_realized"])?;
    for b in &full.bounds {
        for r in &b.rows {
            w.write_record([
                b.arm.to_string(),
                r.kept_fraction.to_string(),
                r.mean_ite_uncertainty.to_string(),
                opt(r.lower_bound),
                opt(r.upper_bound),
                opt(r.upper_bound_oracle),
                opt(r.oracle_ite_mse),
                opt(r.oracle_ite_mse_realized),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cfg.path("fig_policies.csv"))?;
    w.write_record(["family", "param", "erupt", "n_recommended", "recommended_fraction"])?;
    for c in &full.policy_curves {
        for p in &c.points {
            let v = p.value.as_ref();
            w.write_record([
                c.family.name(),
                p.param.to_string(),
                opt(v.map(|v| v.erupt)),
                v.map(|v| v.n_recommended).unwrap_or(0).to_string(),
                opt(v.map(|v| v.recommended_fraction)),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cfg.path("fig_enrichment.csv"))?;
    w.write_record(["arm", "kept_fraction", "z_score", "n_treated", "n_control", "mean_ite_uncertainty"])?;
    for e in &full.enrichment {
        for r in &e.rows {
            w.write_record([
                e.arm.to_string(),
                r.kept_fraction.to_string(),
                opt(r.z_score),
                r.n_treated.to_string(),
                r.n_control.to_string(),
                r.mean_ite_uncertainty.to_string(),
            ])?;
        }
    }
    w.flush()?;

    write_json(&cfg.path(FULL_REPORT), &full)?;
    fs::write(cfg.path(REPORT_MD), markdown_summary(&full))?;
    Ok(())
}

fn markdown_summary(r: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let mut s = String::new();
    let _ = writeln!(s, "# Run summary\n");
    let _ = writeln!(s, "{} test patients, {} arms. Aggregate factual MSE {:.4}.\n", r.n_patients, r.n_arms, r.factual_mse_aggregate);
    let _ = writeln!(s, "| arm | factual MSE | Spearman(var, sq. error) |\n|---|---|---|");
    for t in 0..r.n_arms {
        let _ = writeln!(s, "| {t} | {} | {} |", f(r.factual_mse_per_arm[t]), f(r.uncertainty_error_correlation[t]));
    }
    let _ = writeln!(s, "\n## Factual MSE after uncertainty filtering\n\n| arm | kept | MSE |\n|---|---|---|");
    for c in &r.rejection_curves {
        for (q, v) in c.kept_fractions.iter().zip(&c.metric_values) {
            let _ = writeln!(s, "| {} | {q} | {v:.4} |", c.arm);
        }
    }
    let _ = writeln!(s, "\n## ITE error bounds by ITE uncertainty\n\n| arm | kept | lower | upper | oracle |\n|---|---|---|---|---|");
    for b in &r.bounds {
        for row in &b.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                b.arm,
                row.kept_fraction,
                f(row.lower_bound),
                f(row.upper_bound),
                f(row.oracle_ite_mse)
            );
        }
    }
    let _ = writeln!(s, "\n## Policies (ERUPT, lesion count scale)\n\n| family | param | ERUPT | recommended |\n|---|---|---|---|");
    for c in &r.policy_curves {
        for p in &c.points {
            let (e, q) = p.value.as_ref().map(|v| (format!("{:.4}", v.erupt), format!("{:.3}", v.recommended_fraction))).unwrap_or(("n/a".into(), "0".into()));
            let _ = writeln!(s, "| {} | {} | {e} | {q} |", c.family.name(), p.param);
        }
    }
    for e in &r.enrichment {
        let _ = writeln!(
            s,
            "\n## Enrichment, arm {} (stratum of {} patients)\n\n| kept | z | treated | control |\n|---|---|---|---|",
            e.arm, e.stratum_size
        );
        for row in &e.rows {
            let _ = writeln!(s, "| {} | {} | {} | {} |", row.kept_fraction, f(row.z_score), row.n_treated, row.n_control);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub passed: bool,
    pub worst_rel_error: f64,
    pub cases: Vec<GradCheckCase>,
}

fn gradcheck(cfg: &ExperimentConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    let cases = gradcheck_suite(g.cases, cfg.stages().gradcheck_seed, g.step)?;
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let passed = worst < g.tolerance;
    write_json(&cfg.path(GRADCHECK_REPORT), &GradcheckReport { tolerance: g.tolerance, step: g.step, passed, worst_rel_error: worst, cases })?;
    if passed {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient check worst relative error {worst:e} >= {:e}", g.tolerance)))
    }
}

/// Runs one subcommand and refreshes the manifest. Artifacts written before
/// a failed check are kept and inventoried.
pub fn run_subcommand(cmd: Subcommand, cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let start = Instant::now();
    let outcome = match cmd {
        Subcommand::Simulate => simulate(cfg),
        Subcommand::Train => train_stage(cfg),
        Subcommand::Predict => predict(cfg),
        Subcommand::Evaluate => evaluate(cfg),
        Subcommand::Policy => policy(cfg),
        Subcommand::Enrich => enrich(cfg),
        Subcommand::Report => report(cfg),
        Subcommand::Gradcheck => gradcheck(cfg),
    };
    let manifest = update_manifest(cfg, cmd, start.elapsed().as_secs_f64())?;
    outcome.map(|_| manifest)
}

/// Every subcommand in pipeline order, stopping at the first failure.
pub fn run_all(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut last = None;
    for cmd in Subcommand::ALL {
        last = Some(run_subcommand(cmd, cfg)?);
    }
    Ok(last.expect("at least one subcommand"))
}
