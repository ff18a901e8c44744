//! Factual error, uncertainty-rejection curves and ITE-error bounds.
//!
//! Every metric sums over its rows in ascending patient-id order, so results
//! do not depend on the order of rows in the table, and a curve entry at
//! kept fraction 1.0 reproduces the unfiltered metric bit for bit.
//!
//! The ITE mean squared error cannot be observed on factual data. It is
//! bracketed by
//!
//! ```text
//! lower = (ATE_t - mean(mu_t - mu_0))^2
//! upper = 2 * MSE(y_t, mu_t) + 2 * MSE(y_0, mu_0)
//! ```
//!
//! where the lower bound is Jensen's inequality with the ATE taken as the
//! difference of factual arm means, and the upper bound follows from
//! `(a - b)^2 <= 2a^2 + 2b^2`. Under randomized assignment each potential
//! outcome MSE can be estimated from the factual patients of its arm.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enrichment::EnrichmentReport;
use crate::error::{Error, Result};
use crate::ite::{ite_distribution, IteDistribution};
use crate::net::{train, GaussianPrediction, NetConfig, Params, TrainConfig, TrainReport};
use crate::policy::PolicyCurve;
use crate::rng::{derive_seed, shuffle, substream};
use crate::sim::{Cohort, Observation, PatientRecord, CONTROL};

/// Simulator-only potential outcomes attached to a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcomes {
    pub potential: Vec<f64>,
    pub expected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: usize,
    pub arm: usize,
    pub outcome: f64,
    pub preds: Vec<GaussianPrediction>,
    pub oracle: Option<OracleOutcomes>,
}

impl PredictionRow {
    pub fn ite(&self, t: usize) -> IteDistribution {
        ite_distribution(&self.preds[t], &self.preds[CONTROL])
    }

    pub fn factual_pred(&self) -> &GaussianPrediction {
        &self.preds[self.arm]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    n_arms: usize,
    rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn new(n_arms: usize, rows: Vec<PredictionRow>) -> Result<Self> {
        if n_arms < 2 {
            return Err(Error::InvalidArgument("a prediction table needs at least two arms".into()));
        }
        let mut ids = HashSet::with_capacity(rows.len());
        for r in &rows {
            if r.preds.len() != n_arms || r.arm >= n_arms {
                return Err(Error::InvalidArgument(format!("row {} inconsistent with {n_arms} arms", r.id)));
            }
            if let Some(o) = &r.oracle {
                if o.potential.len() != n_arms || o.expected.len() != n_arms {
                    return Err(Error::InvalidArgument(format!("row {} oracle has wrong arm count", r.id)));
                }
            }
            if !ids.insert(r.id) {
                return Err(Error::InvalidArgument(format!("duplicate patient id {}", r.id)));
            }
        }
        Ok(Self { n_arms, rows })
    }

    /// Predicts every observation; rows carry no oracle data.
    pub fn from_observations(params: &Params, obs: &[Observation]) -> Result<Self> {
        let net = params.network()?;
        let rows = obs
            .iter()
            .map(|o| {
                Ok(PredictionRow {
                    id: o.id,
                    arm: o.treatment,
                    outcome: o.outcome,
                    preds: net.forward(&o.features)?,
                    oracle: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(params.config.n_heads, rows)
    }

    /// Predicts simulated records and attaches their potential outcomes.
    pub fn from_records(params: &Params, records: &[PatientRecord]) -> Result<Self> {
        let net = params.network()?;
        let rows = records
            .iter()
            .map(|r| Ok(row_from_record(r, net.forward(&r.features)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(params.config.n_heads, rows)
    }

    pub fn from_cohort(params: &Params, cohort: &Cohort) -> Result<Self> {
        Self::from_records(params, &cohort.records)
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_oracle(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.oracle.is_some())
    }

    /// All row indices in canonical (ascending id) order.
    pub fn all(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by_key(|&i| self.rows[i].id);
        idx
    }

    /// Indices of factual patients of `arm`, ascending id.
    pub fn arm_rows(&self, arm: usize) -> Vec<usize> {
        self.all().into_iter().filter(|&i| self.rows[i].arm == arm).collect()
    }

    pub(crate) fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.n_arms {
            return Err(Error::InvalidArgument(format!("arm {arm} out of range")));
        }
        Ok(())
    }

    pub(crate) fn check_treated_arm(&self, arm: usize) -> Result<()> {
        self.check_arm(arm)?;
        if arm == CONTROL {
            return Err(Error::InvalidArgument("ITE quantities need a non-control arm".into()));
        }
        Ok(())
    }

    /// Orders `rows` by ascending `key`, ties by ascending patient id.
    pub fn rank_by(&self, rows: &[usize], key: impl Fn(&PredictionRow) -> f64) -> Vec<usize> {
        let mut keyed: Vec<(f64, usize, usize)> =
            rows.iter().map(|&i| (key(&self.rows[i]), self.rows[i].id, i)).collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, i)| i).collect()
    }

    /// Puts row indices into canonical ascending-id order.
    pub fn canonical(&self, mut rows: Vec<usize>) -> Vec<usize> {
        rows.sort_by_key(|&i| self.rows[i].id);
        rows
    }

    /// Keeps the `ceil(q * n)` rows with the smallest `key` (canonical order).
    pub fn keep_lowest(&self, rows: &[usize], fraction: f64, key: impl Fn(&PredictionRow) -> f64) -> Result<Vec<usize>> {
        check_fraction(fraction)?;
        let ranked = self.rank_by(rows, key);
        let n = kept_count(fraction, ranked.len());
        if n == 0 {
            return Err(Error::EmptySelection(format!("no patients kept at fraction {fraction}")));
        }
        Ok(self.canonical(ranked[..n].to_vec()))
    }
}

fn row_from_record(r: &PatientRecord, preds: Vec<GaussianPrediction>) -> PredictionRow {
    PredictionRow {
        id: r.id,
        arm: r.treatment,
        outcome: r.factual_outcome,
        preds,
        oracle: Some(OracleOutcomes { potential: r.potential_outcomes.clone(), expected: r.expected_outcomes.clone() }),
    }
}

/// `ceil(q * n)`, robust to representation error in `q * n`.
pub fn kept_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

pub(crate) fn check_fraction(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("kept fraction {q} outside (0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no kept fractions given".into()));
    }
    for q in fractions {
        check_fraction(*q)?;
    }
    if fractions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("kept fractions must be strictly decreasing".into()));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSelection {
    Arm(usize),
    Aggregate,
}

fn mse_over(table: &PredictionTable, rows: &[usize]) -> Option<f64> {
    mean(rows.iter().map(|&i| {
        let r = &table.rows[i];
        (r.outcome - r.factual_pred().mu).powi(2)
    }))
}

/// Mean of `(y - mu_factual)^2` over factual patients of the selection.
pub fn factual_mse(table: &PredictionTable, selection: ArmSelection) -> Result<f64> {
    let rows = match selection {
        ArmSelection::Arm(t) => {
            table.check_arm(t)?;
            table.arm_rows(t)
        }
        ArmSelection::Aggregate => table.all(),
    };
    mse_over(table, &rows).ok_or_else(|| Error::EmptySelection(format!("no patients for {selection:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub arm: usize,
    pub metric_name: String,
    pub kept_fractions: Vec<f64>,
    pub metric_values: Vec<f64>,
    pub n_kept: Vec<usize>,
}

impl RejectionCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kept_fraction", "value"])?;
        for (q, v) in self.kept_fractions.iter().zip(&self.metric_values) {
            w.write_record([q.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Factual MSE of `arm` after keeping the patients with the smallest
/// predicted factual variance.
pub fn rejection_curve(table: &PredictionTable, arm: usize, fractions: &[f64]) -> Result<RejectionCurve> {
    table.check_arm(arm)?;
    check_fractions(fractions)?;
    let rows = table.arm_rows(arm);
    let mut values = Vec::with_capacity(fractions.len());
    let mut n_kept = Vec::with_capacity(fractions.len());
    for &q in fractions {
        let kept = table.keep_lowest(&rows, q, |r| r.factual_pred().var)?;
        values.push(mse_over(table, &kept).expect("nonempty"));
        n_kept.push(kept.len());
    }
    Ok(RejectionCurve {
        arm,
        metric_name: "factual_mse".into(),
        kept_fractions: fractions.to_vec(),
        metric_values: values,
        n_kept,
    })
}

fn arm_mean(table: &PredictionTable, arm: usize, subset: &[usize], f: impl Fn(&PredictionRow) -> f64) -> Result<f64> {
    mean(subset.iter().map(|&i| &table.rows[i]).filter(|r| r.arm == arm).map(f))
        .ok_or_else(|| Error::EmptySelection(format!("no factual patients of arm {arm} in subset")))
}

/// Difference of factual outcome means between `arm` and control over `subset`.
pub fn factual_ate(table: &PredictionTable, arm: usize, subset: &[usize]) -> Result<f64> {
    let subset = table.canonical(subset.to_vec());
    Ok(arm_mean(table, arm, &subset, |r| r.outcome)? - arm_mean(table, CONTROL, &subset, |r| r.outcome)?)
}

pub fn mean_predicted_ite(table: &PredictionTable, arm: usize, subset: &[usize]) -> Result<f64> {
    let subset = table.canonical(subset.to_vec());
    mean(subset.iter().map(|&i| table.rows[i].ite(arm).mu_diff))
        .ok_or_else(|| Error::EmptySelection("empty subset".into()))
}

pub fn ite_lower_bound(table: &PredictionTable, arm: usize, subset: &[usize]) -> Result<f64> {
    table.check_treated_arm(arm)?;
    let ate = factual_ate(table, arm, subset)?;
    Ok((ate - mean_predicted_ite(table, arm, subset)?).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBoundMode {
    /// Uses the simulator's realized potential outcomes for every patient.
    Oracle,
    /// Estimates each potential-outcome MSE from that arm's factual patients.
    Estimable,
}

fn oracle_of(row: &PredictionRow) -> Result<&OracleOutcomes> {
    row.oracle.as_ref().ok_or(Error::MissingOracle)
}

pub fn ite_upper_bound(table: &PredictionTable, arm: usize, subset: &[usize], mode: UpperBoundMode) -> Result<f64> {
    table.check_treated_arm(arm)?;
    let subset = table.canonical(subset.to_vec());
    match mode {
        UpperBoundMode::Estimable => {
            let sq = |r: &PredictionRow| (r.outcome - r.factual_pred().mu).powi(2);
            Ok(2.0 * arm_mean(table, arm, &subset, sq)? + 2.0 * arm_mean(table, CONTROL, &subset, sq)?)
        }
        UpperBoundMode::Oracle => {
            if subset.is_empty() {
                return Err(Error::EmptySelection("empty subset".into()));
            }
            let mut treated = Vec::with_capacity(subset.len());
            let mut control = Vec::with_capacity(subset.len());
            for &i in &subset {
                let r = &table.rows[i];
                let o = oracle_of(r)?;
                treated.push((o.potential[arm] - r.preds[arm].mu).powi(2));
                control.push((o.potential[CONTROL] - r.preds[CONTROL].mu).powi(2));
            }
            Ok(2.0 * mean(treated.into_iter()).expect("nonempty") + 2.0 * mean(control.into_iter()).expect("nonempty"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVariant {
    /// Noiseless ITE `f_t - f_0`.
    Expected,
    /// Realized ITE `y_t - y_0`.
    Realized,
}

pub fn oracle_ite_mse(table: &PredictionTable, arm: usize, subset: &[usize], variant: OracleVariant) -> Result<f64> {
    table.check_treated_arm(arm)?;
    let subset = table.canonical(subset.to_vec());
    let mut sq = Vec::with_capacity(subset.len());
    for &i in &subset {
        let r = &table.rows[i];
        let o = oracle_of(r)?;
        let truth = match variant {
            OracleVariant::Expected => o.expected[arm] - o.expected[CONTROL],
            OracleVariant::Realized => o.potential[arm] - o.potential[CONTROL],
        };
        sq.push((truth - r.ite(arm).mu_diff).powi(2));
    }
    mean(sq.into_iter()).ok_or_else(|| Error::EmptySelection("empty subset".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub kept_fraction: f64,
    pub n_kept: usize,
    pub mean_ite_uncertainty: f64,
    /// `None` when an arm has no factual patients in the kept set.
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub upper_bound_oracle: Option<f64>,
    pub oracle_ite_mse: Option<f64>,
    pub oracle_ite_mse_realized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub arm: usize,
    pub rows: Vec<BoundsRow>,
}

impl BoundsReport {
    /// Columns `kept_fraction,value,lower,upper,oracle`: `value` is the mean
    /// ITE variance of the kept set, `upper` the estimable bound, `oracle`
    /// the expected-ITE MSE. Undefined entries are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kept_fraction", "value", "lower", "upper", "oracle"])?;
        for r in &self.rows {
            w.write_record([
                r.kept_fraction.to_string(),
                r.mean_ite_uncertainty.to_string(),
                opt(r.lower_bound),
                opt(r.upper_bound),
                opt(r.oracle_ite_mse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptySelection(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Bounds (and oracle ITE MSE when available) after keeping the patients
/// with the smallest ITE variance `var_t + var_0`.
pub fn ite_uncertainty_bound_curves(table: &PredictionTable, arm: usize, fractions: &[f64]) -> Result<BoundsReport> {
    table.check_treated_arm(arm)?;
    check_fractions(fractions)?;
    let all = table.all();
    let oracle = table.has_oracle();
    let mut rows = Vec::with_capacity(fractions.len());
    for &q in fractions {
        let kept = table.keep_lowest(&all, q, |r| r.ite(arm).var_sum)?;
        let mean_unc = mean(kept.iter().map(|&i| table.rows[i].ite(arm).var_sum)).expect("nonempty");
        rows.push(BoundsRow {
            kept_fraction: q,
            n_kept: kept.len(),
            mean_ite_uncertainty: mean_unc,
            lower_bound: defined(ite_lower_bound(table, arm, &kept))?,
            upper_bound: defined(ite_upper_bound(table, arm, &kept, UpperBoundMode::Estimable))?,
            upper_bound_oracle: if oracle {
                Some(ite_upper_bound(table, arm, &kept, UpperBoundMode::Oracle)?)
            } else {
                None
            },
            oracle_ite_mse: if oracle { Some(oracle_ite_mse(table, arm, &kept, OracleVariant::Expected)?) } else { None },
            oracle_ite_mse_realized: if oracle {
                Some(oracle_ite_mse(table, arm, &kept, OracleVariant::Realized)?)
            } else {
                None
            },
        });
    }
    Ok(BoundsReport { arm, rows })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation between predicted factual variance and squared
/// factual error over the factual patients of `arm`. `Ok(None)` flags a
/// degenerate (constant) input.
pub fn uncertainty_error_correlation(table: &PredictionTable, arm: usize) -> Result<Option<f64>> {
    table.check_arm(arm)?;
    let rows = table.arm_rows(arm);
    if rows.len() < 10 {
        return Err(Error::EmptySelection(format!("arm {arm} has {} patients, need at least 10", rows.len())));
    }
    let var: Vec<f64> = rows.iter().map(|&i| table.rows[i].factual_pred().var).collect();
    let err: Vec<f64> = rows
        .iter()
        .map(|&i| {
            let r = &table.rows[i];
            (r.outcome - r.factual_pred().mu).powi(2)
        })
        .collect();
    Ok(spearman(&var, &err))
}

pub const DEFAULT_FRACTIONS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_patients: usize,
    pub n_arms: usize,
    pub factual_mse_aggregate: f64,
    pub factual_mse_per_arm: Vec<Option<f64>>,
    pub uncertainty_error_correlation: Vec<Option<f64>>,
    pub rejection_curves: Vec<RejectionCurve>,
    pub bounds: Vec<BoundsReport>,
    #[serde(default)]
    pub policy_curves: Vec<PolicyCurve>,
    #[serde(default)]
    pub enrichment: Vec<EnrichmentReport>,
    #[serde(default)]
    pub train_reports: Vec<TrainReport>,
}

/// Runs factual, rejection, correlation and bound metrics over a table.
pub fn evaluate_table(table: &PredictionTable, fractions: &[f64]) -> Result<EvalReport> {
    let n_arms = table.n_arms();
    let factual_mse_per_arm =
        (0..n_arms).map(|t| defined(factual_mse(table, ArmSelection::Arm(t)))).collect::<Result<Vec<_>>>()?;
    let uncertainty_error_correlation = (0..n_arms)
        .map(|t| match uncertainty_error_correlation(table, t) {
            Ok(v) => Ok(v),
            Err(Error::EmptySelection(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let rejection_curves = (0..n_arms)
        .filter(|&t| !table.arm_rows(t).is_empty())
        .map(|t| rejection_curve(table, t, fractions))
        .collect::<Result<Vec<_>>>()?;
    let bounds = (1..n_arms).map(|t| ite_uncertainty_bound_curves(table, t, fractions)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        n_patients: table.len(),
        n_arms,
        factual_mse_aggregate: factual_mse(table, ArmSelection::Aggregate)?,
        factual_mse_per_arm,
        uncertainty_error_correlation,
        rejection_curves,
        bounds,
        policy_curves: Vec::new(),
        enrichment: Vec::new(),
        train_reports: Vec::new(),
    })
}

/// Seeded fold label per patient, stratified by arm (round-robin within each
/// shuffled arm).
pub fn stratified_folds(treatments: &[usize], n_arms: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}; need at least 2 folds")));
    }
    let mut rng = substream(seed, "kfold/assign", 0);
    let mut folds = vec![usize::MAX; treatments.len()];
    for arm in 0..n_arms {
        let mut idx: Vec<usize> = (0..treatments.len()).filter(|&i| treatments[i] == arm).collect();
        shuffle(&mut idx, &mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    if let Some(i) = folds.iter().position(|&f| f == usize::MAX) {
        return Err(Error::InvalidArgument(format!("treatment of row {i} out of range")));
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldOutcome {
    pub folds: Vec<usize>,
    pub table: PredictionTable,
    pub report: EvalReport,
}

/// Stratified k-fold: trains on k-1 folds (with an inner validation split
/// for early stopping), predicts the held-out fold and evaluates the
/// concatenated out-of-fold table.
pub fn kfold_evaluate(
    cohort: &Cohort,
    net_config: &NetConfig,
    train_config: &TrainConfig,
    k: usize,
    fractions: &[f64],
) -> Result<KFoldOutcome> {
    let n_arms = cohort.n_arms();
    let treatments: Vec<usize> = cohort.records.iter().map(|r| r.treatment).collect();
    let folds = stratified_folds(&treatments, n_arms, k, train_config.seed)?;
    let obs = cohort.observations();
    let mut rows = Vec::with_capacity(obs.len());
    let mut train_reports = Vec::with_capacity(k);
    for fold in 0..k {
        let train_obs: Vec<Observation> =
            obs.iter().zip(&folds).filter(|(_, &f)| f != fold).map(|(o, _)| o.clone()).collect();
        for arm in 0..n_arms {
            if !train_obs.iter().any(|o| o.treatment == arm) {
                return Err(Error::EmptySelection(format!("arm {arm} vanishes from training folds of fold {fold}")));
            }
        }
        let net = NetConfig { init_seed: derive_seed(net_config.init_seed, "kfold/init", fold as u64), ..net_config.clone() };
        let tc = TrainConfig { seed: derive_seed(train_config.seed, "kfold/train", fold as u64), ..train_config.clone() };
        let fit = train(&train_obs, &net, &tc)?;
        let model = fit.params.network()?;
        for (r, _) in cohort.records.iter().zip(&folds).filter(|(_, &f)| f == fold) {
            rows.push(row_from_record(r, model.forward(&r.features)?));
        }
        train_reports.push(fit.report);
    }
    let table = PredictionTable::new(n_arms, rows)?;
    let mut report = evaluate_table(&table, fractions)?;
    report.train_reports = train_reports;
    Ok(KFoldOutcome { folds, table, report })
}
