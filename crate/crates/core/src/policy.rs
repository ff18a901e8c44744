//! Treatment-recommendation policies and their ERUPT evaluation.
//!
//! A policy `pi(x, t)` recommends arm `t` to a patient; on factual data it
//! can only be scored on patients who actually received `t`, giving
//!
//! ```text
//! ERUPT = sum_i y_i * pi(x_i, t_i) / sum_i pi(x_i, t_i)
//! ```
//!
//! with outcomes reported as lesion counts `exp(y) - 1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PredictionRow, PredictionTable};
use crate::ite::{expected_cost, ite_distribution, log_to_count, point_count, prob_count_below, prob_response, CostTransform};
use crate::net::GaussianPrediction;
use crate::sim::CONTROL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `P(count_t < count_threshold) > confidence`
    ThresholdConfidence { arm: usize, count_threshold: f64, confidence: f64 },
    /// `P(ITE_t <= 0) > confidence`
    ResponseConfidence { arm: usize, confidence: f64 },
    /// Cost of the point prediction, `(exp(mu_t) - 1 + 1)^2 < cost_threshold`.
    MeanCost { arm: usize, cost_threshold: f64 },
    /// Expected quadratic cost under the predicted distribution `< cost_threshold`.
    UncertaintyCost { arm: usize, cost_threshold: f64 },
}

impl Policy {
    pub fn arm(&self) -> usize {
        match *self {
            Policy::ThresholdConfidence { arm, .. }
            | Policy::ResponseConfidence { arm, .. }
            | Policy::MeanCost { arm, .. }
            | Policy::UncertaintyCost { arm, .. } => arm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        match *self {
            Policy::ThresholdConfidence { count_threshold, confidence, .. } => {
                if !(0.0..=1.0).contains(&confidence) {
                    return bad("confidence must lie in [0, 1]");
                }
                if !(count_threshold >= 0.0) {
                    return bad("count threshold must be >= 0");
                }
            }
            Policy::ResponseConfidence { arm, confidence } => {
                if !(0.0..=1.0).contains(&confidence) {
                    return bad("confidence must lie in [0, 1]");
                }
                if arm == CONTROL {
                    return bad("response policy needs a non-control arm");
                }
            }
            Policy::MeanCost { cost_threshold, .. } | Policy::UncertaintyCost { cost_threshold, .. } => {
                if !(cost_threshold >= 1.0) {
                    return bad("quadratic cost threshold must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Whether the rule favors its arm for these predictions, regardless of
    /// the factual assignment.
    pub fn favors(&self, preds: &[GaussianPrediction]) -> Result<bool> {
        self.validate()?;
        let arm = self.arm();
        let pred = preds.get(arm).ok_or_else(|| Error::InvalidArgument(format!("no prediction for arm {arm}")))?;
        Ok(match *self {
            Policy::ThresholdConfidence { count_threshold, confidence, .. } => {
                prob_count_below(pred, count_threshold)? > confidence
            }
            Policy::ResponseConfidence { confidence, .. } => {
                let control = preds.get(CONTROL).ok_or_else(|| Error::InvalidArgument("no control prediction".into()))?;
                prob_response(&ite_distribution(pred, control)) > confidence
            }
            Policy::MeanCost { cost_threshold, .. } => {
                CostTransform::QuadraticLesion.apply(point_count(pred)) < cost_threshold
            }
            Policy::UncertaintyCost { cost_threshold, .. } => {
                expected_cost(pred, CostTransform::QuadraticLesion) < cost_threshold
            }
        })
    }

    /// Arm chosen for a patient: the policy arm when favored, else control.
    pub fn choose(&self, preds: &[GaussianPrediction]) -> Result<usize> {
        Ok(if self.favors(preds)? { self.arm() } else { CONTROL })
    }
}

/// `pi(x, t)`: 1 iff the factual arm is the policy arm and the rule favors it.
pub fn recommend(policy: &Policy, preds: &[GaussianPrediction], factual_arm: usize) -> Result<bool> {
    let favored = policy.favors(preds)?;
    Ok(factual_arm == policy.arm() && favored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub erupt: f64,
    pub n_recommended: usize,
    /// Share of the arm's factual patients that were recommended.
    pub recommended_fraction: f64,
    /// Standard error of `erupt` as a sample mean; `None` for a single patient.
    pub std_error: Option<f64>,
}

fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Average `transform(count)` of factual outcomes over recommended patients.
pub fn cost_erupt(policy: &Policy, table: &PredictionTable, transform: CostTransform) -> Result<PolicyValue> {
    table.check_arm(policy.arm())?;
    let mut scored = Vec::new();
    let mut n_arm = 0usize;
    for i in table.all() {
        let r = &table.rows()[i];
        if r.arm == policy.arm() {
            n_arm += 1;
        }
        if recommend(policy, &r.preds, r.arm)? {
            scored.push(transform.apply(log_to_count(r.outcome)));
        }
    }
    if scored.is_empty() {
        return Err(Error::NoRecommendation);
    }
    let (erupt, std_error) = mean_and_se(&scored);
    Ok(PolicyValue {
        erupt,
        n_recommended: scored.len(),
        recommended_fraction: scored.len() as f64 / n_arm as f64,
        std_error,
    })
}

/// ERUPT in lesion-count space.
pub fn erupt(policy: &Policy, table: &PredictionTable) -> Result<PolicyValue> {
    cost_erupt(policy, table, CostTransform::Identity)
}

/// A one-parameter policy family swept over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFamily {
    /// Sweeps the confidence `k`.
    ThresholdConfidence { arm: usize, count_threshold: f64 },
    /// Sweeps the confidence `k`.
    ResponseConfidence { arm: usize },
    /// Sweeps the cost threshold.
    MeanCost { arm: usize },
    /// Sweeps the cost threshold.
    UncertaintyCost { arm: usize },
}

impl PolicyFamily {
    pub fn at(&self, param: f64) -> Policy {
        match *self {
            PolicyFamily::ThresholdConfidence { arm, count_threshold } => {
                Policy::ThresholdConfidence { arm, count_threshold, confidence: param }
            }
            PolicyFamily::ResponseConfidence { arm } => Policy::ResponseConfidence { arm, confidence: param },
            PolicyFamily::MeanCost { arm } => Policy::MeanCost { arm, cost_threshold: param },
            PolicyFamily::UncertaintyCost { arm } => Policy::UncertaintyCost { arm, cost_threshold: param },
        }
    }

    /// Outcome transform the family is scored with.
    pub fn transform(&self) -> CostTransform {
        match self {
            PolicyFamily::ThresholdConfidence { .. } | PolicyFamily::ResponseConfidence { .. } => CostTransform::Identity,
            PolicyFamily::MeanCost { .. } | PolicyFamily::UncertaintyCost { .. } => CostTransform::QuadraticLesion,
        }
    }

    pub fn name(&self) -> String {
        match self {
            PolicyFamily::ThresholdConfidence { arm, .. } => format!("threshold_confidence_arm{arm}"),
            PolicyFamily::ResponseConfidence { arm } => format!("response_confidence_arm{arm}"),
            PolicyFamily::MeanCost { arm } => format!("mean_cost_arm{arm}"),
            PolicyFamily::UncertaintyCost { arm } => format!("uncertainty_cost_arm{arm}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: f64,
    pub value: Option<PolicyValue>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub family: PolicyFamily,
    pub transform: CostTransform,
    pub points: Vec<SweepPoint>,
}

impl PolicyCurve {
    /// Columns `param,erupt,n_recommended,recommended_fraction,reason`;
    /// undefined points leave `erupt` empty and state the reason.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["param", "erupt", "n_recommended", "recommended_fraction", "reason"])?;
        for p in &self.points {
            match &p.value {
                Some(v) => w.write_record([
                    p.param.to_string(),
                    v.erupt.to_string(),
                    v.n_recommended.to_string(),
                    v.recommended_fraction.to_string(),
                    String::new(),
                ])?,
                None => w.write_record([
                    p.param.to_string(),
                    String::new(),
                    "0".into(),
                    "0".into(),
                    p.reason.clone().unwrap_or_default(),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn policy_sweep(family: &PolicyFamily, grid: &[f64], table: &PredictionTable) -> Result<PolicyCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let transform = family.transform();
    let points = grid
        .iter()
        .map(|&param| match cost_erupt(&family.at(param), table, transform) {
            Ok(v) => Ok(SweepPoint { param, value: Some(v), reason: None }),
            Err(Error::NoRecommendation) => {
                Ok(SweepPoint { param, value: None, reason: Some("no patient recommended".into()) })
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyCurve { family: *family, transform, points })
}

fn potential_count(row: &PredictionRow, arm: usize) -> Result<f64> {
    let o = row.oracle.as_ref().ok_or(Error::MissingOracle)?;
    Ok(log_to_count(o.potential[arm]))
}

/// Mean realized count when every patient receives `choose(row)`.
pub fn oracle_choice_value(table: &PredictionTable, choose: impl Fn(&PredictionRow) -> Result<usize>) -> Result<f64> {
    let rows = table.all();
    if rows.is_empty() {
        return Err(Error::EmptySelection("empty table".into()));
    }
    let mut total = 0.0;
    for &i in &rows {
        let r = &table.rows()[i];
        total += potential_count(r, choose(r)?)?;
    }
    Ok(total / rows.len() as f64)
}

/// Simulation-only value of following the policy for every patient
/// (control when not favored), in count space.
pub fn oracle_policy_value(policy: &Policy, table: &PredictionTable) -> Result<f64> {
    oracle_choice_value(table, |r| policy.choose(&r.preds))
}

/// Mean realized count on the policy arm over every patient the rule
/// favors, whatever their factual arm. ERUPT estimates this under RCT.
pub fn oracle_recommended_value(policy: &Policy, table: &PredictionTable) -> Result<PolicyValue> {
    let mut favored = Vec::new();
    for i in table.all() {
        let r = &table.rows()[i];
        if policy.favors(&r.preds)? {
            favored.push(potential_count(r, policy.arm())?);
        }
    }
    if favored.is_empty() {
        return Err(Error::NoRecommendation);
    }
    let (erupt, std_error) = mean_and_se(&favored);
    Ok(PolicyValue {
        erupt,
        n_recommended: favored.len(),
        recommended_fraction: favored.len() as f64 / table.len() as f64,
        std_error,
    })
}
