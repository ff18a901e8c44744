//! Predictive trial enrichment by ITE uncertainty.
//!
//! The power proxy is the z-score `ATE_t / sqrt(Var(y_t) + Var(y_0))` on
//! factual lesion counts, with unbiased (n - 1) arm variances. Keeping the
//! patients with the smallest predicted ITE variance targets the
//! denominator; the responder baseline instead keeps the largest predicted
//! benefit and targets the numerator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{check_fraction, check_fractions, PredictionTable};
use crate::ite::{expected_count, log_to_count};
use crate::sim::CONTROL;

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// z-score of arm `t` against control over the factual patients in `rows`.
/// Negative when the treatment lowers the lesion count.
pub fn z_score(table: &PredictionTable, rows: &[usize], arm: usize) -> Result<f64> {
    table.check_treated_arm(arm)?;
    let rows = table.canonical(rows.to_vec());
    let counts = |a: usize| -> Vec<f64> {
        rows.iter().map(|&i| &table.rows()[i]).filter(|r| r.arm == a).map(|r| log_to_count(r.outcome)).collect()
    };
    let (treated, control) = (counts(arm), counts(CONTROL));
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::EmptySelection(format!(
            "z-score needs 2 patients per arm, have {} treated and {} control",
            treated.len(),
            control.len()
        )));
    }
    let (mt, vt) = mean_var(&treated);
    let (mc, vc) = mean_var(&control);
    let denom = (vt + vc).sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("zero outcome variance in both arms".into()));
    }
    Ok((mt - mc) / denom)
}

/// Keeps the `fraction` of `rows` with the smallest ITE variance for `arm`.
pub fn enrich_by_ite_uncertainty(table: &PredictionTable, rows: &[usize], arm: usize, fraction: f64) -> Result<Vec<usize>> {
    table.check_treated_arm(arm)?;
    table.keep_lowest(rows, fraction, |r| r.ite(arm).var_sum)
}

/// Keeps the `fraction` of `rows` with the most negative predicted ITE.
pub fn responder_enrichment_baseline(
    table: &PredictionTable,
    rows: &[usize],
    arm: usize,
    fraction: f64,
) -> Result<Vec<usize>> {
    table.check_treated_arm(arm)?;
    check_fraction(fraction)?;
    table.keep_lowest(rows, fraction, |r| r.ite(arm).mu_diff)
}

/// Open interval of lesion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountWindow {
    pub low: f64,
    pub high: f64,
}

impl CountWindow {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && low < high) {
            return Err(Error::InvalidArgument(format!("invalid count window ({low}, {high})")));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, count: f64) -> bool {
        count > self.low && count < self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRow {
    pub kept_fraction: f64,
    pub z_score: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub mean_ite_uncertainty: f64,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub arm: usize,
    pub control_window: CountWindow,
    pub treatment_window: CountWindow,
    pub stratum_size: usize,
    pub rows: Vec<EnrichmentRow>,
}

impl EnrichmentReport {
    /// Columns `kept_fraction,z_score,n_treated,n_control,mean_ite_uncertainty`;
    /// an undefined z-score is an empty field.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kept_fraction", "z_score", "n_treated", "n_control", "mean_ite_uncertainty"])?;
        for r in &self.rows {
            w.write_record([
                r.kept_fraction.to_string(),
                r.z_score.map(|z| z.to_string()).unwrap_or_default(),
                r.n_treated.to_string(),
                r.n_control.to_string(),
                r.mean_ite_uncertainty.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Patients whose predicted expected counts fall in both windows.
pub fn stratum(table: &PredictionTable, arm: usize, control_window: CountWindow, treatment_window: CountWindow) -> Vec<usize> {
    table
        .all()
        .into_iter()
        .filter(|&i| {
            let r = &table.rows()[i];
            control_window.contains(expected_count(&r.preds[CONTROL])) && treatment_window.contains(expected_count(&r.preds[arm]))
        })
        .collect()
}

/// Restricts to the predicted-outcome stratum, then sweeps the
/// uncertainty-based enrichment fraction. Fractions where an arm runs out
/// are reported with a reason and no z-score.
pub fn stratified_enrichment_sweep(
    table: &PredictionTable,
    arm: usize,
    control_window: CountWindow,
    treatment_window: CountWindow,
    fractions: &[f64],
) -> Result<EnrichmentReport> {
    table.check_treated_arm(arm)?;
    check_fractions(fractions)?;
    let pool = stratum(table, arm, control_window, treatment_window);
    if pool.is_empty() {
        return Err(Error::EmptySelection("no patients in the predicted-outcome stratum".into()));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for &q in fractions {
        let kept = enrich_by_ite_uncertainty(table, &pool, arm, q)?;
        let count = |a: usize| kept.iter().filter(|&&i| table.rows()[i].arm == a).count();
        let mean_unc = kept.iter().map(|&i| table.rows()[i].ite(arm).var_sum).sum::<f64>() / kept.len() as f64;
        let (z, reason) = match z_score(table, &kept, arm) {
            Ok(z) => (Some(z), None),
            Err(Error::EmptySelection(m)) | Err(Error::InvalidArgument(m)) => (None, Some(m)),
            Err(e) => return Err(e),
        };
        rows.push(EnrichmentRow {
            kept_fraction: q,
            z_score: z,
            n_treated: count(arm),
            n_control: count(CONTROL),
            mean_ite_uncertainty: mean_unc,
            reason,
        });
    }
    Ok(EnrichmentReport { arm, control_window, treatment_window, stratum_size: pool.len(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::PredictionRow;
    use crate::net::GaussianPrediction;

    fn g(mu: f64, var: f64) -> GaussianPrediction {
        GaussianPrediction { mu, var }
    }

    fn row(id: usize, arm: usize, count: f64, var: f64) -> PredictionRow {
        PredictionRow { id, arm, outcome: count.ln_1p(), preds: vec![g(1.2, var), g(0.9, var)], oracle: None }
    }

    #[test]
    fn z_score_arithmetic() {
        // treated counts {0, 2}: mean 1, var 2; control {2, 4}: mean 3, var 2
        let t = PredictionTable::new(2, vec![row(0, 1, 0.0, 0.1), row(1, 1, 2.0, 0.1), row(2, 0, 2.0, 0.1), row(3, 0, 4.0, 0.1)])
            .unwrap();
        let z = z_score(&t, &t.all(), 1).unwrap();
        assert!((z - (-2.0 / 2.0)).abs() < 1e-12);
        // variances 1 and 1
        let t = PredictionTable::new(
            2,
            vec![row(0, 1, 0.0, 0.1), row(1, 1, 1.0, 0.1), row(2, 1, 2.0, 0.1), row(3, 0, 2.0, 0.1), row(4, 0, 3.0, 0.1), row(5, 0, 4.0, 0.1)],
        )
        .unwrap();
        assert!((z_score(&t, &t.all(), 1).unwrap() + 2.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(z_score(&t, &[0, 3, 4], 1).is_err());
    }

    #[test]
    fn enrichment_nesting() {
        let rows = (0..20).map(|i| row(i, i % 2, i as f64, 0.05 + ((i * 7) % 11) as f64 * 0.01)).collect();
        let t = PredictionTable::new(2, rows).unwrap();
        let all = t.all();
        assert_eq!(enrich_by_ite_uncertainty(&t, &all, 1, 1.0).unwrap(), all);
        let a = enrich_by_ite_uncertainty(&t, &all, 1, 0.5).unwrap();
        let b = enrich_by_ite_uncertainty(&t, &all, 1, 0.2).unwrap();
        assert!(b.iter().all(|i| a.contains(i)));
        let avg = |s: &[usize]| s.iter().map(|&i| t.rows()[i].ite(1).var_sum).sum::<f64>() / s.len() as f64;
        assert!(avg(&b) <= avg(&a) && avg(&a) <= avg(&all));
        assert!(enrich_by_ite_uncertainty(&t, &all, 1, 0.0).is_err());
    }

    #[test]
    fn windows() {
        let w = CountWindow::new(2.0, 3.0).unwrap();
        assert!(w.contains(2.5) && !w.contains(2.0) && !w.contains(3.0));
        assert!(CountWindow::new(3.0, 2.0).is_err());
    }
}
