//! Train on a heteroscedastic cohort, then show how factual MSE falls as
//! the most uncertain patients are rejected.

use uncertain_ite::eval::{rejection_curve, uncertainty_error_correlation, PredictionTable};
use uncertain_ite::net::{train, NetConfig, TrainConfig};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let fit = train(
        &generate_cohort(&CohortConfig::heteroscedastic(3000, 1))?.observations(),
        &NetConfig::new(16, 3),
        &TrainConfig { max_epochs: 80, ..TrainConfig::default() },
    )?;
    let table = PredictionTable::from_cohort(&fit.params, &generate_cohort(&CohortConfig::heteroscedastic(6000, 2))?)?;

    let fractions = [1.0, 0.8, 0.6, 0.4, 0.2];
    for arm in 0..3 {
        let curve = rejection_curve(&table, arm, &fractions)?;
        let cells: Vec<String> = curve
            .kept_fractions
            .iter()
            .zip(&curve.metric_values)
            .map(|(q, v)| format!("{:.0}%: {v:.4}", q * 100.0))
            .collect();
        let rho = uncertainty_error_correlation(&table, arm)?;
        println!("arm {arm} MSE  {}  (spearman {:.3})", cells.join("  "), rho.unwrap_or(f64::NAN));
    }
    Ok(())
}
