//! Estimable lower and upper bounds on the ITE error next to the oracle ITE
//! MSE, as the kept set shrinks to the least uncertain patients.

use uncertain_ite::eval::{ite_uncertainty_bound_curves, PredictionTable};
use uncertain_ite::net::{train, NetConfig, TrainConfig};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let fit = train(
        &generate_cohort(&CohortConfig::heteroscedastic(4000, 11))?.observations(),
        &NetConfig::new(16, 3),
        &TrainConfig { max_epochs: 100, ..TrainConfig::default() },
    )?;
    let table = PredictionTable::from_cohort(&fit.params, &generate_cohort(&CohortConfig::heteroscedastic(20_000, 12))?)?;

    for arm in 1..3 {
        let report = ite_uncertainty_bound_curves(&table, arm, &[1.0, 0.75, 0.5, 0.25])?;
        println!("arm {arm}");
        println!("  kept   var_sum   lower     oracle    upper");
        for r in &report.rows {
            let f = |v: Option<f64>| v.map_or("   -    ".to_string(), |x| format!("{x:.5}"));
            println!(
                "  {:>4.0}%  {:.4}    {}  {}  {}",
                r.kept_fraction * 100.0,
                r.mean_ite_uncertainty,
                f(r.lower_bound),
                f(r.oracle_ite_mse),
                f(r.upper_bound)
            );
        }
    }
    Ok(())
}
