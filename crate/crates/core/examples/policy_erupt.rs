//! Confidence-thresholded treatment recommendations scored by ERUPT, with
//! the simulator's oracle value of the same rule alongside.

use uncertain_ite::eval::PredictionTable;
use uncertain_ite::net::{train, NetConfig, TrainConfig};
use uncertain_ite::policy::{oracle_recommended_value, policy_sweep, PolicyFamily};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let fit = train(
        &generate_cohort(&CohortConfig::heteroscedastic(3000, 21))?.observations(),
        &NetConfig::new(16, 3),
        &TrainConfig { max_epochs: 80, ..TrainConfig::default() },
    )?;
    let table = PredictionTable::from_cohort(&fit.params, &generate_cohort(&CohortConfig::heteroscedastic(5000, 22))?)?;

    let grid = [0.0, 0.3, 0.5, 0.7, 0.9];
    for family in [PolicyFamily::ThresholdConfidence { arm: 1, count_threshold: 2.0 }, PolicyFamily::ResponseConfidence { arm: 1 }] {
        println!("{}", family.name());
        let curve = policy_sweep(&family, &grid, &table)?;
        for p in &curve.points {
            match p.value {
                Some(v) => {
                    let oracle = oracle_recommended_value(&family.at(p.param), &table)?;
                    println!(
                        "  k={:.1}  ERUPT {:.3} ± {:.3}  ({:>5.1}% of arm)  oracle {:.3}",
                        p.param,
                        v.erupt,
                        v.std_error.unwrap_or(0.0),
                        100.0 * v.recommended_fraction,
                        oracle.erupt
                    );
                }
                None => println!("  k={:.1}  {}", p.param, p.reason.as_deref().unwrap_or("undefined")),
            }
        }
    }
    Ok(())
}
