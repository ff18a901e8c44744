//! Quadratic lesion cost: a rule that thresholds the cost of the point
//! prediction versus one that thresholds the expected cost under the
//! predicted distribution.

use uncertain_ite::eval::PredictionTable;
use uncertain_ite::net::{train, NetConfig, TrainConfig};
use uncertain_ite::policy::{policy_sweep, PolicyFamily};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let fit = train(
        &generate_cohort(&CohortConfig::heteroscedastic(3000, 31))?.observations(),
        &NetConfig::new(16, 3),
        &TrainConfig { max_epochs: 80, ..TrainConfig::default() },
    )?;
    let table = PredictionTable::from_cohort(&fit.params, &generate_cohort(&CohortConfig::heteroscedastic(8000, 32))?)?;

    let grid = [3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 14.0];
    let mean = policy_sweep(&PolicyFamily::MeanCost { arm: 1 }, &grid, &table)?;
    let unc = policy_sweep(&PolicyFamily::UncertaintyCost { arm: 1 }, &grid, &table)?;
    println!("threshold  mean-cost (frac)     uncertainty-cost (frac)");
    for (m, u) in mean.points.iter().zip(&unc.points) {
        let cell = |p: &uncertain_ite::policy::SweepPoint| {
            p.value.map_or("      -        ".to_string(), |v| format!("{:7.3} ({:4.2})", v.erupt, v.recommended_fraction))
        };
        println!("{:>9.1}  {}      {}", m.param, cell(m), cell(u));
    }
    Ok(())
}
