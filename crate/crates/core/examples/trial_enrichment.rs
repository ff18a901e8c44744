//! Enrich a trial population by keeping the patients whose predicted ITE is
//! least uncertain within a predicted-outcome stratum, and watch the z-score.

use uncertain_ite::enrichment::{responder_enrichment_baseline, stratified_enrichment_sweep, z_score, CountWindow};
use uncertain_ite::eval::PredictionTable;
use uncertain_ite::net::{train, NetConfig, TrainConfig};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let fit = train(
        &generate_cohort(&CohortConfig::heteroscedastic(3000, 41))?.observations(),
        &NetConfig::new(16, 3),
        &TrainConfig { max_epochs: 80, ..TrainConfig::default() },
    )?;
    let table = PredictionTable::from_cohort(&fit.params, &generate_cohort(&CohortConfig::heteroscedastic(20_000, 42))?)?;

    let report = stratified_enrichment_sweep(
        &table,
        1,
        CountWindow::new(2.0, 3.0)?,
        CountWindow::new(1.0, 2.0)?,
        &[1.0, 0.8, 0.6, 0.4],
    )?;
    println!("stratum of {} patients", report.stratum_size);
    for r in &report.rows {
        match r.z_score {
            Some(z) => println!(
                "  keep {:>3.0}%: z {z:+.3}  ({} treated, {} control, mean ITE var {:.3})",
                r.kept_fraction * 100.0,
                r.n_treated,
                r.n_control,
                r.mean_ite_uncertainty
            ),
            None => println!("  keep {:>3.0}%: {}", r.kept_fraction * 100.0, r.reason.as_deref().unwrap_or("undefined")),
        }
    }

    let all = table.all();
    let picked = responder_enrichment_baseline(&table, &all, 1, 0.3)?;
    println!("predicted-responder baseline at 30%: z {:+.3} (whole cohort {:+.3})", z_score(&table, &picked, 1)?, z_score(&table, &all, 1)?);
    Ok(())
}
