//! Stratified 4-fold evaluation: every patient is predicted by a model that
//! never saw it.

use uncertain_ite::eval::kfold_evaluate;
use uncertain_ite::net::{NetConfig, TrainConfig};
use uncertain_ite::sim::{generate_cohort, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let cohort = generate_cohort(&CohortConfig::heteroscedastic(2400, 51))?;
    let tc = TrainConfig { max_epochs: 50, seed: 5, ..TrainConfig::default() };
    let out = kfold_evaluate(&cohort, &NetConfig::new(16, 3), &tc, 4, &[1.0, 0.5, 0.25])?;
    for (fold, r) in out.report.train_reports.iter().enumerate() {
        println!("fold {fold}: {} train / {} val, best epoch {}, val NLL {:.4}", r.n_train, r.n_val, r.best_epoch, r.best_val_nll);
    }
    println!("out-of-fold factual MSE {:.4}", out.report.factual_mse_aggregate);
    for c in &out.report.rejection_curves {
        println!("  arm {} rejection curve {:?}", c.arm, c.metric_values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    }
    Ok(())
}
