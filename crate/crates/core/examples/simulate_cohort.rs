//! Generate a heteroscedastic three-arm trial cohort, export it with its
//! oracle sidecar and read it back.

use uncertain_ite::sim::{export_cohort, generate_cohort, import_observations, sidecar_paths, CohortConfig};

fn main() -> uncertain_ite::Result<()> {
    let cfg = CohortConfig::heteroscedastic(2000, 7);
    let cohort = generate_cohort(&cfg)?;
    println!("arm counts {:?} (probs {:?})", cohort.arm_counts, cfg.arm_probs);
    for t in 1..cfg.n_arms {
        let mean_ite = cohort.records.iter().map(|r| r.true_expected_ite(t).unwrap()).sum::<f64>() / 2000.0;
        println!("arm {t}: mean expected ITE {mean_ite:+.3}, analytic (unclamped) {:+.3}", cfg.analytic_ate(t));
    }

    let dir = std::env::temp_dir().join("uite_simulate_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("cohort.csv");
    export_cohort(&cohort, &path)?;
    let (oracle, config) = sidecar_paths(&path);
    let obs = import_observations(&path)?;
    println!("wrote {} rows to {}", obs.len(), path.display());
    println!("sidecars: {} and {}", oracle.display(), config.display());
    Ok(())
}
