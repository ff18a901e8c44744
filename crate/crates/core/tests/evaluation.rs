use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uncertain_ite::eval::{
    factual_mse, ite_lower_bound, ite_uncertainty_bound_curves, ite_upper_bound, kfold_evaluate, oracle_ite_mse,
    rejection_curve, spearman, stratified_folds, uncertainty_error_correlation, ArmSelection, OracleOutcomes,
    OracleVariant, PredictionRow, PredictionTable, UpperBoundMode,
};
use uncertain_ite::net::{train, GaussianPrediction, NetConfig, TrainConfig};
use uncertain_ite::sim::{generate_cohort, Cohort, CohortConfig, PatientRecord};

/// Predictor built from the generator: true mean plus a seeded perturbation
/// whose scale grows with the true noise level, variance equal to the true
/// noise variance.
fn synthetic_table(cohort: &Cohort, bias_scale: f64, seed: u64) -> PredictionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = &cohort.config;
    let rows = cohort
        .records
        .iter()
        .map(|r| {
            let preds = (0..cfg.n_arms)
                .map(|t| {
                    let s = cfg.noise_sd(t, &r.features);
                    let eps: f64 = rng.sample(StandardNormal);
                    GaussianPrediction { mu: r.expected_outcomes[t] + bias_scale * s * eps, var: s * s }
                })
                .collect();
            row_of(r, preds)
        })
        .collect();
    PredictionTable::new(cfg.n_arms, rows).unwrap()
}

fn row_of(r: &PatientRecord, preds: Vec<GaussianPrediction>) -> PredictionRow {
    PredictionRow {
        id: r.id,
        arm: r.treatment,
        outcome: r.factual_outcome,
        preds,
        oracle: Some(OracleOutcomes { potential: r.potential_outcomes.clone(), expected: r.expected_outcomes.clone() }),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn bound_sandwich_invariants_hold_everywhere() {
    for seed in 0..5 {
        let cohort = generate_cohort(&CohortConfig::heteroscedastic(4000, 40 + seed)).unwrap();
        let table = synthetic_table(&cohort, 0.5, seed);
        for arm in 1..3 {
            let report = ite_uncertainty_bound_curves(&table, arm, &[1.0, 0.75, 0.5, 0.25]).unwrap();
            for row in &report.rows {
                let lower = row.lower_bound.unwrap();
                let upper = row.upper_bound.unwrap();
                assert!(lower >= 0.0 && upper >= lower, "{row:?}");
                assert!(row.oracle_ite_mse_realized.unwrap() <= row.upper_bound_oracle.unwrap());
            }
            // Jensen with the population ATE of the subset
            let kept = table.keep_lowest(&table.all(), 0.5, |r| r.ite(arm).var_sum).unwrap();
            let truth = mean(kept.iter().map(|&i| {
                let o = table.rows()[i].oracle.as_ref().unwrap();
                o.expected[arm] - o.expected[0]
            }));
            let predicted = mean(kept.iter().map(|&i| table.rows()[i].ite(arm).mu_diff));
            let mse = oracle_ite_mse(&table, arm, &kept, OracleVariant::Expected).unwrap();
            assert!((truth - predicted).powi(2) <= mse + 1e-12);
        }
    }
}

#[test]
fn full_fraction_row_equals_unfiltered_bounds() {
    let cohort = generate_cohort(&CohortConfig::heteroscedastic(1500, 3)).unwrap();
    let table = synthetic_table(&cohort, 0.5, 3);
    let report = ite_uncertainty_bound_curves(&table, 1, &[1.0, 0.5]).unwrap();
    let all = table.all();
    assert_eq!(report.rows[0].lower_bound, Some(ite_lower_bound(&table, 1, &all).unwrap()));
    assert_eq!(report.rows[0].upper_bound, Some(ite_upper_bound(&table, 1, &all, UpperBoundMode::Estimable).unwrap()));
    let c = rejection_curve(&table, 2, &[1.0, 0.5]).unwrap();
    assert_eq!(c.metric_values[0], factual_mse(&table, ArmSelection::Arm(2)).unwrap());
}

#[test]
fn estimable_upper_bound_tracks_oracle() {
    let mut misses = 0;
    for seed in 0..5 {
        let cohort = generate_cohort(&CohortConfig::heteroscedastic(5000, 70 + seed)).unwrap();
        let table = synthetic_table(&cohort, 0.5, 100 + seed);
        let all = table.all();
        for arm in 1..3 {
            let est = ite_upper_bound(&table, arm, &all, UpperBoundMode::Estimable).unwrap();
            let orc = ite_upper_bound(&table, arm, &all, UpperBoundMode::Oracle).unwrap();
            // SE of the estimable form, from its two independent arm means
            let se_term = |a: usize| {
                let sq: Vec<f64> = table
                    .arm_rows(a)
                    .iter()
                    .map(|&i| {
                        let r = &table.rows()[i];
                        (r.outcome - r.factual_pred().mu).powi(2)
                    })
                    .collect();
                let m = sq.iter().sum::<f64>() / sq.len() as f64;
                sq.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ((sq.len() - 1) * sq.len()) as f64
            };
            let se = 2.0 * (se_term(arm) + se_term(0)).sqrt();
            if (est - orc).abs() > 3.0 * se {
                misses += 1;
            }
        }
    }
    assert!(misses <= 1, "{misses} of 10 outside 3 SE");
}

#[test]
fn realized_mse_adds_noise_variance() {
    let cohort = generate_cohort(&CohortConfig::homoscedastic_linear(20_000, 0.3, 12)).unwrap();
    let table = synthetic_table(&cohort, 1.0, 12);
    let all = table.all();
    let expected = oracle_ite_mse(&table, 1, &all, OracleVariant::Expected).unwrap();
    let realized = oracle_ite_mse(&table, 1, &all, OracleVariant::Realized).unwrap();
    // two independent noise draws of variance 0.09
    assert!((realized - expected - 0.18).abs() < 0.02, "realized {realized}, expected {expected}");
}

#[test]
fn zero_prediction_oracle_mse_is_mean_square_ite() {
    let cohort = generate_cohort(&CohortConfig::heteroscedastic(500, 8)).unwrap();
    let rows = cohort.records.iter().map(|r| row_of(r, vec![GaussianPrediction { mu: 0.0, var: 1.0 }; 3])).collect();
    let table = PredictionTable::new(3, rows).unwrap();
    let want = mean(cohort.records.iter().map(|r| r.true_expected_ite(2).unwrap().powi(2)));
    let got = oracle_ite_mse(&table, 2, &table.all(), OracleVariant::Expected).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn shuffled_variance_is_uncorrelated() {
    let mut small = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err: Vec<f64> = (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).collect();
        let var: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        if spearman(&var, &err).unwrap().abs() < 0.1 {
            small += 1;
        }
    }
    assert!(small >= 9, "{small} of 10 seeds");
}

#[test]
fn calibrated_variance_ranks_errors() {
    let cohort = generate_cohort(&CohortConfig::heteroscedastic(5000, 15)).unwrap();
    let table = synthetic_table(&cohort, 0.3, 15);
    for arm in 0..3 {
        let rho = uncertainty_error_correlation(&table, arm).unwrap().unwrap();
        assert!(rho > 0.3, "arm {arm}: {rho}");
    }
    let mean_var = mean(table.rows().iter().map(|r| r.factual_pred().var));
    let constant = PredictionTable::new(
        3,
        table
            .rows()
            .iter()
            .map(|r| PredictionRow { preds: vec![GaussianPrediction { mu: r.preds[0].mu, var: mean_var }; 3], ..r.clone() })
            .collect(),
    )
    .unwrap();
    assert_eq!(uncertainty_error_correlation(&constant, 0).unwrap(), None);
}

#[test]
fn folds_partition_and_stratify() {
    let cohort = generate_cohort(&CohortConfig::heteroscedastic(1003, 5)).unwrap();
    let treatments: Vec<usize> = cohort.records.iter().map(|r| r.treatment).collect();
    let folds = stratified_folds(&treatments, 3, 4, 9).unwrap();
    assert_eq!(folds, stratified_folds(&treatments, 3, 4, 9).unwrap());
    assert_ne!(folds, stratified_folds(&treatments, 3, 4, 10).unwrap());
    for arm in 0..3 {
        let sizes: Vec<usize> =
            (0..4).map(|f| (0..folds.len()).filter(|&i| treatments[i] == arm && folds[i] == f).count()).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "arm {arm}: {sizes:?}");
    }
    assert!(stratified_folds(&treatments, 3, 1, 0).is_err());
}

#[test]
fn kfold_covers_every_patient_and_matches_single_split() {
    let net = NetConfig { trunk_widths: vec![16], head_hidden: 8, ..NetConfig::new(16, 3) };
    let tc = TrainConfig { max_epochs: 30, patience: 8, learning_rate: 3e-3, ..TrainConfig::default() };
    let cohort = generate_cohort(&CohortConfig::homoscedastic_linear(1200, 0.3, 31)).unwrap();
    let out = kfold_evaluate(&cohort, &net, &tc, 4, &[1.0, 0.5]).unwrap();
    let mut ids: Vec<usize> = out.table.rows().iter().map(|r| r.id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..1200).collect::<Vec<_>>());
    assert_eq!(out.report.train_reports.len(), 4);

    let fit = train(&cohort.observations(), &net, &tc).unwrap();
    let held_out = generate_cohort(&CohortConfig::homoscedastic_linear(1200, 0.3, 32)).unwrap();
    let single = PredictionTable::from_cohort(&fit.params, &held_out).unwrap();
    let single_mse = factual_mse(&single, ArmSelection::Aggregate).unwrap();
    let ratio = out.report.factual_mse_aggregate / single_mse;
    assert!((0.5..=2.0).contains(&ratio), "out-of-fold / single split = {ratio}");
}
