//! Closed-form ITE and lesion-count quantities for two Gaussian predictions.

use uncertain_ite::ite::{
    expected_cost, expected_count, ite_distribution, point_count, prob_count_below, prob_response, CostTransform,
};
use uncertain_ite::net::GaussianPrediction;

fn main() -> uncertain_ite::Result<()> {
    let control = GaussianPrediction { mu: 1.4, var: 0.15 };
    for var in [0.05, 0.3, 0.8] {
        let treated = GaussianPrediction { mu: 1.0, var };
        let ite = ite_distribution(&treated, &control);
        println!(
            "var {var:.2}: ITE ~ N({:+.2}, {:.2})  P(response) {:.3}  P(count < 2) {:.3}",
            ite.mu_diff,
            ite.var_sum,
            prob_response(&ite),
            prob_count_below(&treated, 2.0)?
        );
        println!(
            "           point count {:.2}, expected count {:.2}, cost of mean {:.2}, mean cost {:.2}",
            point_count(&treated),
            expected_count(&treated),
            CostTransform::QuadraticLesion.apply(point_count(&treated)),
            expected_cost(&treated, CostTransform::QuadraticLesion)
        );
    }
    Ok(())
}
