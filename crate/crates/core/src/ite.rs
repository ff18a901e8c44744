//! ITE distributions, probability queries and count/cost-space expectations.
//!
//! Predictions are Gaussian on `y = ln(count + 1)`. Count-space thresholds
//! map through `ln(c + 1)`, the expected count is the log-normal mean
//! `exp(mu + var/2) - 1`, and the quadratic lesion cost `(count + 1)^2 =
//! exp(2y)` has expectation `exp(2 mu + 2 var)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::GaussianPrediction;

/// Gaussian over `y_t - y_0`, assuming independent arm predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IteDistribution {
    pub mu_diff: f64,
    pub var_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTransform {
    Identity,
    /// `(count + 1)^2`
    QuadraticLesion,
}

impl CostTransform {
    pub fn apply(self, count: f64) -> f64 {
        match self {
            CostTransform::Identity => count,
            CostTransform::QuadraticLesion => (count + 1.0).powi(2),
        }
    }
}

pub fn ite_distribution(pred_t: &GaussianPrediction, pred_0: &GaussianPrediction) -> IteDistribution {
    IteDistribution { mu_diff: pred_t.mu - pred_0.mu, var_sum: pred_t.var + pred_0.var }
}

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn count_to_log(count: f64) -> f64 {
    count.ln_1p()
}

pub fn log_to_count(y: f64) -> f64 {
    y.exp_m1()
}

/// `P(count < threshold)` for a log-scale Gaussian prediction.
pub fn prob_count_below(pred: &GaussianPrediction, count_threshold: f64) -> Result<f64> {
    if !(count_threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("count threshold {count_threshold} must be >= 0")));
    }
    Ok(std_normal_cdf((count_to_log(count_threshold) - pred.mu) / pred.sd()))
}

/// `P(ITE <= 0)`: any reduction in outcome relative to control.
pub fn prob_response(ite: &IteDistribution) -> f64 {
    std_normal_cdf(-ite.mu_diff / ite.var_sum.sqrt())
}

pub fn expected_count(pred: &GaussianPrediction) -> f64 {
    (pred.mu + 0.5 * pred.var).exp_m1()
}

pub fn expected_cost(pred: &GaussianPrediction, transform: CostTransform) -> f64 {
    match transform {
        CostTransform::Identity => expected_count(pred),
        CostTransform::QuadraticLesion => (2.0 * pred.mu + 2.0 * pred.var).exp(),
    }
}

/// Count implied by the mean alone, `exp(mu) - 1`.
pub fn point_count(pred: &GaussianPrediction) -> f64 {
    log_to_count(pred.mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: f64, var: f64) -> GaussianPrediction {
        GaussianPrediction { mu, var }
    }

    /// Maclaurin series of erf, summed in extended steps; accurate to ~1e-15 for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn phi_series(z: f64) -> f64 {
        0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2))
    }

    #[test]
    fn ite_formula() {
        let d = ite_distribution(&g(1.0, 0.5), &g(2.0, 0.3));
        assert_eq!(d.mu_diff, -1.0);
        assert!((d.var_sum - 0.8).abs() < 1e-15);
        let d = ite_distribution(&g(1.0, 0.5), &g(1.0, 0.5));
        assert_eq!(d.mu_diff, 0.0);
        let r = ite_distribution(&g(2.0, 0.3), &g(1.0, 0.5));
        assert_eq!(r.mu_diff, 1.0);
    }

    #[test]
    fn cdf_against_series() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        for i in -60..=60 {
            let z = i as f64 * 0.05;
            assert!((std_normal_cdf(z) - phi_series(z)).abs() < 1e-7, "z={z}");
        }
    }

    #[test]
    fn cdf_tail_and_symmetry() {
        // Mills-ratio upper bound: Phi(-z) < pdf(z)/z
        let bound = (-32.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt() / 8.0;
        let tail = std_normal_cdf(-8.0);
        assert!(tail > 0.0 && tail < bound && tail < 1e-14);
        for i in 0..200 {
            let z = i as f64 * 0.05;
            assert!((std_normal_cdf(-z) - (1.0 - std_normal_cdf(z))).abs() < 1e-12);
            assert!(std_normal_cdf(z + 0.05) >= std_normal_cdf(z));
        }
    }

    #[test]
    fn count_probabilities() {
        for var in [0.01, 0.5, 3.0] {
            assert!((prob_count_below(&g(3f64.ln(), var), 2.0).unwrap() - 0.5).abs() < 1e-15);
        }
        assert!(prob_count_below(&g(-3.0, 1e-4), 2.0).unwrap() > 1.0 - 1e-12);
        assert!(prob_count_below(&g(0.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn response_probability() {
        assert_eq!(prob_response(&IteDistribution { mu_diff: 0.0, var_sum: 0.7 }), 0.5);
        let d = IteDistribution { mu_diff: -0.8f64.sqrt(), var_sum: 0.8 };
        assert!((prob_response(&d) - phi_series(1.0)).abs() < 1e-12);
        assert!((prob_response(&d) - 0.841_344_746).abs() < 1e-8);
        let neg = IteDistribution { mu_diff: -d.mu_diff, var_sum: 0.8 };
        assert!((prob_response(&d) + prob_response(&neg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expectations_limits() {
        assert!(expected_count(&g(0.0, 1e-12)).abs() < 1e-11);
        assert!((expected_count(&g(4f64.ln(), 1e-12)) - 3.0).abs() < 1e-10);
        assert!((expected_cost(&g(0.0, 1e-4), CostTransform::QuadraticLesion) - 1.0).abs() < 1e-3);
        assert!((expected_cost(&g(0.0, 0.5), CostTransform::QuadraticLesion) - std::f64::consts::E).abs() < 1e-12);
        let p = g(0.5, 0.4);
        assert_eq!(expected_cost(&p, CostTransform::Identity), expected_count(&p));
        let mut prev = 0.0;
        for i in 1..20 {
            let c = expected_cost(&g(0.3, i as f64 * 0.1), CostTransform::QuadraticLesion);
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn convex_cost_exceeds_cost_of_median() {
        for (mu, var) in [(0.0, 0.1), (1.2, 0.5), (-0.3, 2.0)] {
            let p = g(mu, var);
            let median_cost = CostTransform::QuadraticLesion.apply(point_count(&p));
            assert!(expected_cost(&p, CostTransform::QuadraticLesion) >= median_cost);
        }
    }
}
