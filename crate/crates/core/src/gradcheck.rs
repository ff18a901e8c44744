//! Central finite-difference check of the reverse-mode gradient.
//!
//! The finite-difference side only calls the forward loss, so it shares no
//! code with the backward pass it validates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::{init_params, NetConfig, Params};
use crate::rng::substream;
use crate::sim::Observation;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Components with both gradients below this magnitude are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub seed: u64,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

/// Tiny random instance: d=3, one trunk layer of width 4, two heads, eight samples.
pub fn random_instance(seed: u64) -> Result<(Params, Vec<Observation>)> {
    let config = NetConfig {
        input_dim: 3,
        trunk_widths: vec![4],
        head_hidden: 4,
        init_seed: seed,
        ..NetConfig::new(3, 2)
    };
    let mut params = init_params(&config)?;
    let mut rng = substream(seed, "gradcheck/instance", 0);
    for v in &mut params.values {
        *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let batch = (0..8)
        .map(|id| Observation {
            id,
            features: (0..3).map(|_| rng.sample(StandardNormal)).collect(),
            treatment: id % 2,
            outcome: rng.random_range(0.0..2.5),
        })
        .collect();
    Ok((params, batch))
}

pub fn check_gradient(params: &Params, batch: &[Observation], step: f64) -> Result<(f64, usize)> {
    let (_, analytic) = params.network()?.loss_and_grad(batch)?;
    let mut probe = params.clone();
    let mut worst = (0.0, 0);
    for i in 0..params.values.len() {
        let base = params.values[i];
        probe.values[i] = base + step;
        let up = probe.network()?.batch_nll(batch)?;
        probe.values[i] = base - step;
        let down = probe.network()?.batch_nll(batch)?;
        probe.values[i] = base;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(worst)
}

/// Runs `n` random instances with seeds `base_seed..base_seed + n`.
pub fn gradcheck_suite(n: usize, base_seed: u64, step: f64) -> Result<Vec<GradCheckCase>> {
    (base_seed..base_seed + n as u64)
        .map(|seed| {
            let (params, batch) = random_instance(seed)?;
            let (max_rel_error, worst_index) = check_gradient(&params, &batch, step)?;
            Ok(GradCheckCase { seed, n_params: params.values.len(), max_rel_error, worst_index })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let cases = gradcheck_suite(20, 0, DEFAULT_STEP).unwrap();
        for c in &cases {
            assert!(c.max_rel_error < DEFAULT_TOLERANCE, "{c:?}");
        }
        let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        println!("worst relative error {worst:e}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let (params, batch) = random_instance(3).unwrap();
        let (_, mut g) = params.network().unwrap().loss_and_grad(&batch).unwrap();
        g[5] += 1e-2;
        let mut probe = params.clone();
        probe.values[5] += DEFAULT_STEP;
        let up = probe.network().unwrap().batch_nll(&batch).unwrap();
        probe.values[5] -= 2.0 * DEFAULT_STEP;
        let down = probe.network().unwrap().batch_nll(&batch).unwrap();
        assert!(relative_error(g[5], (up - down) / (2.0 * DEFAULT_STEP)) > DEFAULT_TOLERANCE);
    }
}
