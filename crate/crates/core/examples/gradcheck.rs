//! Compare the hand-written backward pass with central finite differences.

use uncertain_ite::gradcheck::{gradcheck_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};

fn main() -> uncertain_ite::Result<()> {
    let cases = gradcheck_suite(20, 0, DEFAULT_STEP)?;
    for c in &cases {
        println!("seed {:2}: {} params, max rel error {:.2e} at {}", c.seed, c.n_params, c.max_rel_error, c.worst_index);
    }
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.2e}, tolerance {DEFAULT_TOLERANCE:.0e}: {}", if worst < DEFAULT_TOLERANCE { "ok" } else { "FAILED" });
    Ok(())
}
