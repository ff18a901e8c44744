//! Run every pipeline stage into a scratch directory with a reduced budget
//! and print the manifest.

use uncertain_ite::pipeline::{load_config, run_all};

fn main() -> uncertain_ite::Result<()> {
    let out = std::env::temp_dir().join("uite_full_pipeline");
    let sets = ["cohort.n_patients=2000", "test_patients=4000", "train.max_epochs=40"].map(String::from);
    let cfg = load_config(None, &sets, Some(42), Some(&out))?;
    let manifest = run_all(&cfg)?;
    println!("config hash {}", manifest.config_hash);
    for (stage, secs) in &manifest.wall_clock_seconds {
        println!("  {stage:<10} {secs:6.2} s");
    }
    for f in &manifest.files {
        println!("  {:<38} {:>9} bytes  {}", f.path, f.bytes, &f.sha256[..12]);
    }
    println!("report: {}", out.join("report.md").display());
    Ok(())
}
