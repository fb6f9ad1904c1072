//! Dense oracle suite on tiny instances: symmetry, trivial kernel, dense
//! against sparse solve, gradient identity.
//!
//! Usage: `cargo run --release --example oracle -- [seed]`

use wavecontrol::analysis::oracle_suite;

fn main() -> wavecontrol::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let report = oracle_suite(seed)?;
    for c in &report.cases {
        println!(
            "{:<16} {:>4} dofs  sigma ratio {:.2e}  dense/sparse {:.1e}  gradient {:.1e}  identity {:.1e}  {}",
            c.name,
            c.dofs,
            c.kernel.ratio,
            c.dense_vs_sparse,
            c.gradient_rel_err,
            c.identity_defect,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}
