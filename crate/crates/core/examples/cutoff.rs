//! Smooth cut-offs and their nodal interpolants: values along a line and
//! discrepancy rates under refinement.
//!
//! Usage: `cargo run --release --example cutoff`

use wavecontrol::cutoff::{build_cutoff, cutoff_discrepancy, discretize_cutoff, CutoffSpec};
use wavecontrol::mesh::{square_mesh, Domain};

fn main() -> wavecontrol::Result<()> {
    let chi = build_cutoff(CutoffSpec::collar(0.3, 0.1), Domain::UnitSquare)?;
    println!("collar width 0.3, delta 0.1 on the unit square, along y = 0.5:");
    for i in 0..=10 {
        let x = i as f64 * 0.05;
        let (v, g) = chi.eval_with_gradient([x, 0.5]);
        println!("  x = {x:.2}: chi = {v:.4}, d/dx chi = {:+.4}", g[0]);
    }
    println!("\n  1/h   |chi - chi_h|_inf   |grad(chi - chi_h)|_inf");
    let mut prev: Option<(f64, f64)> = None;
    for n in [32, 64, 128, 256] {
        let mesh = square_mesh(n);
        let (linf, w1) = cutoff_discrepancy(&chi, &mesh, &discretize_cutoff(&chi, &mesh));
        match prev {
            Some((a, b)) => println!("  {n:>4}  {linf:.3e} ({:.2})    {w1:.3e} ({:.2})", (a / linf).log2(), (b / w1).log2()),
            None => println!("  {n:>4}  {linf:.3e}           {w1:.3e}"),
        }
        prev = Some((linf, w1));
    }
    Ok(())
}
