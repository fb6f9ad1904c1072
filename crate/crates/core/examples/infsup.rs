//! Empirical inf-sup constant on the unit square with a boundary collar.
//!
//! Usage: `cargo run --release --example infsup -- [n] [trials]` with mesh
//! parameter `n` (cells per side, default 8).

use wavecontrol::analysis::{infsup_check, setup_level, InfSupOptions};
use wavecontrol::cutoff::CutoffSpec;
use wavecontrol::fem::FemSpace;
use wavecontrol::mesh::square_mesh;
use wavecontrol::system::{InitialData, Scales};
use wavecontrol::timegrid::TimeGrid;

fn main() -> wavecontrol::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let trials: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);

    let space = FemSpace::new(square_mesh(n))?;
    let grid = TimeGrid::with_ratio(3.0, space.h(), 1.0)?;
    let (disc, data) = setup_level(space, grid, &CutoffSpec::collar(0.3, 0.1), &InitialData::Zero, &InitialData::Zero)?;
    let sys = disc.assemble_saddle(&data, Scales::default())?;

    let opts = InfSupOptions { trials, ..Default::default() };
    let report = infsup_check(&disc, &sys.matrix, &opts)?;
    println!("h = {:.4}, tau = {:.4}, N = {}, Nh = {}", report.h, report.tau, report.steps, report.n_dofs);
    println!("best gamma = {:.3e}, alpha0 = {:.2}", report.gamma, report.alpha0);
    println!("c_emp = {:.4e} over {} trials ({})", report.c_emp, report.trials, if report.pass { "positive" } else { "not positive" });
    println!("max relative defect of A(x; (u,U,-z,-Z)) = |(u,U)|_R^2: {:.2e}", report.identity_defect);
    Ok(())
}
