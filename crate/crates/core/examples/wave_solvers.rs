//! The independent forward and backward wave solvers: energy decay of the
//! implicit scheme and the time-reversal mirror.
//!
//! Usage: `cargo run --release --example wave_solvers`

use wavecontrol::analysis::{backward_wave_solve, discrete_energy, forward_wave_solve};
use wavecontrol::fem::FemSpace;
use wavecontrol::mesh::square_mesh;
use wavecontrol::system::{Discretization, InitialData, ProblemData};
use wavecontrol::timegrid::{SpaceTimeField, TimeGrid};

fn main() -> wavecontrol::Result<()> {
    let space = FemSpace::new(square_mesh(16))?;
    let n_vertices = space.mesh().n_vertices();
    let data = ProblemData::from_spec(&space, &InitialData::SinProduct { modes: [2, 1], amplitude: 1.0 }, &InitialData::Zero)?;
    for rho in [0.25, 1.0, 4.0] {
        let grid = TimeGrid::with_ratio(3.0, space.h(), rho)?;
        let d = Discretization::new(space.clone(), grid, vec![1.0; n_vertices])?;
        let n = d.steps();
        let u = forward_wave_solve(&d, &SpaceTimeField::zeros(d.n_dofs(), 0, n), &data)?;
        let e = discrete_energy(&d, &u)?;
        let mirrored = u.time_reversed(n);
        let back = backward_wave_solve(&d, mirrored.level(n)?, mirrored.level(n - 1)?)?;
        let err = back.as_flat().iter().zip(mirrored.as_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "rho = {rho:<4}: N = {n:>3}, energy {:.4} -> {:.4} ({:.1}% kept), mirror error {err:.1e}",
            e[0],
            e[n - 1],
            100.0 * e[n - 1] / e[0]
        );
    }
    Ok(())
}
