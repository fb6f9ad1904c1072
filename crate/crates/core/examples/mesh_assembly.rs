//! Meshes, P1 matrices and the assembled saddle system on a small square.
//!
//! Usage: `cargo run --example mesh_assembly -- [n] [out_dir]`

use std::fs::File;
use std::io::BufWriter;

use wavecontrol::analysis::{setup_level, structure_check};
use wavecontrol::cutoff::CutoffSpec;
use wavecontrol::fem::{estimate_inverse_constants, FemSpace};
use wavecontrol::mesh::{disk_mesh, square_mesh};
use wavecontrol::system::{Block, InitialData, Scales};
use wavecontrol::timegrid::TimeGrid;

fn main() -> wavecontrol::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let out = args.next();

    let mesh = square_mesh(n);
    println!(
        "square: {} vertices, {} cells, h = {:.4}, quasi-uniformity {:.3}",
        mesh.n_vertices(),
        mesh.n_cells(),
        mesh.h(),
        mesh.quasi_uniformity()
    );
    let disk = disk_mesh(1.0, [0.0, 0.0], 4);
    println!(
        "disk:   {} vertices, {} cells, area {:.4} (pi = {:.4}), boundary deviation {:.2e}",
        disk.n_vertices(),
        disk.n_cells(),
        disk.total_measure(),
        std::f64::consts::PI,
        disk.boundary_deviation()
    );

    let space = FemSpace::new(mesh)?;
    let m = space.assemble_mass();
    let k = space.assemble_stiffness();
    println!("P1 on {} interior dofs: nnz(M) = {}, nnz(K) = {}", space.n_dofs(), m.nnz(), k.nnz());
    let grid = TimeGrid::with_ratio(3.0, space.h(), 1.0)?;
    let c = estimate_inverse_constants(&space, &grid)?;
    println!("inverse constants: kappa = {:.3}, kappa~ = {:.3}", c.kappa, c.kappa_tilde);

    let sin = InitialData::SinProduct { modes: [1, 1], amplitude: 1.0 };
    let (d, data) = setup_level(space, grid, &CutoffSpec::collar(0.3, 0.1), &sin, &InitialData::Zero)?;
    let sys = d.assemble_saddle(&data, Scales::default())?;
    let s = structure_check(&sys);
    println!(
        "saddle system: {} unknowns, {} nonzeros, symmetry defect {:.1e}, block transpose defect {:.1e}",
        sys.matrix.n_rows(),
        sys.matrix.nnz(),
        s.symmetry,
        s.block_transpose
    );
    for r in Block::ALL {
        let row: Vec<String> = Block::ALL.iter().map(|&c| format!("{:>7}", sys.block(r, c).nnz())).collect();
        println!("  {:<18} {}", format!("{r:?}"), row.join(" "));
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        d.space.mesh().write_text(BufWriter::new(File::create(format!("{dir}/mesh.txt"))?))?;
        sys.export(
            BufWriter::new(File::create(format!("{dir}/matrix.coo"))?),
            BufWriter::new(File::create(format!("{dir}/matrix.json"))?),
        )?;
        println!("wrote mesh and matrix to {dir}");
    }
    Ok(())
}
