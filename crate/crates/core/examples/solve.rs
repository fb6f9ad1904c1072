//! Assembles and solves one control problem from a JSON config, then
//! prints the norms of the discrete solution.
//!
//! Usage: `cargo run --release --example solve -- [config.json]`

use wavecontrol::analysis::{compute_norms, discrete_energy, scheme_residuals};
use wavecontrol::cli::{CommonArgs, Context};
use wavecontrol::solver::solve;
use wavecontrol::system::Scales;

fn main() -> wavecontrol::Result<()> {
    let config = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/square_collar.json").to_string());
    let args = CommonArgs {
        config: config.into(),
        out: Some(std::env::temp_dir().join("wavecontrol-example-solve")),
        seed: None,
        allow_short_t: false,
    };
    let ctx = Context::new(&args)?;
    let (d, data) = ctx.problem()?;
    let sys = d.assemble_saddle(&data, Scales::default())?;
    let report = solve(&d, &sys, &ctx.config.solver)?;
    let s = &report.stats;
    println!(
        "{:?}: {} unknowns, relative residual {:.2e}, {:.2} s",
        s.method, s.unknowns, s.relative_residual, s.wall_time
    );
    let x = &report.solution;
    let r = d.eval_r(&x.u(), &data)?;
    println!("sqrt(2 R(u_h)) = {:.4e}", (2.0 * r).sqrt());
    println!("final energy   = {:.4e}", discrete_energy(&d, &x.u())?.last().copied().unwrap_or(0.0));
    println!("scheme residual = {:.2e}", scheme_residuals(&d, x)?.max());
    println!("{:#?}", compute_norms(&d, x)?);
    Ok(())
}
