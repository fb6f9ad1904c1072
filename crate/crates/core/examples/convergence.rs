//! Convergence study on the unit square: collar control region, `T = 3`,
//! `g₀ = sin(πx) sin(πy)`, `g₁ = 0`, nested levels starting at `h = 1/8`.
//!
//! Usage: `cargo run --release --example convergence -- [levels]`

use wavecontrol::analysis::{convergence_study, write_study_csv, StudySpec};
use wavecontrol::cutoff::CutoffSpec;
use wavecontrol::mesh::{Domain, DomainSpec};
use wavecontrol::solver::SolveOptions;
use wavecontrol::system::InitialData;

fn main() -> wavecontrol::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let levels: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let domain = match args.get(2).map(String::as_str) {
        Some("interval") => Domain::UnitInterval,
        _ => Domain::UnitSquare,
    };
    let base_h: f64 = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(1.0 / 8.0);
    let rho: f64 = args.get(4).and_then(|a| a.parse().ok()).unwrap_or(1.0);
    let spec = StudySpec {
        domain: DomainSpec::new(domain, base_h),
        cutoff: CutoffSpec::collar(0.3, 0.1),
        g0: InitialData::SinProduct { modes: [1, 1], amplitude: 1.0 },
        g1: InitialData::Zero,
        t_final: 3.0,
        rho,
        levels,
        solver: SolveOptions::default(),
    };
    let rows = convergence_study(&spec, |r| {
        eprintln!("level {}: N = {}, dofs = {}, {:.1} s", r.level, r.steps, r.dofs, r.wall_time);
    })?;
    write_study_csv(&rows, std::io::stdout().lock())
}
