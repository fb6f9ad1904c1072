//! The `wavecontrol` command line driver.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    backward_wave_solve, compute_norms, convergence_study, discrete_energy, forward_wave_from, forward_wave_solve,
    infsup_check, oracle_suite, scheme_residuals, setup_level, write_gnuplot_script, write_study_csv,
};
use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::mesh::build_mesh;
use crate::solver::solve;
use crate::system::{Discretization, ProblemData, Scales, StateVector};
use crate::timegrid::{SpaceTimeField, TimeGrid};

/// Exit code for a check that ran but did not pass.
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Relative tolerance for replaying a stored solution.
pub const REPLAY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "wavecontrol", version, about = "Space-time finite elements for interior null control of the wave equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble and solve one instance.
    Solve(CommonArgs),
    /// Run a convergence study over nested levels.
    Convergence(CommonArgs),
    /// Replay a stored solution with the forward and backward wave solvers.
    Verify(CommonArgs),
    /// Empirical inf-sup check.
    Infsup(CommonArgs),
    /// Dense oracle suite on tiny instances.
    Oracle(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks; overrides `seed` of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accept a final time below twice the domain diameter.
    #[arg(long = "allow-short-T")]
    pub allow_short_t: bool,
}

/// Parsed config plus the resolved output directory and seed.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    pub fn new(args: &CommonArgs) -> Result<Self> {
        let config = RunConfig::load(&args.config)?;
        config.validate(args.allow_short_t)?;
        let out = args
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("wavecontrol-out"));
        std::fs::create_dir_all(&out)?;
        let seed = args.seed.unwrap_or(config.seed);
        Ok(Self { config, out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn header(&self, command: &str) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": self.seed,
            "config": self.config,
        })
    }

    /// The single-level problem of the config.
    pub fn problem(&self) -> Result<(Discretization, ProblemData)> {
        let mesh = build_mesh(&self.config.domain)?;
        let space = FemSpace::new(mesh)?;
        let grid = TimeGrid::with_ratio(self.config.time.t_final, space.h(), self.config.time.rho)?;
        let (g0, g1) = self.config.initial_data()?;
        setup_level(space, grid, &self.config.cutoff, &g0, &g1)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

fn merge(mut header: Value, body: Value) -> Value {
    if let (Value::Object(h), Value::Object(b)) = (&mut header, body) {
        h.extend(b);
    }
    header
}

fn problem_summary(d: &Discretization) -> Value {
    let mesh = d.space.mesh();
    json!({
        "h": d.h,
        "n_vertices": mesh.n_vertices(),
        "n_cells": mesh.n_cells(),
        "n_dofs": d.n_dofs(),
        "T": d.grid.t_final(),
        "N": d.steps(),
        "tau": d.tau(),
        "total_dofs": d.layout().len(),
    })
}

/// `‖∇u^N‖² + ‖∂u^N‖²`
fn final_energy(d: &Discretization, u: &SpaceTimeField) -> Result<f64> {
    Ok(2.0 * discrete_energy(d, u)?.last().copied().unwrap_or(0.0))
}

pub fn cmd_solve(ctx: &Context) -> Result<i32> {
    let (d, data) = ctx.problem()?;
    let sys = d.assemble_saddle(&data, Scales::default())?;
    if ctx.config.export_matrix {
        let m = BufWriter::new(File::create(ctx.path("matrix.coo"))?);
        let s = BufWriter::new(File::create(ctx.path("matrix.json"))?);
        sys.export(m, s)?;
        sys.write_rhs(BufWriter::new(File::create(ctx.path("rhs.txt"))?))?;
    }
    let report = solve(&d, &sys, &ctx.config.solver)?;
    let x = &report.solution;
    x.write_binary(BufWriter::new(File::create(ctx.path("solution.bin"))?))?;
    d.space.mesh().write_text(BufWriter::new(File::create(ctx.path("mesh.txt"))?))?;
    if let (Some(c), Some(r)) = (&report.column_permutation, &report.row_permutation) {
        write_json(&ctx.path("ordering.json"), &json!({ "column": c, "row": r }))?;
    }
    let u = x.u();
    let r = d.eval_r(&u, &data)?;
    let body = json!({
        "problem": problem_summary(&d),
        "solve": report.stats,
        "norms": compute_norms(&d, x)?,
        "controllability": {
            "R": r,
            "R_residual": (2.0 * r).sqrt(),
            "final_energy": final_energy(&d, &u)?,
            "J1": d.eval_j1(&x.cap_u())?,
        },
        "scheme_residual_max": scheme_residuals(&d, x)?.max(),
    });
    write_json(&ctx.path("solve.json"), &merge(ctx.header("solve"), body))?;
    Ok(0)
}

pub fn cmd_convergence(ctx: &Context) -> Result<i32> {
    let spec = ctx.config.study_spec()?;
    let rows = convergence_study(&spec, |row| {
        eprintln!(
            "level {}: h = {:.4e}, N = {}, dofs = {}, sqrt(2R) = {:.4e}, {:.1} s",
            row.level, row.h, row.steps, row.dofs, row.r_residual, row.wall_time
        );
    })?;
    write_study_csv(&rows, BufWriter::new(File::create(ctx.path("convergence.csv"))?))?;
    write_gnuplot_script("convergence.csv", BufWriter::new(File::create(ctx.path("convergence.gp"))?))?;
    write_json(&ctx.path("convergence.json"), &merge(ctx.header("convergence"), json!({ "rows": rows })))?;
    Ok(0)
}

fn relative_difference(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let diff: f64 = a.as_flat().iter().zip(b.as_flat()).map(|(p, q)| (p - q) * (p - q)).sum();
    let size: f64 = b.as_flat().iter().map(|v| v * v).sum();
    if size == 0.0 {
        diff.sqrt()
    } else {
        (diff / size).sqrt()
    }
}

pub fn cmd_verify(ctx: &Context) -> Result<i32> {
    let (d, data) = ctx.problem()?;
    let path = ctx.path("solution.bin");
    let file = File::open(&path).map_err(|e| Error::Config(format!("cannot open {}: {e} (run `solve` first)", path.display())))?;
    let x = StateVector::read_binary(BufReader::new(file))?;
    if x.layout() != d.layout() {
        return Err(Error::Config(format!("{} does not match the configured problem", path.display())));
    }
    let n = d.steps();
    let (u, cap_u) = (x.u(), x.cap_u());
    let forward = forward_wave_from(&d, &cap_u, u.level(0)?, u.level(1)?)?;
    let backward = backward_wave_solve(&d, cap_u.level(n)?, cap_u.level(n - 1)?)?;
    let forward_rel = relative_difference(&forward, &u);
    let backward_rel = relative_difference(&backward, &cap_u);
    let residuals = scheme_residuals(&d, &x)?;
    let free = forward_wave_solve(&d, &SpaceTimeField::zeros(d.n_dofs(), 0, n), &data)?;
    let energy = discrete_energy(&d, &free)?;
    let monotone = energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let pass = forward_rel <= REPLAY_TOL && backward_rel <= REPLAY_TOL && residuals.max() <= REPLAY_TOL && monotone;
    let body = json!({
        "problem": problem_summary(&d),
        "forward_replay_rel": forward_rel,
        "backward_replay_rel": backward_rel,
        "scheme_residual_max": residuals.max(),
        "final_energy": final_energy(&d, &u)?,
        "uncontrolled_final_energy": final_energy(&d, &free)?,
        "uncontrolled_energy_monotone": monotone,
        "tolerance": REPLAY_TOL,
        "pass": pass,
    });
    write_json(&ctx.path("verify.json"), &merge(ctx.header("verify"), body))?;
    Ok(if pass { 0 } else { EXIT_CHECK_FAILED })
}

pub fn cmd_infsup(ctx: &Context) -> Result<i32> {
    let (d, data) = ctx.problem()?;
    let sys = d.assemble_saddle(&data, Scales::default())?;
    let report = infsup_check(&d, &sys.matrix, &ctx.config.infsup_options(ctx.seed))?;
    let body = json!({ "problem": problem_summary(&d), "infsup": report });
    write_json(&ctx.path("infsup.json"), &merge(ctx.header("infsup"), body))?;
    Ok(if report.pass { 0 } else { EXIT_CHECK_FAILED })
}

pub fn cmd_oracle(ctx: &Context) -> Result<i32> {
    let report = oracle_suite(ctx.seed)?;
    write_json(&ctx.path("oracle.json"), &merge(ctx.header("oracle"), json!({ "oracle": report })))?;
    Ok(if report.pass { 0 } else { EXIT_CHECK_FAILED })
}

pub fn run(cli: &Cli) -> Result<i32> {
    let (args, f): (&CommonArgs, fn(&Context) -> Result<i32>) = match &cli.command {
        Command::Solve(a) => (a, cmd_solve),
        Command::Convergence(a) => (a, cmd_convergence),
        Command::Verify(a) => (a, cmd_verify),
        Command::Infsup(a) => (a, cmd_infsup),
        Command::Oracle(a) => (a, cmd_oracle),
    };
    f(&Context::new(args)?)
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
