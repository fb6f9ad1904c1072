//! Independent oracles for the assembled system.

use nalgebra::{DMatrix, DVector};
use wavecontrol::analysis::{backward_wave_solve, forward_wave_from, scheme_residuals};
use wavecontrol::fem::FemSpace;
use wavecontrol::mesh::interval_mesh;
use wavecontrol::solver::{solve, SolveOptions};
use wavecontrol::system::{Discretization, ProblemData, Scales};
use wavecontrol::timegrid::{SpaceTimeField, TimeGrid};

fn instance(cells: usize, steps: usize) -> (Discretization, ProblemData) {
    let space = FemSpace::new(interval_mesh(cells)).unwrap();
    let chi: Vec<f64> = space.mesh().points().iter().map(|p| if p[0] < 0.3 || p[0] > 0.7 { 1.0 } else { 0.25 }).collect();
    let nh = space.n_dofs();
    let data = ProblemData {
        g0: (0..nh).map(|i| ((i + 1) as f64).sin()).collect(),
        g1: (0..nh).map(|i| 0.5 * ((2 * i + 1) as f64).cos()).collect(),
    };
    (Discretization::new(space, TimeGrid::new(1.5, steps).unwrap(), chi).unwrap(), data)
}

/// Objective on the constraint set, as a function of
/// `(u⁰, u¹, U^{N-1}, U^N)`.
fn reduced(d: &Discretization, data: &ProblemData, p: &[f64]) -> f64 {
    let nh = d.n_dofs();
    let cap_u = backward_wave_solve(d, &p[3 * nh..], &p[2 * nh..3 * nh]).unwrap();
    let u = forward_wave_from(d, &cap_u, &p[..nh], &p[nh..2 * nh]).unwrap();
    d.eval_r(&u, data).unwrap() + d.eval_j1(&cap_u).unwrap()
}

#[test]
fn saddle_solution_minimizes_the_reduced_functional() {
    let (d, data) = instance(5, 7);
    let nh = d.n_dofs();
    let m = 4 * nh;
    let unit = |i: usize, j: Option<usize>| {
        let mut p = vec![0.0; m];
        p[i] += 1.0;
        if let Some(j) = j {
            p[j] += 1.0;
        }
        p
    };
    let c = reduced(&d, &data, &vec![0.0; m]);
    let diag: Vec<f64> = (0..m).map(|i| reduced(&d, &data, &unit(i, None))).collect();
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            hess[(i, j)] = if i == j {
                let two: Vec<f64> = unit(i, None).iter().map(|v| 2.0 * v).collect();
                reduced(&d, &data, &two) - 2.0 * diag[i] + c
            } else {
                reduced(&d, &data, &unit(i, Some(j))) - diag[i] - diag[j] + c
            };
        }
    }
    let b = DVector::from_fn(m, |i, _| 0.5 * hess[(i, i)] + c - diag[i]);
    let p = hess.clone().lu().solve(&b).unwrap();

    let sys = d.assemble_saddle(&data, Scales::default()).unwrap();
    let x = solve(&d, &sys, &SolveOptions::default()).unwrap().solution;
    let u = x.u();
    let cap_u = x.cap_u();
    let expect: Vec<f64> = [u.level(0).unwrap(), u.level(1).unwrap(), cap_u.level(6).unwrap(), cap_u.level(7).unwrap()].concat();
    let scale = p.amax();
    for (a, b) in expect.iter().zip(p.iter()) {
        assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
    }
    let optimum = reduced(&d, &data, p.as_slice());
    assert!((optimum - reduced(&d, &data, &expect)).abs() <= 1e-10 * optimum.max(1.0));
}

#[test]
fn saddle_solution_satisfies_both_recursions() {
    let (d, data) = instance(6, 9);
    let sys = d.assemble_saddle(&data, Scales::default()).unwrap();
    let x = solve(&d, &sys, &SolveOptions::default()).unwrap().solution;
    assert!(scheme_residuals(&d, &x).unwrap().max() <= 1e-10);

    let u = x.u();
    let cap_u = x.cap_u();
    let replay = forward_wave_from(&d, &cap_u, u.level(0).unwrap(), u.level(1).unwrap()).unwrap();
    let back = backward_wave_solve(&d, cap_u.level(9).unwrap(), cap_u.level(8).unwrap()).unwrap();
    let rel = |a: &SpaceTimeField, b: &SpaceTimeField| {
        let diff = a.as_flat().iter().zip(b.as_flat()).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        (diff / b.as_flat().iter().map(|v| v * v).sum::<f64>()).sqrt()
    };
    assert!(rel(&replay, &u) <= 1e-8);
    assert!(rel(&back, &cap_u) <= 1e-8);
}
