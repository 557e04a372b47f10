//! Relative energy pipeline against the traveling-wave reference on coarse
//! grids.

use nnflow_core::mms::{convergence_run, ConvergenceRow};
use nnflow_core::rel_energy::{
    proof_step_identities, rei_residual, relative_energy, remainder_general, remainder_strong, LinearTolerance,
};
use nnflow_core::solver::run;
use nnflow_core::{TravelingWave, ViscosityLaw};

const T_END: f64 = 0.1;
const CFL: f64 = 0.4;
const TOL_K: f64 = 0.033;

fn study() -> Vec<ConvergenceRow> {
    [32, 64]
        .iter()
        .map(|&n| {
            convergence_run(
                &TravelingWave::default(),
                &ViscosityLaw::exponential(),
                1,
                n,
                T_END,
                CFL,
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn pipeline_shrinks_under_refinement() {
    let wave = TravelingWave::default();
    let law = ViscosityLaw::exponential();
    let tol = LinearTolerance { k: TOL_K };
    let mut rei_max = Vec::new();
    let mut remainder_gap = Vec::new();
    let mut proof = Vec::new();
    for row in study() {
        let traj = &row.trajectory;
        let refs = wave.references(traj).unwrap();
        let rei = rei_residual(traj, &refs, &row.forcing, &law, tol.at(row.h, row.dt_max)).unwrap();
        assert!(rei.pass(), "n = {}: {}", row.n, rei.max_residual());
        rei_max.push(rei.rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max));

        let mode = traj.strain_mode;
        let gap = traj
            .snapshots
            .iter()
            .zip(&refs)
            .map(|(s, r)| {
                let general = remainder_general(s, r, &row.forcing, &law, mode).unwrap().total();
                let strong = remainder_strong(s, r, &law, mode).unwrap().total();
                (general - strong).abs()
            })
            .fold(0.0, f64::max);
        remainder_gap.push(gap);

        let mut cfg = wave.config(&law, *traj.snapshots[0].grid(), T_END).unwrap();
        cfg.cfl = CFL;
        let steps = proof_step_identities(traj, &refs, &cfg).unwrap();
        proof.push(steps.max_abs());
    }
    assert!(rei_max[1] < 0.5 * rei_max[0], "{rei_max:?}");
    assert!(remainder_gap[1] < remainder_gap[0], "{remainder_gap:?}");
    for k in 0..3 {
        let order = (proof[0][k] / proof[1][k]).log2();
        assert!(order >= 1.0, "identity {k}: {proof:?}");
    }
}

#[test]
fn perturbed_data_hits_the_requested_energy() {
    let wave = TravelingWave::default();
    let law = ViscosityLaw::exponential();
    let grid = wave.grid(1, 32).unwrap();
    for e0 in [1e-2, 1e-3, 0.0] {
        let cfg = wave.perturbed_config(&law, grid, 0.01, e0).unwrap();
        let s = cfg.initial_state();
        let e = relative_energy(&s, &wave.reference(grid, 0.0).unwrap()).unwrap();
        assert!((e - e0).abs() <= 1e-12 * e0.max(1e-300), "{e} vs {e0}");
    }
    assert!(wave.perturbed_config(&law, grid, 0.01, -1.0).is_err());
}

#[test]
fn perturbed_energy_stays_bounded() {
    let wave = TravelingWave::default();
    let law = ViscosityLaw::exponential();
    let grid = wave.grid(1, 32).unwrap();
    let mut cfg = wave.perturbed_config(&law, grid, 0.05, 1e-2).unwrap();
    cfg.cfl = CFL;
    let traj = run(&cfg).unwrap();
    let refs = wave.references(&traj).unwrap();
    for (s, r) in traj.snapshots.iter().zip(&refs) {
        let e = relative_energy(s, r).unwrap();
        assert!(e.is_finite() && e <= 1e-2 * (1.0 + 1e-9), "t = {}: {e}", s.t);
    }
}
