//! Manufactured strong solutions: forcing that makes a chosen `(ρ̃, ũ)` an
//! exact solution, the traveling-wave family used for convergence studies,
//! and the refinement-study helpers.

use std::sync::Arc;

use crate::constitutive::ViscosityLaw;
use crate::error::{Error, Result};
use crate::grid::{
    discretize_scalar, discretize_vector, integrate, Boundary, Grid, ScalarField, StrainMode, VectorField,
};
use crate::rel_energy::ReferencePair;
use crate::solver::{energy_report, run, Forcing, ScalarFn, SimConfig, Trajectory, VectorFn};
use crate::tensor::Tensor3;

/// Auxiliary finite-difference step is the shortest domain side over this.
pub const AUX_CELLS: f64 = 4096.0;
/// Bound on the sampled continuity residual of a manufactured pair.
pub const CONTINUITY_TOL: f64 = 1e-10;

#[derive(Clone)]
pub struct Manufactured {
    pub rho: ScalarFn,
    pub u: VectorFn,
}

impl std::fmt::Debug for Manufactured {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Manufactured(..)")
    }
}

/// Fourth-order central difference of `f` at 0 with step `h`.
fn d1(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn shifted(x: [f64; 3], axis: usize, by: f64) -> [f64; 3] {
    let mut y = x;
    y[axis] += by;
    y
}

/// Strain of a closed-form velocity by fourth-order differences.
fn strain_fd(u: &VectorFn, dim: usize, x: [f64; 3], t: f64, h: f64, mode: StrainMode) -> Tensor3 {
    let mut m = [[0.0; 3]; 3];
    for j in 0..dim {
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            row[j] = d1(|s| u(shifted(x, j, s), t)[i], h);
        }
    }
    let g = Tensor3 { m, symmetric: false };
    match mode {
        StrainMode::Symmetric => g.sym_part(),
        StrainMode::Full => g,
    }
}

/// Continuity residual `∂tρ + div(ρu)` by fourth-order differences.
fn continuity_residual(m: &Manufactured, dim: usize, x: [f64; 3], t: f64, h: f64) -> f64 {
    let dt = d1(|s| (m.rho)(x, t + s), h);
    let div: f64 = (0..dim)
        .map(|a| d1(|s| (m.rho)(shifted(x, a, s), t) * (m.u)(shifted(x, a, s), t)[a], h))
        .sum();
    dt + div
}

/// Forcing `f = ∂tũ + (∇ũ)ũ + ∇ρ̃/ρ̃ − div(P(|Dũ|)Dũ)/ρ̃` with every
/// derivative of `ρ̃` and `ũ` taken by fourth-order central differences on
/// step `h_aux = min side / 4096`, so `f` carries an `O(h_aux⁴)` bias.
///
/// The stress itself is not differenced: `P(|D|)D` is only C¹ where `D`
/// vanishes (the exponential `P` has a `|D|/6` term), so its divergence is
/// assembled as `P(|D|)∂_jD_ij + P'(|D|)(D:∂_jD/|D|)D_ij`.
///
/// Checks on the cell centres of `grid` at `t ∈ {0, T/2, T}`: `ρ̃` bounded
/// away from zero, the continuity equation, and `ũ = 0` on no-slip walls.
pub fn mms_forcing(m: &Manufactured, law: &ViscosityLaw, grid: &Grid, t_end: f64, mode: StrainMode) -> Result<Forcing> {
    let dim = grid.dim();
    let lens = grid.lengths();
    let h = lens[..dim].iter().cloned().fold(f64::INFINITY, f64::min) / AUX_CELLS;
    let times = [0.0, 0.5 * t_end, t_end];
    let mut r_low = f64::INFINITY;
    let mut worst = 0.0_f64;
    let mut scale = 1.0_f64;
    for &t in &times {
        for i in 0..grid.len() {
            let x = grid.center(i);
            r_low = r_low.min((m.rho)(x, t));
            worst = worst.max(continuity_residual(m, dim, x, t, h).abs());
            scale = scale.max(d1(|s| (m.rho)(x, t + s), h).abs());
        }
    }
    if !(r_low > 0.0) {
        return Err(Error::Precondition(format!(
            "manufactured density must stay positive, min sampled value {r_low}"
        )));
    }
    let bound = CONTINUITY_TOL * scale;
    if !(worst <= bound) {
        return Err(Error::IncompatiblePair { residual: worst, bound });
    }
    if grid.bc() == Boundary::NoSlip {
        for &t in &times {
            for i in 0..grid.len() {
                let x = grid.center(i);
                for a in 0..dim {
                    for wall in [0.0, lens[a]] {
                        let v = (m.u)(shifted(x, a, wall - x[a]), t);
                        if v.iter().any(|c| c.abs() > 1e-12) {
                            return Err(Error::Precondition(format!(
                                "manufactured velocity {v:?} does not vanish on the wall at t={t}"
                            )));
                        }
                    }
                }
            }
        }
    }
    let (m, law) = (m.clone(), law.clone());
    let f: VectorFn = Arc::new(move |x, t| {
        let rho = (m.rho)(x, t);
        let u = (m.u)(x, t);
        let d = strain_fd(&m.u, dim, x, t, h, mode);
        let z = d.norm();
        let (p, dp_dz) = (law.p(z), law.p_prime(z));
        let dd: Vec<Tensor3> = (0..dim)
            .map(|j| {
                let at = |s: f64| strain_fd(&m.u, dim, shifted(x, j, s), t, h, mode);
                ((at(h) - at(-h)) * 8.0 - (at(2.0 * h) - at(-2.0 * h))) * (1.0 / (12.0 * h))
            })
            .collect();
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(dim) {
            let dtu = d1(|s| (m.u)(x, t + s)[i], h);
            let conv: f64 = (0..dim).map(|j| u[j] * d1(|s| (m.u)(shifted(x, j, s), t)[i], h)).sum();
            let dp = d1(|s| (m.rho)(shifted(x, i, s), t), h);
            let divs: f64 = (0..dim)
                .map(|j| {
                    let radial = if z > 0.0 {
                        dp_dz * d.ddot(&dd[j]) / z * d.m[i][j]
                    } else {
                        0.0
                    };
                    p * dd[j].m[i][j] + radial
                })
                .sum();
            *o = dtu + conv + dp / rho - divs / rho;
        }
        out
    });
    Ok(Forcing::Field(f))
}

/// `ρ̃ = 1 + a·sin(2πk(x − ct)/L)`, `ũ = c + K/ρ̃` along the first axis.
/// `ρ̃ũ = cρ̃ + K`, so the continuity equation holds identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelingWave {
    pub amplitude: f64,
    pub wavenumber: f64,
    pub speed: f64,
    pub flux: f64,
    pub length: f64,
}

impl Default for TravelingWave {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            wavenumber: 1.0,
            speed: 1.0,
            flux: -0.2,
            length: 1.0,
        }
    }
}

impl TravelingWave {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.abs() < 1.0
            && self.length > 0.0
            && self.wavenumber.fract() == 0.0
            && self.wavenumber >= 1.0)
        {
            return Err(Error::Config(format!(
                "traveling wave needs |a| < 1, L > 0 and a positive integer wavenumber: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn rho(&self, x: [f64; 3], t: f64) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * self.wavenumber * (x[0] - self.speed * t) / self.length;
        1.0 + self.amplitude * phase.sin()
    }

    pub fn u(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        [self.speed + self.flux / self.rho(x, t), 0.0, 0.0]
    }

    pub fn density_bounds(&self) -> (f64, f64) {
        (1.0 - self.amplitude.abs(), 1.0 + self.amplitude.abs())
    }

    pub fn manufactured(&self) -> Manufactured {
        let (a, b) = (*self, *self);
        Manufactured {
            rho: Arc::new(move |x, t| a.rho(x, t)),
            u: Arc::new(move |x, t| b.u(x, t)),
        }
    }

    pub fn density_field(&self, grid: Grid, t: f64) -> ScalarField {
        discretize_scalar(grid, t, |x, t| self.rho(x, t))
    }

    pub fn velocity_field(&self, grid: Grid, t: f64) -> VectorField {
        discretize_vector(grid, t, |x, t| self.u(x, t))
    }

    /// The wave as a reference pair at `t`, with exact time derivatives:
    /// `∂tρ̃ = −c∂xρ̃` and `∂tũ = −K∂tρ̃/ρ̃²`.
    pub fn reference(&self, grid: Grid, t: f64) -> Result<ReferencePair> {
        let w = 2.0 * std::f64::consts::PI * self.wavenumber / self.length;
        let dt_rho = |x: [f64; 3], t: f64| -self.speed * self.amplitude * w * (w * (x[0] - self.speed * t)).cos();
        let dt_r = discretize_scalar(grid, t, dt_rho);
        let dt_u = discretize_vector(grid, t, |x, t| {
            let r = self.rho(x, t);
            [-self.flux * dt_rho(x, t) / (r * r), 0.0, 0.0]
        });
        ReferencePair::new(t, self.density_field(grid, t), self.velocity_field(grid, t))?
            .with_time_derivatives(dt_r, dt_u)
    }

    /// Like [`Self::config`] but with initial velocity `ũ(0) + δ·sin(4πx/L)`
    /// along the first axis, `δ` chosen so the initial relative energy with
    /// respect to the wave is exactly `e0`.
    pub fn perturbed_config(&self, law: &ViscosityLaw, grid: Grid, t_end: f64, e0: f64) -> Result<SimConfig> {
        if !(e0 >= 0.0 && e0.is_finite()) {
            return Err(Error::Config(format!(
                "initial relative energy {e0} must be finite and ≥ 0"
            )));
        }
        let mut cfg = self.config(law, grid, t_end)?;
        let shape = |i: usize| (4.0 * std::f64::consts::PI * grid.center(i)[0] / self.length).sin();
        let base: f64 = (0..grid.len())
            .map(|i| 0.5 * cfg.rho0.values()[i] * shape(i) * shape(i))
            .sum::<f64>()
            * grid.cell_measure();
        let delta = (e0 / base).sqrt();
        for (i, v) in cfg.u0.values_mut().iter_mut().enumerate() {
            v[0] += delta * shape(i);
        }
        Ok(cfg)
    }

    /// Exact reference pairs at the snapshot times of `traj`.
    pub fn references(&self, traj: &Trajectory) -> Result<Vec<ReferencePair>> {
        let grid = *traj.snapshots[0].grid();
        traj.snapshots.iter().map(|s| self.reference(grid, s.t)).collect()
    }

    /// Periodic grid of `n` cells per axis on `[0, L)^dim`.
    pub fn grid(&self, dim: usize, n: usize) -> Result<Grid> {
        Grid::new(dim, &vec![n; dim], &vec![self.length; dim], Boundary::Periodic)
    }

    /// A run from the exact initial data with the manufactured forcing.
    pub fn config(&self, law: &ViscosityLaw, grid: Grid, t_end: f64) -> Result<SimConfig> {
        self.validate()?;
        let forcing = mms_forcing(&self.manufactured(), law, &grid, t_end, StrainMode::Symmetric)?;
        let mut cfg = SimConfig::new(
            grid,
            law.clone(),
            self.density_field(grid, 0.0),
            self.velocity_field(grid, 0.0),
            t_end,
        );
        cfg.forcing = forcing;
        cfg.snapshot_interval = grid.h_min();
        Ok(cfg)
    }
}

/// `sqrt(∫(a − b)²)`.
pub fn l2_diff_scalar(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = ScalarField::from_fn(*a.grid(), |i| {
        let e = a.values()[i] - b.values()[i];
        e * e
    });
    integrate(&d).sqrt()
}

/// `sqrt(∫|a − b|²)`.
pub fn l2_diff_vector(a: &VectorField, b: &VectorField) -> f64 {
    let d = ScalarField::from_fn(*a.grid(), |i| {
        let (x, y) = (a.values()[i], b.values()[i]);
        (0..3).map(|c| (x[c] - y[c]) * (x[c] - y[c])).sum()
    });
    integrate(&d).sqrt()
}

/// `ln(e_i/e_{i+1}) / ln(h_i/h_{i+1})` for consecutive refinements.
pub fn observed_orders(hs: &[f64], errs: &[f64]) -> Vec<f64> {
    hs.windows(2)
        .zip(errs.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub dt_max: f64,
    pub err_rho: f64,
    pub err_u: f64,
    /// `max_τ sei_residual(τ)`.
    pub sei_max: f64,
    /// `max_τ |sei_residual(τ)|`.
    pub sei_max_abs: f64,
    pub trajectory: Trajectory,
    pub forcing: Forcing,
}

/// Runs the wave on `n` cells per axis and measures the final-time errors
/// and the energy-ledger residual.
pub fn convergence_run(
    wave: &TravelingWave,
    law: &ViscosityLaw,
    dim: usize,
    n: usize,
    t_end: f64,
    cfl: f64,
) -> Result<ConvergenceRow> {
    let grid = wave.grid(dim, n)?;
    let mut cfg = wave.config(law, grid, t_end)?;
    cfg.cfl = cfl;
    let traj = run(&cfg)?;
    let last = traj.last();
    let err_rho = l2_diff_scalar(&last.rho, &wave.density_field(grid, last.t));
    let err_u = l2_diff_vector(&last.u, &wave.velocity_field(grid, last.t));
    let rows = energy_report(&traj, law, &cfg.forcing);
    let sei_max = rows.iter().map(|r| r.sei_residual).fold(f64::NEG_INFINITY, f64::max);
    let sei_max_abs = rows.iter().map(|r| r.sei_residual.abs()).fold(0.0, f64::max);
    Ok(ConvergenceRow {
        n,
        h: grid.h_min(),
        dt_max: traj.max_dt(),
        err_rho,
        err_u,
        sei_max,
        sei_max_abs,
        trajectory: traj,
        forcing: cfg.forcing,
    })
}
