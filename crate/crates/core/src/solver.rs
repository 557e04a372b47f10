//! Explicit finite-volume integration of the isothermal system
//! `∂tρ + div(ρu) = 0`, `∂t(ρu) + div(ρu⊗u) + ∇ρ = div S + ρf` with
//! `S = P(|Du|)Du`, and the standard energy ledger of a trajectory.
//!
//! Mass and convective momentum fluxes are first-order upwind at faces with
//! face velocity `½(u_L + u_R)`; pressure gradient and viscous divergence
//! use the central operators of [`crate::grid`]. Faces on a no-slip wall
//! carry zero flux because the ghost velocity is the odd reflection.

use std::sync::Arc;

use crate::constitutive::{stress, ViscosityLaw};
use crate::error::{Error, Result};
use crate::grid::{
    div_tensor, dot3, grad_scalar, integrate, strain, Grid, ScalarField, StrainMode, TensorField, VectorField,
};

/// Density below which a run is flagged as near vacuum.
pub const NEAR_VACUUM: f64 = 1e-8;
/// Retries with halved `dt` after a step produces negative density.
pub const MAX_RETRIES: usize = 10;

pub type ScalarFn = Arc<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn([f64; 3], f64) -> [f64; 3] + Send + Sync>;

#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    Zero,
    Field(VectorFn),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Field(_) => f.write_str("Field(..)"),
        }
    }
}

impl Forcing {
    pub fn eval(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        match self {
            Forcing::Zero => [0.0; 3],
            Forcing::Field(f) => f(x, t),
        }
    }

    pub fn sample(&self, grid: Grid, t: f64) -> VectorField {
        match self {
            Forcing::Zero => VectorField::zeros(grid),
            Forcing::Field(f) => crate::grid::discretize_vector(grid, t, |x, t| f(x, t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub rho: ScalarField,
    pub u: VectorField,
}

impl FlowState {
    pub fn new(t: f64, rho: ScalarField, u: VectorField) -> Result<Self> {
        if rho.grid() != u.grid() {
            return Err(Error::Shape("density and velocity grids differ".into()));
        }
        if let Some((cell, &v)) = rho.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeDensity {
                cell,
                value: v,
                t,
                retries: 0,
            });
        }
        Ok(Self { t, rho, u })
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.rho)
    }

    /// `∫ ½ρ|u|²`.
    pub fn kinetic(&self) -> f64 {
        let s: f64 = self
            .rho
            .values()
            .iter()
            .zip(self.u.values())
            .map(|(r, u)| 0.5 * r * dot3(u, u))
            .sum();
        s * self.grid().cell_measure()
    }

    /// `∫ ρ ln ρ` with `0·ln 0 = 0`.
    pub fn internal(&self) -> f64 {
        let s: f64 = self.rho.values().iter().map(|&r| h_density(r)).sum();
        s * self.grid().cell_measure()
    }
}

/// `H(ρ) = ρ ln ρ`, continuously extended by 0 at `ρ = 0`.
pub fn h_density(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r * r.ln()
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Grid,
    pub law: ViscosityLaw,
    pub end_time: f64,
    pub cfl: f64,
    pub forcing: Forcing,
    pub rho0: ScalarField,
    pub u0: VectorField,
    /// Snapshots are stored at `t = k·snapshot_interval` and at `end_time`.
    pub snapshot_interval: f64,
    pub strain_mode: StrainMode,
    /// Use this `dt` instead of the adaptive one; rejected if it exceeds the
    /// stability limit.
    pub fixed_dt: Option<f64>,
    pub max_steps: usize,
}

impl SimConfig {
    pub fn new(grid: Grid, law: ViscosityLaw, rho0: ScalarField, u0: VectorField, end_time: f64) -> Self {
        Self {
            grid,
            law,
            end_time,
            cfl: 0.4,
            forcing: Forcing::Zero,
            rho0,
            u0,
            snapshot_interval: end_time.max(f64::MIN_POSITIVE),
            strain_mode: StrainMode::Symmetric,
            fixed_dt: None,
            max_steps: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.end_time >= 0.0 && self.end_time.is_finite()) {
            return bad(format!("end time {} must be finite and ≥ 0", self.end_time));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl {} not in (0, 1)", self.cfl));
        }
        if !(self.snapshot_interval > 0.0) {
            return bad(format!("snapshot interval {} must be positive", self.snapshot_interval));
        }
        if *self.rho0.grid() != self.grid || *self.u0.grid() != self.grid {
            return bad("initial fields are not on the configured grid".into());
        }
        if self.rho0.values().iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("initial density must be finite and non-negative".into());
        }
        if !(integrate(&self.rho0) > 0.0) {
            return bad("initial mass must be positive".into());
        }
        if self.u0.values().iter().flatten().any(|v| !v.is_finite()) {
            return bad("initial velocity must be finite".into());
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("fixed dt {dt} must be positive"));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> FlowState {
        FlowState {
            t: 0.0,
            rho: self.rho0.clone(),
            u: self.u0.clone(),
        }
    }
}

/// `P(|Du|)Du` cellwise.
pub fn stress_field(law: &ViscosityLaw, d: &TensorField) -> TensorField {
    d.map(|t| stress(law, t))
}

/// `∫ P(|Du|)|Du|²`, with the strain taken per `mode`.
pub fn dissipation(law: &ViscosityLaw, u: &VectorField, mode: StrainMode) -> f64 {
    let d = strain(u, mode);
    let s: f64 = d.values().iter().map(|t| law.p_z2(t.norm())).sum();
    s * u.grid().cell_measure()
}

/// Largest `dt` allowed by the advective bound `cfl·h/(max|u| + 1)` and the
/// explicit viscous bound `cfl·h²·min ρ/(2·dim·ν)`, where `ν` is the largest
/// tangent viscosity `d(P(z)z)/dz` over the cells.
pub fn stable_dt(state: &FlowState, cfg: &SimConfig) -> f64 {
    let g = state.grid();
    let h = g.h_min();
    let umax = state.u.max_norm();
    let adv = cfg.cfl * h / (umax + 1.0);
    let d = strain(&state.u, cfg.strain_mode);
    let nu = d
        .values()
        .iter()
        .map(|t| {
            let z = t.norm();
            cfg.law.p(z) + cfg.law.p_prime(z) * z
        })
        .fold(0.0, f64::max);
    let rmin = state.rho.min();
    let visc = if nu > 0.0 {
        cfg.cfl * h * h * rmin / (2.0 * g.dim() as f64 * nu)
    } else {
        f64::INFINITY
    };
    adv.min(visc)
}

/// Semi-discrete right-hand side: `∂tρ` and `∂t(ρu)`, plus the dissipation
/// `∫P(|Du|)|Du|²` of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    pub drho: ScalarField,
    pub dmom: VectorField,
    pub dissipation: f64,
}

/// Parts of the momentum right-hand side, kept separate for identity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsParts {
    pub drho: ScalarField,
    /// `−div(ρu⊗u)` by upwind fluxes.
    pub convection: VectorField,
    /// `−∇ρ`.
    pub pressure: VectorField,
    /// `div S`.
    pub viscous: VectorField,
    /// `ρf`.
    pub source: VectorField,
    pub dissipation: f64,
}

pub fn rhs_parts(state: &FlowState, cfg: &SimConfig) -> RhsParts {
    let g = *state.grid();
    let dim = g.dim();
    let h = g.spacing();
    let rho = state.rho.values();
    let u = state.u.values();
    let n = g.len();
    let mut drho = vec![0.0; n];
    let mut conv = vec![[0.0; 3]; n];
    for i in 0..n {
        for a in 0..dim {
            let Some(j) = g.neighbor(i, a, 1) else { continue };
            let uf = 0.5 * (u[i][a] + u[j][a]);
            let up = if uf >= 0.0 { i } else { j };
            let fm = uf * rho[up] / h[a];
            drho[i] -= fm;
            drho[j] += fm;
            for c in 0..dim {
                let fc = fm * u[up][c];
                conv[i][c] -= fc;
                conv[j][c] += fc;
            }
        }
    }
    let grad = grad_scalar(&state.rho);
    let pressure: Vec<[f64; 3]> = grad.values().iter().map(|v| [-v[0], -v[1], -v[2]]).collect();
    let d = strain(&state.u, cfg.strain_mode);
    let viscous = div_tensor(&stress_field(&cfg.law, &d));
    let f = cfg.forcing.sample(g, state.t);
    let source: Vec<[f64; 3]> = f
        .values()
        .iter()
        .zip(rho)
        .map(|(fv, r)| {
            let mut s = [0.0; 3];
            for c in 0..dim {
                s[c] = r * fv[c];
            }
            s
        })
        .collect();
    let diss: f64 = d.values().iter().map(|t| cfg.law.p_z2(t.norm())).sum::<f64>() * g.cell_measure();
    RhsParts {
        drho: ScalarField::new(g, drho).expect("grid sized"),
        convection: VectorField::new(g, conv).expect("grid sized"),
        pressure: VectorField::new(g, pressure).expect("grid sized"),
        viscous,
        source: VectorField::new(g, source).expect("grid sized"),
        dissipation: diss,
    }
}

pub fn rhs(state: &FlowState, cfg: &SimConfig) -> Rhs {
    let p = rhs_parts(state, cfg);
    let g = *state.grid();
    let dmom = VectorField::from_fn(g, |i| {
        let mut m = [0.0; 3];
        for (c, mc) in m.iter_mut().enumerate().take(g.dim()) {
            *mc = p.convection.values()[i][c]
                + p.pressure.values()[i][c]
                + p.viscous.values()[i][c]
                + p.source.values()[i][c];
        }
        m
    });
    Rhs {
        drho: p.drho,
        dmom,
        dissipation: p.dissipation,
    }
}

/// One forward-Euler step without retries.
pub fn try_step(state: &FlowState, cfg: &SimConfig, dt: f64) -> Result<FlowState> {
    let r = rhs(state, cfg);
    let g = *state.grid();
    let t = state.t + dt;
    let mut rho = Vec::with_capacity(g.len());
    let mut u = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let r0 = state.rho.values()[i];
        let r1 = r0 + dt * r.drho.values()[i];
        if r1 < 0.0 {
            return Err(Error::NegativeDensity {
                cell: i,
                value: r1,
                t,
                retries: 0,
            });
        }
        let mut v = [0.0; 3];
        if r1 > 0.0 {
            for (c, vc) in v.iter_mut().enumerate().take(g.dim()) {
                *vc = (r0 * state.u.values()[i][c] + dt * r.dmom.values()[i][c]) / r1;
            }
        }
        if !r1.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { cell: i, t });
        }
        rho.push(r1);
        u.push(v);
    }
    Ok(FlowState {
        t,
        rho: ScalarField::new(g, rho)?,
        u: VectorField::new(g, u)?,
    })
}

/// A step of size at most `dt`, which must respect [`stable_dt`]. A step
/// that would make the density negative is retried with half the step, up
/// to [`MAX_RETRIES`] times; the returned state's `t` tells the step taken.
pub fn step(state: &FlowState, cfg: &SimConfig, dt: f64) -> Result<(FlowState, usize)> {
    let limit = stable_dt(state, cfg);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let mut h = dt;
    for retries in 0..=MAX_RETRIES {
        match try_step(state, cfg, h) {
            Ok(s) => return Ok((s, retries)),
            Err(Error::NegativeDensity { cell, value, t, .. }) if retries == MAX_RETRIES => {
                return Err(Error::NegativeDensity {
                    cell,
                    value,
                    t,
                    retries,
                })
            }
            Err(Error::NegativeDensity { .. }) => h *= 0.5,
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on the last retry")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time at the start of the step.
    pub t: f64,
    pub dt: f64,
    /// `∫P(|Du|)|Du|²` at the start of the step.
    pub dissipation: f64,
    pub retries: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<FlowState>,
    pub steps: Vec<StepRecord>,
    pub strain_mode: StrainMode,
    /// Some accepted state had `min ρ < 1e−8`.
    pub near_vacuum: bool,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &FlowState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn max_dt(&self) -> f64 {
        self.steps.iter().map(|s| s.dt).fold(0.0, f64::max)
    }
}

pub fn run(cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = cfg.initial_state();
    let mut snapshots = vec![state.clone()];
    let mut steps = Vec::new();
    let mut near_vacuum = state.rho.min() < NEAR_VACUUM;
    let t_end = cfg.end_time;
    let mut k = 1u64;
    while state.t < t_end {
        let next_snap = (k as f64 * cfg.snapshot_interval).min(t_end);
        if steps.len() >= cfg.max_steps {
            return Err(Error::StepLimit(cfg.max_steps));
        }
        let limit = stable_dt(&state, cfg);
        let want = match cfg.fixed_dt {
            Some(dt) if dt > limit * (1.0 + 1e-12) => return Err(Error::CflViolation { dt, limit }),
            Some(dt) => dt,
            None => limit,
        };
        let remaining = next_snap - state.t;
        let clamped = want >= remaining;
        let dt = if clamped { remaining } else { want };
        let diss = dissipation(&cfg.law, &state.u, cfg.strain_mode);
        let t0 = state.t;
        let (mut next, retries) = step(&state, cfg, dt)?;
        if clamped && retries == 0 {
            next.t = next_snap;
        }
        steps.push(StepRecord {
            t: t0,
            dt: next.t - t0,
            dissipation: diss,
            retries,
        });
        near_vacuum |= next.rho.min() < NEAR_VACUUM;
        state = next;
        if state.t == next_snap {
            snapshots.push(state.clone());
            k += 1;
        }
    }
    Ok(Trajectory {
        snapshots,
        steps,
        strain_mode: cfg.strain_mode,
        near_vacuum,
    })
}

/// Trapezoid cumulative integral of `ys` over `ts`.
pub fn cumulative_trapezoid(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ts.len());
    let mut acc = 0.0;
    for i in 0..ts.len() {
        if i > 0 {
            acc += 0.5 * (ts[i] - ts[i - 1]) * (ys[i] + ys[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub t: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub dissipation_cum: f64,
    pub work_cum: f64,
    /// `E(τ) + D(τ) − W(τ) − E(0)`; non-positive up to discretization error.
    pub sei_residual: f64,
}

/// `∫ρf·u` at one state.
pub fn work_rate(state: &FlowState, forcing: &Forcing) -> f64 {
    let g = *state.grid();
    let f = forcing.sample(g, state.t);
    let s: f64 = (0..g.len())
        .map(|i| state.rho.values()[i] * dot3(&f.values()[i], &state.u.values()[i]))
        .sum();
    s * g.cell_measure()
}

/// The standard energy ledger on the stored snapshots, with trapezoid
/// quadrature in time.
pub fn energy_report(traj: &Trajectory, law: &ViscosityLaw, forcing: &Forcing) -> Vec<EnergyRow> {
    let ts = traj.times();
    let diss: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| dissipation(law, &s.u, traj.strain_mode))
        .collect();
    let work: Vec<f64> = traj.snapshots.iter().map(|s| work_rate(s, forcing)).collect();
    let dcum = cumulative_trapezoid(&ts, &diss);
    let wcum = cumulative_trapezoid(&ts, &work);
    let e0 = traj.snapshots[0].kinetic() + traj.snapshots[0].internal();
    traj.snapshots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (k, h) = (s.kinetic(), s.internal());
            EnergyRow {
                t: s.t,
                kinetic: k,
                internal: h,
                dissipation_cum: dcum[i],
                work_cum: wcum[i],
                sei_residual: k + h + dcum[i] - wcum[i] - e0,
            }
        })
        .collect()
}
