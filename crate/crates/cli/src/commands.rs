use std::fs;
use std::path::{Path, PathBuf};

use nnflow_core::constitutive::{
    certify_fg_decomposition, certify_p6, certify_p6a_chain, certify_pointwise_conditions, PairSampling,
};
use nnflow_core::grid::{fmt17, write_fields_csv, Boundary, Grid, ScalarField, StrainMode, VectorField};
use nnflow_core::mms::{convergence_run, observed_orders};
use nnflow_core::rel_energy::{
    coercivity_bound, estimate_korn_constant, gronwall_certify, lambda_stability, proof_step_identities, rei_residual,
    relative_energy_series, wsu_bound_report, GronwallMode, LinearTolerance, WsuConstants,
};
use nnflow_core::solver::{energy_report, run, SimConfig, Trajectory};
use nnflow_core::young::{conjugate_numeric, log_grid, ConjugateSearch};
use nnflow_core::{CertificateEntry, CertificateReport, Error, YoungFunction};

use crate::config::{Config, InitialKind};

/// Relative agreement required between numeric and closed-form conjugates.
pub const CONJUGATE_REL_TOL: f64 = 1e-8;

pub enum Failure {
    Usage(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_)
            | Error::InvalidGrid(_)
            | Error::UnsupportedLaw(_)
            | Error::InvalidTable(_)
            | Error::Precondition(_)
            | Error::IncompatiblePair { .. } => Failure::Usage(e.to_string()),
            Error::CflViolation { dt, limit } => {
                Failure::Numeric(format!("rejected step: dt = {dt} exceeds the stability limit {limit}"))
            }
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

pub type CmdResult = std::result::Result<Outcome, Failure>;

/// A finished command: overall verdict plus `key=value` summary lines.
pub struct Outcome {
    pub pass: bool,
    pub summary: Vec<(String, String)>,
}

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub seed: u64,
    pub tol_scale: f64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn tolerance(&self) -> LinearTolerance {
        LinearTolerance {
            k: self.cfg.tol_k * self.tol_scale,
        }
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn write_report(path: &Path, report: &CertificateReport) -> Result<(), Failure> {
    report.write_csv(path)?;
    Ok(())
}

pub fn check_law(ctx: &Ctx) -> CmdResult {
    let c = &ctx.cfg.check;
    let law = &ctx.cfg.law;
    let z_grid = log_grid(c.z_range.0, c.z_range.1, c.z_points);
    let mut report = certify_pointwise_conditions(law, &z_grid, c.tol * ctx.tol_scale, ctx.seed)?;
    let sampling = PairSampling {
        n_samples: c.samples,
        entry_range: c.entry_range,
        seed: ctx.seed,
    };
    let q = c.q.or(law.q_claimed).unwrap_or(2.0);
    let p6 = certify_p6(law, q, sampling)?;
    report.push(p6.entry(q));
    if law.alpha_lower.is_some() {
        report.extend(certify_p6a_chain(law, sampling)?);
    }
    if law.is_exponential() {
        report.extend(certify_fg_decomposition(law, &z_grid)?);
    }
    write_report(&ctx.path("law_report.csv"), &report)?;
    let mut summary = vec![kv("law", law.name()), kv("q", q), kv("p6_min_ratio", fmt17(p6.c_min))];
    if let Some(e) = report.get("p6a.exponent") {
        summary.push(kv("fitted_exponent", fmt17(e.value)));
    }
    for f in report.failures() {
        summary.push(kv(
            &format!("failed.{}", f.check),
            f.witness.clone().unwrap_or_else(|| fmt17(f.residual)),
        ));
    }
    Ok(Outcome {
        pass: report.all_pass(),
        summary,
    })
}

pub fn conjugate(ctx: &Ctx) -> CmdResult {
    let c = &ctx.cfg.conjugate;
    let ys = log_grid(c.y_range.0, c.y_range.1, c.points);
    let search = ConjugateSearch {
        z_hi: c.z_hi,
        ..Default::default()
    };
    let closed: Option<Box<dyn Fn(f64) -> f64>> = match (&c.young.kind, c.closed_form) {
        (_, false) => None,
        (nnflow_core::young::YoungKind::Quadratic, true) => Some(Box::new(|y| y * y)),
        _ => {
            let n = YoungFunction::exp_conjugate();
            Some(Box::new(move |y| n.eval(y).unwrap_or(f64::NAN)))
        }
    };
    let mut w = csv::Writer::from_path(ctx.path("conjugate.csv"))?;
    w.write_record(["y", "conjugate", "closed_form", "rel_err"])?;
    let mut worst = 0.0_f64;
    let mut pass = true;
    for &y in &ys {
        let v = conjugate_numeric(&c.young, y, search)?;
        let (exact, rel) = match &closed {
            Some(f) => {
                let e = f(y);
                (fmt17(e), (v - e).abs() / e.abs())
            }
            None => (String::new(), 0.0),
        };
        pass &= v.is_finite() && rel <= CONJUGATE_REL_TOL;
        worst = worst.max(rel);
        w.write_record([fmt17(y), fmt17(v), exact, fmt17(rel)])?;
    }
    w.flush()?;
    Ok(Outcome {
        pass,
        summary: vec![kv("points", ys.len()), kv("max_rel_err", fmt17(worst))],
    })
}

/// Builds the run described by `[grid]`, `[initial]` and `[run]`.
fn sim_config(cfg: &Config, n: usize, kind: InitialKind) -> Result<SimConfig, Failure> {
    let g = &cfg.grid;
    let mut sim = match kind {
        InitialKind::Rest => {
            let grid = Grid::new(g.dim, &vec![n; g.dim], &vec![g.length; g.dim], g.bc)?;
            SimConfig::new(
                grid,
                cfg.law.clone(),
                ScalarField::constant(grid, cfg.initial.density),
                VectorField::zeros(grid),
                cfg.run.end_time,
            )
        }
        InitialKind::Wave | InitialKind::PerturbedWave => {
            if g.bc != Boundary::Periodic {
                return Err(Failure::Usage(
                    "traveling-wave initial data needs [grid] bc = periodic".into(),
                ));
            }
            if cfg.run.strain != StrainMode::Symmetric {
                return Err(Failure::Usage(
                    "traveling-wave initial data needs [run] strain = symmetric".into(),
                ));
            }
            let w = cfg.initial.wave;
            let grid = w.grid(g.dim, n)?;
            if kind == InitialKind::Wave {
                w.config(&cfg.law, grid, cfg.run.end_time)?
            } else {
                w.perturbed_config(&cfg.law, grid, cfg.run.end_time, cfg.initial.e0)?
            }
        }
    };
    sim.cfl = cfg.run.cfl;
    sim.fixed_dt = cfg.run.dt;
    sim.strain_mode = cfg.run.strain;
    sim.max_steps = cfg.run.max_steps;
    if let Some(s) = cfg.run.snapshot_interval {
        sim.snapshot_interval = s;
    }
    sim.validate()?;
    Ok(sim)
}

fn write_energy(path: &Path, traj: &Trajectory, sim: &SimConfig) -> Result<f64, Failure> {
    let rows = energy_report(traj, &sim.law, &sim.forcing);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "kinetic",
        "internal",
        "dissipation_cum",
        "work_cum",
        "sei_residual",
    ])?;
    for r in &rows {
        w.write_record([
            fmt17(r.t),
            fmt17(r.kinetic),
            fmt17(r.internal),
            fmt17(r.dissipation_cum),
            fmt17(r.work_cum),
            fmt17(r.sei_residual),
        ])?;
    }
    w.flush()?;
    Ok(rows.iter().map(|r| r.sei_residual).fold(f64::NEG_INFINITY, f64::max))
}

fn write_snapshots(dir: &Path, traj: &Trajectory) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    index.write_record(["snapshot", "t", "file"])?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        let g = *s.grid();
        let name = format!("snapshot_{k:05}.csv");
        let comps: Vec<Vec<f64>> = (0..g.dim()).map(|c| s.u.component(c).into_values()).collect();
        let labels = ["u_x", "u_y", "u_z"];
        let mut cols: Vec<(&str, &[f64])> = vec![("rho", s.rho.values())];
        for (c, v) in comps.iter().enumerate() {
            cols.push((labels[c], v));
        }
        write_fields_csv(&dir.join(&name), &g, &cols)?;
        index.write_record([k.to_string(), fmt17(s.t), name])?;
    }
    index.flush()?;
    Ok(())
}

pub fn simulate(ctx: &Ctx) -> CmdResult {
    let sim = sim_config(&ctx.cfg, ctx.cfg.grid.n, ctx.cfg.initial.kind)?;
    let traj = run(&sim)?;
    let sei_max = write_energy(&ctx.path("energy.csv"), &traj, &sim)?;
    if ctx.cfg.run.write_snapshots {
        write_snapshots(&ctx.path("snapshots"), &traj)?;
    }
    let (h, dt) = (sim.grid.h_min(), traj.max_dt());
    let tol = ctx.tolerance().at(h, dt);
    Ok(Outcome {
        pass: sei_max <= tol,
        summary: vec![
            kv("steps", traj.steps.len()),
            kv("snapshots", traj.snapshots.len()),
            kv("max_dt", fmt17(dt)),
            kv("sei_residual_max", fmt17(sei_max)),
            kv("tol", fmt17(tol)),
            kv("near_vacuum", traj.near_vacuum),
        ],
    })
}

fn wave_only(ctx: &Ctx) -> Result<(), Failure> {
    if ctx.cfg.initial.kind == InitialKind::Rest {
        return Err(Failure::Usage(
            "this command needs [initial] kind = wave or perturbed_wave".into(),
        ));
    }
    if ctx.cfg.grid.bc != Boundary::Periodic {
        return Err(Failure::Usage("this command needs [grid] bc = periodic".into()));
    }
    Ok(())
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

pub fn convergence(ctx: &Ctx) -> CmdResult {
    wave_only(ctx)?;
    let cfg = &ctx.cfg;
    let study = &cfg.convergence;
    let rows = study
        .n
        .iter()
        .map(|&n| {
            convergence_run(
                &cfg.initial.wave,
                &cfg.law,
                cfg.grid.dim,
                n,
                cfg.run.end_time,
                cfg.run.cfl,
            )
        })
        .collect::<nnflow_core::Result<Vec<_>>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let or = observed_orders(&hs, &rows.iter().map(|r| r.err_rho).collect::<Vec<_>>());
    let ou = observed_orders(&hs, &rows.iter().map(|r| r.err_u).collect::<Vec<_>>());
    let finest = rows.last().expect("at least two grids");
    let k = LinearTolerance::calibrate(finest.sei_max_abs, finest.h, finest.dt_max);
    let k = LinearTolerance { k: k.k * ctx.tol_scale };
    let mut w = csv::Writer::from_path(ctx.path("convergence.csv"))?;
    w.write_record([
        "n",
        "h",
        "dt_max",
        "err_rho",
        "err_u",
        "order_rho",
        "order_u",
        "sei_max",
        "sei_max_abs",
        "tol",
    ])?;
    let mut sei_ok = true;
    for (i, r) in rows.iter().enumerate() {
        let tol = k.at(r.h, r.dt_max);
        sei_ok &= r.sei_max <= tol;
        let prev = i.checked_sub(1);
        w.write_record([
            r.n.to_string(),
            fmt17(r.h),
            fmt17(r.dt_max),
            fmt17(r.err_rho),
            fmt17(r.err_u),
            opt_fmt(prev.map(|p| or[p])),
            opt_fmt(prev.map(|p| ou[p])),
            fmt17(r.sei_max),
            fmt17(r.sei_max_abs),
            fmt17(tol),
        ])?;
    }
    w.flush()?;
    let monotone = rows.windows(2).all(|p| p[1].sei_max_abs < p[0].sei_max_abs);
    let min_order = or.iter().chain(&ou).cloned().fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        pass: min_order >= study.min_order && sei_ok && monotone,
        summary: vec![
            kv("min_order", fmt17(min_order)),
            kv("required_order", study.min_order),
            kv("tol_k", fmt17(k.k)),
            kv("sei_within_tol", sei_ok),
            kv("sei_monotone", monotone),
        ],
    })
}

/// Keeps, per check name, the conclusive entry closest to its bound; a name
/// whose entries are all inconclusive stays inconclusive. Entries with a
/// zero bound and zero value (e.g. at `E = 0`) rank lowest.
fn merge_worst(into: &mut Vec<CertificateEntry>, from: CertificateReport) {
    fn rank(c: &CertificateEntry) -> (bool, bool, f64) {
        let ratio = if c.bound > 0.0 {
            c.value / c.bound
        } else if c.value == 0.0 && c.residual <= 0.0 {
            f64::NEG_INFINITY
        } else {
            c.residual
        };
        (!c.inconclusive, !c.pass, ratio)
    }
    for e in from.entries {
        match into.iter_mut().find(|x| x.check == e.check) {
            None => into.push(e),
            Some(x) => {
                if rank(&e).partial_cmp(&rank(x)) == Some(std::cmp::Ordering::Greater) {
                    *x = e;
                }
            }
        }
    }
}

pub fn certify(ctx: &Ctx) -> CmdResult {
    wave_only(ctx)?;
    let cfg = &ctx.cfg;
    let sim = sim_config(cfg, cfg.grid.n, cfg.initial.kind)?;
    let traj = run(&sim)?;
    let refs = cfg.initial.wave.references(&traj)?;
    let (h, dt) = (sim.grid.h_min(), traj.max_dt());
    let tol = ctx.tolerance().at(h, dt);
    let rei = rei_residual(&traj, &refs, &sim.forcing, &sim.law, tol)?;

    let mut report = CertificateReport::new();
    report.push(rei.entry());
    let steps = proof_step_identities(&traj, &refs, &sim)?;
    let names = ["proof.kinetic_test", "proof.momentum_test", "proof.log_density_test"];
    for (name, v) in names.iter().zip(steps.max_abs()) {
        report.push(CertificateEntry::upper(*name, v, tol));
    }
    let q = sim.law.q_claimed.unwrap_or(2.0);
    let korn = match sim.grid.bc() {
        Boundary::NoSlip => Some(estimate_korn_constant(
            sim.grid,
            q,
            sim.strain_mode,
            cfg.korn_trials,
            ctx.seed,
        )?),
        Boundary::Periodic => None,
    };
    let consts = WsuConstants {
        korn,
        ..Default::default()
    };
    let mut merged = Vec::new();
    for (s, r) in traj.snapshots.iter().zip(&refs) {
        merge_worst(&mut merged, coercivity_bound(s, r)?);
        merge_worst(&mut merged, wsu_bound_report(s, r, &sim.law, sim.strain_mode, &consts)?);
    }
    report.entries.extend(merged);
    let mode = match cfg.initial.kind {
        InitialKind::PerturbedWave => GronwallMode::Perturbed,
        _ => GronwallMode::IdenticalData,
    };
    let fit = gronwall_certify(&rei.times(), &rei.energies(), mode, tol)?;
    report.push(fit.entry("gronwall"));

    let pass = rei.pass() && report.all_pass();
    let mut summary = vec![
        kv("lambda", fmt17(fit.lambda)),
        kv("max_E", fmt17(fit.max_e)),
        kv("tol", fmt17(tol)),
        kv("tol_k", fmt17(ctx.tolerance().k)),
        kv("rei_max_residual", fmt17(rei.max_residual())),
        kv("pass", pass),
    ];
    for e in &report.entries {
        for c in &e.constants {
            let key = format!("constant.{}", c.name);
            if !summary.iter().any(|(k, _)| *k == key) {
                summary.push(kv(&key, format!("{}({})", fmt17(c.value), c.provenance)));
            }
        }
    }
    rei.write_csv(&ctx.path("certificate.csv"), &summary)?;
    write_report(&ctx.path("checks.csv"), &report)?;
    Ok(Outcome { pass, summary })
}

pub fn weak_strong(ctx: &Ctx) -> CmdResult {
    wave_only(ctx)?;
    let cfg = &ctx.cfg;
    let ws = &cfg.weak_strong;
    let wave = cfg.initial.wave;
    let tolerance = ctx.tolerance();
    let mut report = CertificateReport::new();
    let mut w = csv::Writer::from_path(ctx.path("weak_strong.csv"))?;
    w.write_record(["mode", "n", "h", "dt_max", "e0", "max_E", "tol", "lambda", "order"])?;

    let mut hs = Vec::new();
    let mut maxes = Vec::new();
    for &n in &ws.study.n {
        let sim = sim_config(cfg, n, InitialKind::Wave)?;
        let traj = run(&sim)?;
        let refs = wave.references(&traj)?;
        let es = relative_energy_series(&traj, &refs)?;
        let (h, dt) = (sim.grid.h_min(), traj.max_dt());
        let fit = gronwall_certify(&traj.times(), &es, GronwallMode::IdenticalData, tolerance.at(h, dt))?;
        report.push(fit.entry(&format!("gronwall.identical.n{n}")));
        let order = if hs.is_empty() {
            None
        } else {
            Some(observed_orders(&[*hs.last().unwrap(), h], &[*maxes.last().unwrap(), fit.max_e])[0])
        };
        w.write_record([
            "identical".into(),
            n.to_string(),
            fmt17(h),
            fmt17(dt),
            fmt17(es[0]),
            fmt17(fit.max_e),
            fmt17(fit.tol),
            fmt17(fit.lambda),
            opt_fmt(order),
        ])?;
        hs.push(h);
        maxes.push(fit.max_e);
    }
    let orders = observed_orders(&hs, &maxes);
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    report.push(CertificateEntry::new(
        "weak_strong.identical_order",
        min_order,
        0.0,
        ws.study.min_order - min_order,
    ));

    let scale = {
        let g = wave.grid(cfg.grid.dim, ws.perturb_n)?;
        wave.density_field(g, 0.0).values().iter().sum::<f64>() * g.cell_measure()
    };
    let mut fits = Vec::new();
    for &mag in &ws.perturbations {
        let mut local = cfg.clone();
        local.initial.e0 = mag * scale;
        let sim = sim_config(&local, ws.perturb_n, InitialKind::PerturbedWave)?;
        let traj = run(&sim)?;
        let refs = wave.references(&traj)?;
        let es = relative_energy_series(&traj, &refs)?;
        let (h, dt) = (sim.grid.h_min(), traj.max_dt());
        let fit = gronwall_certify(&traj.times(), &es, GronwallMode::Perturbed, tolerance.at(h, dt))?;
        w.write_record([
            "perturbed".into(),
            ws.perturb_n.to_string(),
            fmt17(h),
            fmt17(dt),
            fmt17(es[0]),
            fmt17(fit.max_e),
            fmt17(fit.tol),
            fmt17(fit.lambda),
            String::new(),
        ])?;
        report.push(fit.entry(&format!("gronwall.perturbed.{}", fmt17(mag))));
        fits.push(fit);
    }
    w.flush()?;
    report.push(lambda_stability(&fits[0], &fits[1]));
    write_report(&ctx.path("checks.csv"), &report)?;
    Ok(Outcome {
        pass: report.all_pass(),
        summary: vec![
            kv("min_order", fmt17(min_order)),
            kv("lambda_a", fmt17(fits[0].lambda)),
            kv("lambda_b", fmt17(fits[1].lambda)),
            kv("tol_k", fmt17(tolerance.k)),
        ],
    })
}
