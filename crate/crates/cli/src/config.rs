//! Sectioned `key = value` run configuration. Every key is optional; an
//! unknown section or key is an error.

use std::collections::BTreeMap;
use std::path::Path;

use ini::Ini;
use nnflow_core::grid::{Boundary, StrainMode};
use nnflow_core::{TravelingWave, ViscosityLaw, YoungFunction};

/// Frozen tolerance slope `K` in `tol = K·(h + dt)`: the largest energy
/// ledger residual of the N = 256 traveling-wave baseline (1.2821e−4 at
/// `h + dt = 3.910e−3`), rounded up.
pub const DEFAULT_TOL_K: f64 = 0.033;

const KEYS: &[(&str, &[&str])] = &[
    ("law", &["kind", "c", "alpha", "mu", "sign_flip"]),
    (
        "check",
        &[
            "samples",
            "entry_min",
            "entry_max",
            "q",
            "z_min",
            "z_max",
            "z_points",
            "tol",
        ],
    ),
    ("conjugate", &["young", "gamma", "y_min", "y_max", "points", "z_hi"]),
    ("grid", &["dim", "n", "length", "bc"]),
    (
        "initial",
        &["kind", "density", "amplitude", "wavenumber", "speed", "flux", "e0"],
    ),
    (
        "run",
        &[
            "end_time",
            "cfl",
            "dt",
            "snapshot_interval",
            "strain",
            "max_steps",
            "write_snapshots",
        ],
    ),
    ("tolerance", &["k"]),
    ("convergence", &["n", "min_order"]),
    ("certify", &["korn_trials"]),
    ("weak_strong", &["n", "min_order", "perturb_n", "perturbations"]),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Res<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialKind {
    Rest,
    Wave,
    PerturbedWave,
}

#[derive(Debug, Clone)]
pub struct CheckSection {
    pub samples: usize,
    pub entry_range: (f64, f64),
    pub q: Option<f64>,
    pub z_range: (f64, f64),
    pub z_points: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct ConjugateSection {
    pub young: YoungFunction,
    pub closed_form: bool,
    pub y_range: (f64, f64),
    pub points: usize,
    pub z_hi: f64,
}

#[derive(Debug, Clone)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub bc: Boundary,
}

#[derive(Debug, Clone)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub density: f64,
    pub wave: TravelingWave,
    pub e0: f64,
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub end_time: f64,
    pub cfl: f64,
    pub dt: Option<f64>,
    pub snapshot_interval: Option<f64>,
    pub strain: StrainMode,
    pub max_steps: usize,
    pub write_snapshots: bool,
}

#[derive(Debug, Clone)]
pub struct StudySection {
    pub n: Vec<usize>,
    pub min_order: f64,
}

#[derive(Debug, Clone)]
pub struct WeakStrongSection {
    pub study: StudySection,
    pub perturb_n: usize,
    pub perturbations: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub law: ViscosityLaw,
    pub check: CheckSection,
    pub conjugate: ConjugateSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub run: RunSection,
    pub tol_k: f64,
    pub convergence: StudySection,
    pub korn_trials: usize,
    pub weak_strong: WeakStrongSection,
}

struct Raw(BTreeMap<String, BTreeMap<String, String>>);

impl Raw {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.0.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Res<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .or_else(|_| err(format!("[{section}] {key} = {v:?} is not a valid value"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, section: &str, key: &str) -> Res<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .or_else(|_| err(format!("[{section}] {key} = {v:?} is not a valid value"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, section: &str, key: &str, default: Vec<T>) -> Res<Vec<T>> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .or_else(|_| err(format!("[{section}] {key}: {p:?} is not a valid list entry")))
                })
                .collect(),
        }
    }
}

/// Drops ` ; …` and ` # …` tails; full-line comments are left to the parser.
fn strip_inline_comments(text: &str) -> String {
    text.lines()
        .map(|l| {
            let cut = [" ;", "\t;", " #", "\t#"].iter().filter_map(|m| l.find(m)).min();
            cut.map_or(l, |i| &l[..i])
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Config {
    pub fn load(path: &Path) -> Res<Self> {
        let text = std::fs::read_to_string(path).or_else(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Res<Self> {
        let text = strip_inline_comments(text);
        let ini = Ini::load_from_str(&text).or_else(|e| err(format!("malformed configuration: {e}")))?;
        let mut raw = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return err("keys outside a [section]");
                }
                continue;
            };
            let Some((_, allowed)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return err(format!("unknown section [{section}]"));
            };
            let entry: &mut BTreeMap<String, String> = raw.entry(section.to_string()).or_default();
            for (k, v) in props.iter() {
                if !allowed.contains(&k) {
                    return err(format!("unknown key {k:?} in [{section}]"));
                }
                entry.insert(k.to_string(), v.trim().to_string());
            }
        }
        Self::from_raw(&Raw(raw))
    }

    fn from_raw(raw: &Raw) -> Res<Self> {
        let law = parse_law(raw)?;
        let check = CheckSection {
            samples: raw.parse("check", "samples", 100_000)?,
            entry_range: (
                raw.parse("check", "entry_min", -5.0)?,
                raw.parse("check", "entry_max", 5.0)?,
            ),
            q: raw.opt("check", "q")?,
            z_range: (raw.parse("check", "z_min", 1e-6)?, raw.parse("check", "z_max", 30.0)?),
            z_points: raw.parse("check", "z_points", 1000)?,
            tol: raw.parse("check", "tol", 1e-12)?,
        };
        if !(check.z_range.0 > 0.0 && check.z_range.0 < check.z_range.1 && check.z_points >= 2) {
            return err("[check] needs 0 < z_min < z_max and z_points ≥ 2");
        }
        let conjugate = parse_conjugate(raw)?;
        let grid = GridSection {
            dim: raw.parse("grid", "dim", 1)?,
            n: raw.parse("grid", "n", 64)?,
            length: raw.parse("grid", "length", 1.0)?,
            bc: match raw.get("grid", "bc").unwrap_or("periodic") {
                "periodic" => Boundary::Periodic,
                "no_slip" => Boundary::NoSlip,
                other => return err(format!("[grid] bc = {other:?}; expected periodic or no_slip")),
            },
        };
        let default_wave = TravelingWave::default();
        let initial = InitialSection {
            kind: match raw.get("initial", "kind").unwrap_or("rest") {
                "rest" => InitialKind::Rest,
                "wave" => InitialKind::Wave,
                "perturbed_wave" => InitialKind::PerturbedWave,
                other => {
                    return err(format!(
                        "[initial] kind = {other:?}; expected rest, wave or perturbed_wave"
                    ))
                }
            },
            density: raw.parse("initial", "density", 1.0)?,
            wave: TravelingWave {
                amplitude: raw.parse("initial", "amplitude", default_wave.amplitude)?,
                wavenumber: raw.parse("initial", "wavenumber", default_wave.wavenumber)?,
                speed: raw.parse("initial", "speed", default_wave.speed)?,
                flux: raw.parse("initial", "flux", default_wave.flux)?,
                length: raw.parse("grid", "length", default_wave.length)?,
            },
            e0: raw.parse("initial", "e0", 1e-3)?,
        };
        let run = RunSection {
            end_time: raw.parse("run", "end_time", 0.1)?,
            cfl: raw.parse("run", "cfl", 0.4)?,
            dt: raw.opt("run", "dt")?,
            snapshot_interval: raw.opt("run", "snapshot_interval")?,
            strain: match raw.get("run", "strain").unwrap_or("symmetric") {
                "symmetric" => StrainMode::Symmetric,
                "full" => StrainMode::Full,
                other => return err(format!("[run] strain = {other:?}; expected symmetric or full")),
            },
            max_steps: raw.parse("run", "max_steps", 10_000_000)?,
            write_snapshots: raw.parse("run", "write_snapshots", true)?,
        };
        let convergence = StudySection {
            n: raw.list("convergence", "n", vec![64, 128, 256])?,
            min_order: raw.parse("convergence", "min_order", 1.0)?,
        };
        let weak_strong = WeakStrongSection {
            study: StudySection {
                n: raw.list("weak_strong", "n", vec![64, 128, 256])?,
                min_order: raw.parse("weak_strong", "min_order", 1.0)?,
            },
            perturb_n: raw.parse("weak_strong", "perturb_n", 64)?,
            perturbations: raw.list("weak_strong", "perturbations", vec![1e-2, 1e-3])?,
        };
        if convergence.n.len() < 2 || weak_strong.study.n.len() < 2 {
            return err("refinement studies need at least two grid sizes");
        }
        if weak_strong.perturbations.len() != 2 {
            return err("[weak_strong] perturbations needs exactly two magnitudes");
        }
        Ok(Self {
            law,
            check,
            conjugate,
            grid,
            initial,
            run,
            tol_k: raw.parse("tolerance", "k", DEFAULT_TOL_K)?,
            convergence,
            korn_trials: raw.parse("certify", "korn_trials", 64)?,
            weak_strong,
        })
    }
}

fn parse_law(raw: &Raw) -> Res<ViscosityLaw> {
    let law = match raw.get("law", "kind").unwrap_or("exponential") {
        "exponential" => ViscosityLaw::exponential(),
        "power_law" => ViscosityLaw::power_law(raw.parse("law", "c", 1.0)?, raw.parse("law", "alpha", 1.0)?)
            .or_else(|e| err(format!("[law] {e}")))?,
        "newtonian" => ViscosityLaw::newtonian(raw.parse("law", "mu", 1.0)?).or_else(|e| err(format!("[law] {e}")))?,
        other => {
            return err(format!(
                "[law] kind = {other:?}; expected exponential, power_law or newtonian"
            ))
        }
    };
    Ok(if raw.parse("law", "sign_flip", false)? {
        law.sign_flipped()
    } else {
        law
    })
}

fn parse_conjugate(raw: &Raw) -> Res<ConjugateSection> {
    let (young, closed_form) = match raw.get("conjugate", "young").unwrap_or("exponential") {
        "exponential" => (YoungFunction::exponential(), true),
        "quadratic" => (YoungFunction::quadratic(), true),
        "phi_gamma" => (
            YoungFunction::phi_gamma(raw.parse("conjugate", "gamma", 2.0)?)
                .or_else(|e| err(format!("[conjugate] {e}")))?,
            false,
        ),
        other => {
            return err(format!(
                "[conjugate] young = {other:?}; expected exponential, quadratic or phi_gamma"
            ))
        }
    };
    let s = ConjugateSection {
        young,
        closed_form,
        y_range: (
            raw.parse("conjugate", "y_min", 1e-3)?,
            raw.parse("conjugate", "y_max", 1e3)?,
        ),
        points: raw.parse("conjugate", "points", 50)?,
        z_hi: raw.parse("conjugate", "z_hi", 50.0)?,
    };
    if !(s.y_range.0 > 0.0 && s.y_range.0 < s.y_range.1 && s.points >= 2) {
        return err("[conjugate] needs 0 < y_min < y_max and points ≥ 2");
    }
    Ok(s)
}
