//! Certificate records shared by the constitutive and relative-energy checks.

use std::fmt;
use std::path::Path;

use crate::error::Result;
use crate::grid::fmt17;

/// Where a constant used by a check came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Known in closed form.
    Exact,
    /// Minimized or maximized by a numerical oracle.
    OracleMinimized,
    /// Supplied by the user.
    User,
    /// Sampled estimate, not a proof.
    Estimated,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Exact => "exact",
            Provenance::OracleMinimized => "oracle-minimized",
            Provenance::User => "user",
            Provenance::Estimated => "estimated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn new(name: impl Into<String>, value: f64, provenance: Provenance) -> Self {
        Self {
            name: name.into(),
            value,
            provenance,
        }
    }
}

/// One check. `pass` is always `residual <= bound`; an inconclusive entry
/// neither passes nor fails the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateEntry {
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub residual: f64,
    pub pass: bool,
    pub inconclusive: bool,
    pub constants: Vec<Constant>,
    pub witness: Option<String>,
}

impl CertificateEntry {
    pub fn new(check: impl Into<String>, value: f64, bound: f64, residual: f64) -> Self {
        Self {
            check: check.into(),
            value,
            bound,
            residual,
            pass: residual <= bound,
            inconclusive: false,
            constants: Vec::new(),
            witness: None,
        }
    }

    /// An entry whose quantity is its own residual: passes iff `value <= bound`.
    pub fn upper(check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(check, value, bound, value)
    }

    /// Counts violations: passes iff `violations == 0`.
    pub fn count(check: impl Into<String>, value: f64, violations: usize) -> Self {
        Self::new(check, value, 0.0, violations as f64)
    }

    pub fn inconclusive(mut self) -> Self {
        self.inconclusive = true;
        self
    }

    pub fn with_constant(mut self, c: Constant) -> Self {
        self.constants.push(c);
        self
    }

    pub fn with_witness(mut self, w: impl Into<String>) -> Self {
        self.witness = Some(w.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CertificateReport {
    pub entries: Vec<CertificateEntry>,
}

impl CertificateReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: CertificateEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: CertificateReport) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, check: &str) -> Option<&CertificateEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    /// Every conclusive entry passes.
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass || e.inconclusive)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CertificateEntry> {
        self.entries.iter().filter(|e| !e.pass && !e.inconclusive)
    }

    /// Columns: `check, value, bound, residual, pass, inconclusive, constants, witness`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "check",
            "value",
            "bound",
            "residual",
            "pass",
            "inconclusive",
            "constants",
            "witness",
        ])?;
        for e in &self.entries {
            let constants = e
                .constants
                .iter()
                .map(|c| format!("{}={}({})", c.name, fmt17(c.value), c.provenance))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                e.check.clone(),
                fmt17(e.value),
                fmt17(e.bound),
                fmt17(e.residual),
                e.pass.to_string(),
                e.inconclusive.to_string(),
                constants,
                e.witness.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
