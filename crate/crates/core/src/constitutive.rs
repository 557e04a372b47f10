//! Viscosity laws `P`, the stress map `U ↦ P(|U|)U`, and sampled
//! certification of the structural conditions on `P`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::composite_unit;
use crate::report::{CertificateEntry, CertificateReport, Constant, Provenance};
use crate::tensor::Tensor3;
use crate::young::{m_value, n_value, M_DOMAIN_MAX, M_SERIES_SWITCH};

/// Smallest accepted log-log slope of the stress perturbation in `λ`.
pub const P5_MIN_SLOPE: f64 = 0.98;
/// Relative slack allowed on each inequality of the sampled chain.
pub const CHAIN_REL_TOL: f64 = 1e-10;
/// Relative tolerance on the `s`-integral identity.
pub const CHAIN_IDENTITY_TOL: f64 = 1e-8;
/// Allowed excess of the fitted envelope slope over `2 + α`.
pub const EXPONENT_SLACK: f64 = 0.05;
/// Pairs closer than this are excluded from constant estimation.
pub const MIN_SEPARATION: f64 = 1e-9;

pub type ViscosityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LawKind {
    /// `P(z) = M(z)/z²`, `P(0) = 0`.
    ExponentialM,
    /// `P(z) = c·z^α`.
    PowerLaw {
        c: f64,
        alpha: f64,
    },
    ConstantNewtonian {
        mu: f64,
    },
    /// A user law; sampled only, never trusted.
    Custom {
        name: String,
        p: ViscosityFn,
    },
}

impl fmt::Debug for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawKind::ExponentialM => f.write_str("ExponentialM"),
            LawKind::PowerLaw { c, alpha } => write!(f, "PowerLaw {{ c: {c}, alpha: {alpha} }}"),
            LawKind::ConstantNewtonian { mu } => write!(f, "ConstantNewtonian {{ mu: {mu} }}"),
            LawKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViscosityLaw {
    pub kind: LawKind,
    /// `α` with `P(z) ≥ c z^α`, when known.
    pub alpha_lower: Option<f64>,
    /// Claimed monotonicity exponent `q`.
    pub q_claimed: Option<f64>,
}

/// Result of [`eval_viscosity`]: the literal value and the removable limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityValue {
    pub value: f64,
    pub limit: f64,
    /// `true` when `value` is the `P(0) = 0` convention rather than the limit.
    pub convention_applied: bool,
}

impl ViscosityLaw {
    /// `P(z) ≥ z/6` termwise from the series, so `α = 1`, `q = 3`.
    pub fn exponential() -> Self {
        Self {
            kind: LawKind::ExponentialM,
            alpha_lower: Some(1.0),
            q_claimed: Some(3.0),
        }
    }

    pub fn power_law(c: f64, alpha: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Precondition(format!(
                "power law needs c > 0, α > 0; got c={c}, α={alpha}"
            )));
        }
        Ok(Self {
            kind: LawKind::PowerLaw { c, alpha },
            alpha_lower: Some(alpha),
            q_claimed: Some(2.0 + alpha),
        })
    }

    pub fn newtonian(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Precondition(format!("viscosity must be positive, got {mu}")));
        }
        Ok(Self {
            kind: LawKind::ConstantNewtonian { mu },
            alpha_lower: None,
            q_claimed: Some(2.0),
        })
    }

    pub fn custom(name: impl Into<String>, p: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: LawKind::Custom {
                name: name.into(),
                p: Arc::new(p),
            },
            alpha_lower: None,
            q_claimed: None,
        }
    }

    /// `−P`, keeping the claimed exponents. Exists to exercise failure paths.
    pub fn sign_flipped(&self) -> Self {
        let base = self.clone();
        Self {
            kind: LawKind::Custom {
                name: format!("{}-sign-flipped", self.name()),
                p: Arc::new(move |z| -base.p(z)),
            },
            alpha_lower: self.alpha_lower,
            q_claimed: self.q_claimed,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            LawKind::ExponentialM => "exponential".into(),
            LawKind::PowerLaw { c, alpha } => format!("power(c={c},alpha={alpha})"),
            LawKind::ConstantNewtonian { mu } => format!("newtonian(mu={mu})"),
            LawKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, LawKind::ExponentialM)
    }

    /// `P(z)` with the removable limit at `z = 0` (1/2 for the exponential
    /// law). No range check; use [`eval_viscosity`] for the checked value.
    pub fn p(&self, z: f64) -> f64 {
        match &self.kind {
            LawKind::ExponentialM => {
                if z < M_SERIES_SWITCH {
                    p_exp_series(z)
                } else {
                    m_value(z) / (z * z)
                }
            }
            LawKind::PowerLaw { c, alpha } => c * z.powf(*alpha),
            LawKind::ConstantNewtonian { mu } => *mu,
            LawKind::Custom { p, .. } => p(z),
        }
    }

    /// `P(z)·z²`; exactly `M(z)` for the exponential law.
    pub fn p_z2(&self, z: f64) -> f64 {
        match self.kind {
            LawKind::ExponentialM => m_value(z),
            _ => self.p(z) * z * z,
        }
    }

    /// `P(z)·z`.
    pub fn p_z(&self, z: f64) -> f64 {
        match self.kind {
            LawKind::ExponentialM if z > 0.0 => m_value(z) / z,
            LawKind::ExponentialM => 0.0,
            _ => self.p(z) * z,
        }
    }

    /// `P'(z)`; central differences for custom laws.
    pub fn p_prime(&self, z: f64) -> f64 {
        match &self.kind {
            LawKind::ExponentialM => {
                if z < 1.0 {
                    // Σ_{i≥1} i z^{i−1}/(i+2)!
                    let mut fact = 6.0;
                    let mut pow = 1.0;
                    let mut sum = 0.0;
                    for i in 1..=24 {
                        sum += i as f64 * pow / fact;
                        pow *= z;
                        fact *= (i + 3) as f64;
                    }
                    sum
                } else {
                    (z * z.exp_m1() - 2.0 * m_value(z)) / (z * z * z)
                }
            }
            LawKind::PowerLaw { c, alpha } => {
                if z > 0.0 {
                    c * alpha * z.powf(alpha - 1.0)
                } else if *alpha < 1.0 {
                    f64::INFINITY
                } else if *alpha == 1.0 {
                    *c
                } else {
                    0.0
                }
            }
            LawKind::ConstantNewtonian { .. } => 0.0,
            LawKind::Custom { p, .. } => {
                let h = 1e-6 * z.max(1e-3);
                if z > h {
                    (p(z + h) - p(z - h)) / (2.0 * h)
                } else {
                    (p(z + h) - p(z)) / h
                }
            }
        }
    }
}

/// `Σ_{i=0}^{12} zⁱ/(i+2)!`.
fn p_exp_series(z: f64) -> f64 {
    let mut term = 0.5;
    let mut sum = term;
    for i in 1..=12 {
        term *= z / (i + 2) as f64;
        sum += term;
    }
    sum
}

pub fn eval_viscosity(law: &ViscosityLaw, z: f64) -> Result<ViscosityValue> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::Range {
            value: z,
            max: f64::INFINITY,
        });
    }
    if law.is_exponential() {
        if z > M_DOMAIN_MAX {
            return Err(Error::Range {
                value: z,
                max: M_DOMAIN_MAX,
            });
        }
        if z == 0.0 {
            return Ok(ViscosityValue {
                value: 0.0,
                limit: 0.5,
                convention_applied: true,
            });
        }
    }
    let v = law.p(z);
    Ok(ViscosityValue {
        value: v,
        limit: v,
        convention_applied: false,
    })
}

/// `P(|U|)U`, zero at `U = 0` whatever the convention for `P(0)`.
pub fn stress(law: &ViscosityLaw, u: &Tensor3) -> Tensor3 {
    let z = u.norm();
    if z == 0.0 {
        let mut t = Tensor3::zero();
        t.symmetric = u.symmetric;
        return t;
    }
    let mut s = *u * law.p(z);
    s.symmetric = u.symmetric;
    s
}

/// `(P(|U|)U − P(|V|)V) : (U − V)`.
pub fn pairing(law: &ViscosityLaw, u: &Tensor3, v: &Tensor3) -> f64 {
    (stress(law, u) - stress(law, v)).ddot(&(*u - *v))
}

/// Seeded sampling of symmetric tensor pairs: entries i.i.d. uniform on
/// `entry_range`, symmetrized as `(A + Aᵀ)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampling {
    pub n_samples: usize,
    pub entry_range: (f64, f64),
    pub seed: u64,
}

impl PairSampling {
    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// The `index`-th pair; independent of how many pairs are drawn.
    pub fn pair(&self, index: u64) -> (Tensor3, Tensor3) {
        let mut rng = self.rng(index);
        let u = random_symmetric(&mut rng, self.entry_range);
        let v = random_symmetric(&mut rng, self.entry_range);
        (u, v)
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.entry_range;
        if self.n_samples == 0 || !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Precondition(format!("invalid sampling {self:?}")));
        }
        Ok(())
    }
}

fn random_symmetric(rng: &mut impl Rng, (a, b): (f64, f64)) -> Tensor3 {
    let mut m = [[0.0; 3]; 3];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(a..b);
        }
    }
    Tensor3::from_rows(m).sym_part()
}

fn witness_pair(u: &Tensor3, v: &Tensor3) -> String {
    format!("U={:?} V={:?}", u.m, v.m)
}

/// Checks on `z_grid`: `P ≥ 0`, `P` non-decreasing, (P1) with the best
/// constant, (P3) convexity of `P(z)z²`, (P4) with the best constant, and
/// the pointwise surrogate of (P5).
pub fn certify_pointwise_conditions(
    law: &ViscosityLaw,
    z_grid: &[f64],
    tol: f64,
    seed: u64,
) -> Result<CertificateReport> {
    let mut zs: Vec<f64> = z_grid.to_vec();
    for &z in &zs {
        if !(0.0..=M_DOMAIN_MAX).contains(&z) {
            return Err(Error::Range {
                value: z,
                max: M_DOMAIN_MAX,
            });
        }
    }
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    if zs.len() < 3 {
        return Err(Error::Precondition("z grid needs at least 3 distinct points".into()));
    }
    let mut report = CertificateReport::new();

    // P ≥ 0 and non-decreasing.
    let ps: Vec<f64> = zs.iter().map(|&z| law.p(z)).collect();
    let (neg_i, neg_v) = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p))
        .fold((0, f64::INFINITY), |acc, (i, p)| if p < acc.1 { (i, p) } else { acc });
    let mut e = CertificateEntry::new("P.nonnegative", neg_v, 0.0, -neg_v);
    if !e.pass {
        e = e.with_witness(format!("z={}", zs[neg_i]));
    }
    report.push(e);
    let mut drop = 0.0_f64;
    let mut drop_at = 0;
    for (i, w) in ps.windows(2).enumerate() {
        let d = (w[0] - w[1]) / w[0].abs().max(w[1].abs()).max(1.0);
        if d > drop {
            drop = d;
            drop_at = i + 1;
        }
    }
    let mut e = CertificateEntry::upper("P.nondecreasing", drop, tol);
    if !e.pass {
        e = e.with_witness(format!("z={}", zs[drop_at]));
    }
    report.push(e);

    // (P1): best C in P(z)z² ≥ C·M(z).
    let (mut c1, mut c1_at) = (f64::INFINITY, 0.0);
    for &z in zs.iter().filter(|&&z| z > 0.0) {
        let m = m_value(z);
        if m > 0.0 {
            let r = law.p_z2(z) / m;
            if r < c1 || r.is_nan() {
                c1 = r;
                c1_at = z;
            }
        }
    }
    let mut e = CertificateEntry::new("P1", c1, -f64::MIN_POSITIVE, -c1).with_constant(Constant::new(
        "C",
        c1,
        Provenance::OracleMinimized,
    ));
    if !e.pass {
        e = e.with_witness(format!("z={c1_at}"));
    }
    report.push(e);

    // (P3): chord test for convexity of g(z) = P(z)z².
    let g: Vec<f64> = zs.iter().map(|&z| law.p_z2(z)).collect();
    let (mut worst, mut worst_at) = (f64::NEG_INFINITY, 0.0);
    for i in 1..zs.len() - 1 {
        let (a, b, c) = (zs[i - 1], zs[i], zs[i + 1]);
        let chord = ((c - b) * g[i - 1] + (b - a) * g[i + 1]) / (c - a);
        let excess = (g[i] - chord) / g[i - 1].abs().max(g[i + 1].abs()).max(1.0);
        if excess > worst || excess.is_nan() {
            worst = excess;
            worst_at = b;
        }
    }
    let mut e = CertificateEntry::upper("P3", worst, tol);
    if !e.pass {
        e = e.with_witness(format!("z={worst_at}"));
    }
    report.push(e);

    // (P4): best C in N(P(z)z) ≤ C(1 + M(z)).
    let (mut c4, mut c4_at) = (0.0_f64, 0.0);
    for &z in &zs {
        let r = n_value(law.p_z(z).abs()) / (1.0 + m_value(z));
        if r > c4 || r.is_nan() {
            c4 = r;
            c4_at = z;
        }
    }
    let mut e =
        CertificateEntry::upper("P4", c4, f64::MAX).with_constant(Constant::new("C", c4, Provenance::OracleMinimized));
    if !e.pass {
        e = e.with_witness(format!("z={c4_at}"));
    }
    report.push(e);

    report.push(p5_surrogate(law, seed));
    Ok(report)
}

/// Smallest observed slope of `λ ↦ |P(|U−λV|)(U−λV) − P(|U|)U|` on log-log
/// axes over `λ = 10⁻¹ … 10⁻⁶`, across seeded random pairs.
fn p5_surrogate(law: &ViscosityLaw, seed: u64) -> CertificateEntry {
    let sampling = PairSampling {
        n_samples: 32,
        entry_range: (-2.0, 2.0),
        seed,
    };
    let lambdas: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
    let (mut min_slope, mut witness) = (f64::INFINITY, String::new());
    for i in 0..sampling.n_samples as u64 {
        let (u, v) = sampling.pair(i);
        let su = stress(law, &u);
        let pts: Vec<(f64, f64)> = lambdas
            .iter()
            .map(|&l| {
                let d = (stress(law, &(u - v * l)) - su).norm();
                (l.ln(), d.ln())
            })
            .collect();
        let slope = least_squares_slope(&pts);
        if slope < min_slope || slope.is_nan() {
            min_slope = slope;
            witness = witness_pair(&u, &v);
        }
    }
    let mut e = CertificateEntry::new("P5.surrogate", min_slope, -P5_MIN_SLOPE, -min_slope);
    if !e.pass {
        e = e.with_witness(witness);
    }
    e
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct P6Certificate {
    /// Smallest `pairing/|U−V|^q` over the used pairs.
    pub c_min: f64,
    pub witness: (Tensor3, Tensor3),
    pub witness_index: usize,
    /// Used pairs with a non-positive (or undefined) ratio.
    pub nonpositive: usize,
    /// Pairs with `|U−V| > 1e−9`.
    pub used: usize,
    pub pass: bool,
}

impl P6Certificate {
    pub fn entry(&self, q: f64) -> CertificateEntry {
        let mut e = CertificateEntry::new("P6", self.c_min, -f64::MIN_POSITIVE, -self.c_min)
            .with_constant(Constant::new("C", self.c_min, Provenance::Estimated))
            .with_constant(Constant::new("q", q, Provenance::User));
        if self.nonpositive > 0 {
            e.pass = false;
        }
        e.with_witness(witness_pair(&self.witness.0, &self.witness.1))
    }
}

/// Empirical (P6) constant on a sampled box of symmetric pairs.
pub fn certify_p6(law: &ViscosityLaw, q: f64, sampling: PairSampling) -> Result<P6Certificate> {
    sampling.validate()?;
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::Precondition(format!("q must exceed 1, got {q}")));
    }
    let best = (0..sampling.n_samples)
        .into_par_iter()
        .filter_map(|i| {
            let (u, v) = sampling.pair(i as u64);
            let d = (u - v).norm();
            if d <= MIN_SEPARATION {
                return None;
            }
            let r = pairing(law, &u, &v) / d.powf(q);
            let key = if r.is_nan() { f64::NEG_INFINITY } else { r };
            Some((key, i, usize::from(!(r > 0.0)), 1usize))
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, 0, 0),
            |a, b| {
                let lo = if (b.0, b.1) < (a.0, a.1) { b } else { a };
                (lo.0, lo.1, a.2 + b.2, a.3 + b.3)
            },
        );
    let (c_min, idx, nonpositive, used) = best;
    if used == 0 {
        return Err(Error::Sampling(format!(
            "all {} pairs within {MIN_SEPARATION} of each other",
            sampling.n_samples
        )));
    }
    let witness = sampling.pair(idx as u64);
    Ok(P6Certificate {
        c_min,
        witness,
        witness_index: idx,
        nonpositive,
        used,
        pass: c_min > 0.0 && nonpositive == 0,
    })
}

/// `F'(z) = z/2` and `G'(z) = P(z)z − z/2` of the exponential law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgSplit {
    pub fprime: f64,
    pub gprime: f64,
}

pub fn fg_decomposition(law: &ViscosityLaw, z: f64) -> Result<FgSplit> {
    if !law.is_exponential() {
        return Err(Error::UnsupportedLaw(law.name()));
    }
    if z.is_nan() || !(0.0..=M_DOMAIN_MAX).contains(&z) {
        return Err(Error::Range {
            value: z,
            max: M_DOMAIN_MAX,
        });
    }
    let gprime = if z < 1.0 {
        // Σ_{i≥2} zⁱ/(i+1)!
        let mut term = z * z / 6.0;
        let mut sum = term;
        for i in 3..=26 {
            term *= z / (i + 1) as f64;
            sum += term;
        }
        sum
    } else {
        m_value(z) / z - 0.5 * z
    };
    Ok(FgSplit {
        fprime: 0.5 * z,
        gprime,
    })
}

/// Relative tolerance of `P(z)z² = M(z)` for the exponential law.
pub const M_IDENTITY_TOL: f64 = 1e-12;
/// Relative tolerance of `F'(z) + G'(z) = P(z)z`.
pub const FG_TOL: f64 = 1e-10;

/// Identities of the exponential law on `z_grid`: `P(z)z² = M(z)`,
/// `F' + G' = P(z)z`, and `G'(z)/z` non-decreasing.
pub fn certify_fg_decomposition(law: &ViscosityLaw, z_grid: &[f64]) -> Result<CertificateReport> {
    if !law.is_exponential() {
        return Err(Error::UnsupportedLaw(law.name()));
    }
    let mut zs: Vec<f64> = z_grid.iter().copied().filter(|z| *z > 0.0).collect();
    zs.sort_by(f64::total_cmp);
    let mut m_worst = (0.0_f64, f64::NAN);
    let mut fg_worst = (0.0_f64, f64::NAN);
    let mut ratios = Vec::with_capacity(zs.len());
    for &z in &zs {
        let m = m_value(z);
        let rel = (law.p(z) * z * z - m).abs() / m;
        if rel > m_worst.0 || m_worst.1.is_nan() {
            m_worst = (rel, z);
        }
        let split = fg_decomposition(law, z)?;
        let pz = law.p_z(z);
        let rel = (split.fprime + split.gprime - pz).abs() / pz;
        if rel > fg_worst.0 || fg_worst.1.is_nan() {
            fg_worst = (rel, z);
        }
        ratios.push(split.gprime / z);
    }
    let drops = ratios.windows(2).filter(|w| w[1] < w[0]).count();
    let mut report = CertificateReport::new();
    report.push(
        CertificateEntry::upper("exp.m_identity", m_worst.0, M_IDENTITY_TOL).with_witness(format!("z={}", m_worst.1)),
    );
    report.push(CertificateEntry::upper("fg.identity", fg_worst.0, FG_TOL).with_witness(format!("z={}", fg_worst.1)));
    report.push(CertificateEntry::count(
        "fg.gprime_over_z_monotone",
        zs.len() as f64,
        drops,
    ));
    Ok(report)
}

/// Steps of the sampled chain, in report order.
const CHAIN_STEPS: [&str; 15] = [
    "p6a.identity",
    "p6a.extra_term_nonnegative",
    "p6a.large.reverse_triangle",
    "p6a.large.shift",
    "p6a.large.power_bound",
    "p6a.small.segment_bound",
    "p6a.small.divide",
    "p6a.small.quarter",
    "p6a.small.lower_growth",
    "p6a.small.jensen",
    "p6a.small.mean_square",
    "p6a.small.side_condition",
    "p6a.small.one_tenth",
    "p6a.small.monotone_g",
    "p6a.final",
];

/// Outcome of the chain on one pair. `margins[k]` is the normalized slack of
/// step `k` (negative means violated), `NaN` when the step does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutcome {
    pub skipped: bool,
    pub margins: [f64; 15],
}

impl ChainOutcome {
    pub fn violated(&self, k: usize) -> bool {
        let tol = if k == 0 || k == 10 {
            CHAIN_IDENTITY_TOL
        } else {
            CHAIN_REL_TOL
        };
        self.margins[k] < -tol
    }

    pub fn step_names() -> &'static [&'static str; 15] {
        &CHAIN_STEPS
    }
}

/// Normalized slack of `lhs ≥ rhs`.
fn slack(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else if lhs.is_nan() || rhs.is_nan() {
        f64::NEG_INFINITY
    } else {
        (lhs - rhs) / scale
    }
}

/// Panels for `s ↦ f(|V + s(U−V)|)`, graded geometrically toward the point
/// of the segment's line closest to the origin.
fn segment_breaks(u: &Tensor3, v: &Tensor3, extra: &[f64]) -> Vec<f64> {
    let dm = *u - *v;
    let d2 = dm.norm_sq();
    let mut b = vec![0.0, 1.0];
    b.extend_from_slice(extra);
    if d2 > 0.0 {
        let s0 = -v.ddot(&dm) / d2;
        let eps = (*v + dm * s0).norm() / d2.sqrt();
        if s0 > 0.0 && s0 < 1.0 {
            b.push(s0);
        }
        let mut w = eps.max(1e-15);
        while w < 1.0 {
            for s in [s0 - w, s0 + w] {
                if s > 0.0 && s < 1.0 {
                    b.push(s);
                }
            }
            w *= 4.0;
        }
    }
    b.sort_by(f64::total_cmp);
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    if let Some(last) = b.last_mut() {
        *last = 1.0;
    }
    b
}

/// Replays every displayed inequality of the (P6.a) ⇒ (P6) argument on one
/// pair, with `c` and `α` from `P(z) ≥ c z^α`.
pub fn chain_pair(law: &ViscosityLaw, c: f64, alpha: f64, u: &Tensor3, v: &Tensor3) -> ChainOutcome {
    let mut margins = [f64::NAN; 15];
    let dm = *u - *v;
    let d = dm.norm();
    let nu = u.norm();
    if d == 0.0 {
        for (k, m) in margins.iter_mut().enumerate() {
            if k != 11 {
                *m = 0.0;
            }
        }
        return ChainOutcome {
            skipped: false,
            margins,
        };
    }
    if nu == d {
        return ChainOutcome { skipped: true, margins };
    }
    let large = nu > d;
    // Geometric panels toward s = 0 resolve the s^α endpoint behaviour of
    // the shifted integrands in the |U| ≥ |U−V| branch.
    let near_zero: Vec<f64> = if large {
        (1..=12).map(|j| 4f64.powi(-j)).collect()
    } else {
        Vec::new()
    };
    let (nodes, weights) = composite_unit(&segment_breaks(u, v, &near_zero));

    let d2 = d * d;
    let pair = pairing(law, u, v);
    let (mut l0, mut extra) = (0.0, 0.0);
    let (mut l1, mut l2) = (0.0, 0.0);
    let (mut j1, mut j2, mut j3, mut msq) = (0.0, 0.0, 0.0, 0.0);
    let mut seg_margin = f64::INFINITY;
    for (&s, &w) in nodes.iter().zip(&weights) {
        let ws = *v + dm * s;
        let z = ws.norm();
        let p = law.p(z);
        l0 += w * p * d2;
        if z > 0.0 {
            let a = ws.ddot(&dm);
            extra += w * law.p_prime(z) * a * a / z;
        }
        if large {
            l1 += w * law.p((nu - (1.0 - s) * d).abs()) * d2;
            l2 += w * law.p(s * d) * d2;
        } else {
            let z2 = z * z;
            let cap = (2.0 - s) * (2.0 - s) * d2;
            seg_margin = seg_margin.min(slack(cap, z2));
            j1 += w * p * z2 / ((2.0 - s) * (2.0 - s));
            j2 += 0.25 * w * p * z2;
            j3 += 0.25 * c * w * z.powf(2.0 + alpha);
            msq += w * z2;
        }
    }
    let g = |x: f64| x.powf(1.0 + 0.5 * alpha);
    margins[0] = -((pair - (l0 + extra)).abs() / pair.abs().max(l0 + extra.abs()).max(f64::MIN_POSITIVE));
    margins[1] = slack(pair, l0);
    let q = 2.0 + alpha;
    if large {
        margins[2] = slack(l0, l1);
        margins[3] = slack(l1, l2);
        margins[4] = slack(l2, c * d.powf(q) / (1.0 + alpha));
    } else {
        let uu = u.norm_sq();
        let vv = v.norm_sq();
        let uv = u.ddot(v);
        let exact_msq = (uu + vv + uv) / 3.0;
        let j4 = 0.25 * c * g(msq);
        margins[5] = seg_margin;
        margins[6] = slack(l0, j1);
        margins[7] = slack(j1, j2);
        margins[8] = slack(j2, j3);
        margins[9] = slack(j3, j4);
        margins[10] = -((msq - exact_msq).abs() / exact_msq.max(f64::MIN_POSITIVE));
        margins[11] = slack(vv, 2.0 * uv);
        if margins[11] == 0.0 {
            // Strict inequality required.
            margins[11] = f64::NEG_INFINITY;
        }
        margins[12] = slack(uu + vv + uv, 0.1 * d2);
        margins[13] = slack(j4, 0.25 * c * g(d2 / 30.0));
    }
    margins[14] = slack(pair, chain_constant(c, alpha) * d.powf(q));
    ChainOutcome {
        skipped: false,
        margins,
    }
}

/// Constant of the combined bound `pairing ≥ C|U−V|^{2+α}`.
pub fn chain_constant(c: f64, alpha: f64) -> f64 {
    (c / (1.0 + alpha)).min(0.25 * c / 30f64.powf(1.0 + 0.5 * alpha))
}

/// `c` in `P(z) ≥ c z^α`: exact for the built-in laws that admit one,
/// otherwise the minimum of `P(z)/z^α` on a log grid over `[1e−4, 1e2]`.
pub fn lower_growth_constant(law: &ViscosityLaw, alpha: f64) -> (f64, Provenance) {
    match law.kind {
        LawKind::PowerLaw { c, alpha: a } if a == alpha => (c, Provenance::Exact),
        LawKind::ExponentialM if alpha == 1.0 => (1.0 / 6.0, Provenance::Exact),
        _ => {
            let c = precondition_grid()
                .iter()
                .map(|&z| law.p(z) / z.powf(alpha))
                .fold(f64::INFINITY, f64::min);
            (c, Provenance::Estimated)
        }
    }
}

fn precondition_grid() -> Vec<f64> {
    crate::young::log_grid(1e-4, 1e2, 601)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    pub bins_used: usize,
}

/// Slope of the per-bin 1% quantile of `ln pairing` against `ln |U−V|` for
/// pairs scaled by `10^{U(−3,0)}`, over bins with `10⁻² ≤ |U−V| ≤ 1`.
/// Below 10⁻² a bin is reachable only by pairs whose unscaled separation is
/// already small, which skews its quantile upward.
pub fn fit_lower_envelope(law: &ViscosityLaw, sampling: PairSampling) -> ExponentFit {
    const BIN: f64 = 0.25;
    const MIN_COUNT: usize = 100;
    let offset = sampling.n_samples as u64;
    let pts: Vec<(f64, f64)> = (0..sampling.n_samples as u64)
        .into_par_iter()
        .filter_map(|i| {
            let (u, v) = sampling.pair(offset + i);
            let mut rng = sampling.rng(2 * offset + i);
            let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
            let (u, v) = (u * scale, v * scale);
            let d = (u - v).norm();
            let p = pairing(law, &u, &v);
            (d > MIN_SEPARATION && p > 0.0).then(|| (d.log10(), p.log10()))
        })
        .collect();
    let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for (x, y) in pts {
        if (-2.0..=0.0).contains(&x) {
            bins.entry((x / BIN).floor() as i64).or_default().push(y);
        }
    }
    let env: Vec<(f64, f64)> = bins
        .into_iter()
        .filter(|(_, ys)| ys.len() >= MIN_COUNT)
        .map(|(k, mut ys)| {
            ys.sort_by(f64::total_cmp);
            let q = ys[ys.len() / 100];
            ((k as f64 + 0.5) * BIN, q)
        })
        .collect();
    ExponentFit {
        slope: if env.len() >= 2 {
            least_squares_slope(&env)
        } else {
            f64::NAN
        },
        bins_used: env.len(),
    }
}

/// Sampled replay of the argument that (P6.a) implies (P6) with
/// `q = 2 + α`, plus the fitted exponent of the pairing's lower envelope.
pub fn certify_p6a_chain(law: &ViscosityLaw, sampling: PairSampling) -> Result<CertificateReport> {
    sampling.validate()?;
    let alpha = law
        .alpha_lower
        .ok_or_else(|| Error::Precondition(format!("law {} has no lower growth exponent", law.name())))?;
    let mut report = CertificateReport::new();

    let grid = precondition_grid();
    let (c, prov) = lower_growth_constant(law, alpha);
    let mut drop = 0.0_f64;
    for w in grid.windows(2) {
        drop = drop.max(law.p(w[0]) - law.p(w[1]));
    }
    let growth_violation = grid
        .iter()
        .map(|&z| c * z.powf(alpha) - law.p(z))
        .fold(f64::NEG_INFINITY, f64::max);
    report.push(CertificateEntry::upper("p6a.precondition.nondecreasing", drop, 0.0));
    report.push(
        CertificateEntry::new("p6a.precondition.positive_c", c, -f64::MIN_POSITIVE, -c)
            .with_constant(Constant::new("c", c, prov))
            .with_constant(Constant::new("alpha", alpha, Provenance::User)),
    );
    report.push(CertificateEntry::upper(
        "p6a.precondition.lower_growth",
        growth_violation,
        1e-14 * c.abs(),
    ));
    if !report.all_pass() {
        return Ok(report);
    }

    let outcomes: Vec<ChainOutcome> = (0..sampling.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let (u, v) = sampling.pair(i);
            chain_pair(law, c, alpha, &u, &v)
        })
        .collect();
    let skipped = outcomes.iter().filter(|o| o.skipped).count();
    for (k, name) in CHAIN_STEPS.iter().enumerate() {
        let mut violations = 0;
        let mut first = None;
        let mut worst = f64::INFINITY;
        for (i, o) in outcomes.iter().enumerate() {
            let m = o.margins[k];
            if m.is_nan() {
                continue;
            }
            worst = worst.min(m);
            if o.violated(k) {
                violations += 1;
                first.get_or_insert(i);
            }
        }
        let mut e = CertificateEntry::count(*name, worst, violations);
        if k == CHAIN_STEPS.len() - 1 {
            e = e.with_constant(Constant::new("C", chain_constant(c, alpha), prov));
        }
        if let Some(i) = first {
            let (u, v) = sampling.pair(i as u64);
            e = e.with_witness(format!("sample {i}: {}", witness_pair(&u, &v)));
        }
        report.push(e);
    }
    report.push(CertificateEntry::upper(
        "p6a.skipped_boundary_pairs",
        skipped as f64,
        f64::INFINITY,
    ));

    let fit = fit_lower_envelope(law, sampling);
    report.push(
        CertificateEntry::upper("p6a.exponent", fit.slope, 2.0 + alpha + EXPONENT_SLACK).with_constant(Constant::new(
            "q",
            2.0 + alpha,
            Provenance::Exact,
        )),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rotation;
    use crate::young::YoungFunction;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn laws() -> Vec<ViscosityLaw> {
        vec![
            ViscosityLaw::exponential(),
            ViscosityLaw::power_law(1.0, 1.0).unwrap(),
            ViscosityLaw::power_law(0.3, 0.5).unwrap(),
            ViscosityLaw::newtonian(2.0).unwrap(),
        ]
    }

    /// Componentwise `(P(|U|)U − P(|V|)V):(U−V)` with `P` from the defining
    /// formula, independent of `stress`.
    fn pairing_oracle(p: impl Fn(f64) -> f64, u: &Tensor3, v: &Tensor3) -> f64 {
        let nu = u.m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let (pu, pv) = (p(nu), p(nv));
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += (pu * u.m[i][j] - pv * v.m[i][j]) * (u.m[i][j] - v.m[i][j]);
            }
        }
        s
    }

    #[test]
    fn viscosity_examples() {
        let e = ViscosityLaw::exponential();
        let at0 = eval_viscosity(&e, 0.0).unwrap();
        assert_eq!(at0.value, 0.0);
        assert_eq!(at0.limit, 0.5);
        assert!(at0.convention_applied);
        let at2 = eval_viscosity(&e, 2.0).unwrap().value;
        assert!((at2 - (E * E - 3.0) / 4.0).abs() < 1e-15);
        let p = ViscosityLaw::power_law(1.0, 1.0).unwrap();
        assert_eq!(eval_viscosity(&p, 3.0).unwrap().value, 3.0);
        assert!(eval_viscosity(&e, 501.0).is_err());
        assert!(eval_viscosity(&e, -1.0).is_err());
    }

    #[test]
    fn exponential_identity() {
        let e = ViscosityLaw::exponential();
        let y = YoungFunction::exponential();
        for z in crate::young::log_grid(1e-6, 30.0, 2000) {
            let lhs = eval_viscosity(&e, z).unwrap().value * z * z;
            let rhs = y.eval(z).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs, "z={z}");
        }
        // Both branches of P agree at the switch.
        let below = p_exp_series(M_SERIES_SWITCH);
        let above = m_value(M_SERIES_SWITCH) / (M_SERIES_SWITCH * M_SERIES_SWITCH);
        assert!((below - above).abs() < 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for law in laws() {
            for z in [0.05, 0.3, 0.99, 1.01, 2.0, 7.0] {
                let h = 1e-5;
                let fd = (law.p(z + h) - law.p(z - h)) / (2.0 * h);
                let d = law.p_prime(z);
                assert!((fd - d).abs() < 1e-7 * (1.0 + d.abs()), "{} z={z} {fd} {d}", law.name());
            }
        }
    }

    #[test]
    fn stress_examples() {
        let e = ViscosityLaw::exponential();
        assert_eq!(stress(&e, &Tensor3::zero()), Tensor3::zero());
        let u = Tensor3::diag(2.0, 0.0, 0.0);
        let s = stress(&e, &u);
        assert!((s.m[0][0] - 2.0 * (E * E - 3.0) / 4.0).abs() < 1e-14);
        let n = ViscosityLaw::newtonian(1.7).unwrap();
        let w = Tensor3::from_rows([[1.0, 2.0, 0.0], [2.0, -1.0, 0.5], [0.0, 0.5, 3.0]]);
        assert_eq!(stress(&n, &w), w * 1.7);
    }

    #[test]
    fn pairing_examples() {
        let s = PairSampling {
            n_samples: 200,
            entry_range: (-5.0, 5.0),
            seed: 3,
        };
        let n = ViscosityLaw::newtonian(1.0).unwrap();
        let e = ViscosityLaw::exponential();
        for i in 0..s.n_samples as u64 {
            let (u, v) = s.pair(i);
            assert_eq!(pairing(&e, &u, &u), 0.0);
            let d = (u - v).norm_sq();
            assert!((pairing(&n, &u, &v) - d).abs() <= 1e-12 * d);
            let oracle = pairing_oracle(|z| (z.exp() - z - 1.0) / (z * z), &u, &v);
            let got = pairing(&e, &u, &v);
            assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{got} {oracle}");
        }
    }

    #[test]
    fn pointwise_conditions() {
        let grid = crate::young::log_grid(1e-4, 50.0, 400);
        let e = certify_pointwise_conditions(&ViscosityLaw::exponential(), &grid, 1e-12, 1).unwrap();
        assert!(e.all_pass(), "{e:#?}");
        assert_eq!(e.get("P1").unwrap().value, 1.0);
        let p = certify_pointwise_conditions(&ViscosityLaw::power_law(1.0, 1.0).unwrap(), &grid, 1e-12, 1).unwrap();
        assert!(p.get("P3").unwrap().pass);
        assert!(p.get("P5.surrogate").unwrap().pass);
        let bad = ViscosityLaw::exponential().sign_flipped();
        let b = certify_pointwise_conditions(&bad, &grid, 1e-12, 1).unwrap();
        assert!(!b.all_pass());
        assert!(b.get("P.nonnegative").unwrap().witness.is_some());
    }

    #[test]
    fn p6_examples() {
        let s = PairSampling {
            n_samples: 5000,
            entry_range: (-5.0, 5.0),
            seed: 9,
        };
        let e = certify_p6(&ViscosityLaw::exponential(), 3.0, s).unwrap();
        assert!(e.pass && e.c_min > 0.0);
        let p = certify_p6(&ViscosityLaw::power_law(1.0, 1.0).unwrap(), 3.0, s).unwrap();
        assert!(p.pass);
        let n = certify_p6(&ViscosityLaw::newtonian(1.0).unwrap(), 2.0, s).unwrap();
        assert!((n.c_min - 1.0).abs() < 1e-12);
        let bad = certify_p6(&ViscosityLaw::exponential().sign_flipped(), 3.0, s).unwrap();
        assert!(!bad.pass && bad.nonpositive == bad.used);
        assert!(!bad.entry(3.0).pass);
    }

    #[test]
    fn p6_is_deterministic() {
        let s = PairSampling {
            n_samples: 3000,
            entry_range: (-5.0, 5.0),
            seed: 42,
        };
        let law = ViscosityLaw::exponential();
        let a = certify_p6(&law, 3.0, s).unwrap();
        let b = certify_p6(&law, 3.0, s).unwrap();
        assert_eq!(a.c_min.to_bits(), b.c_min.to_bits());
        assert_eq!(a.witness, b.witness);
        // The witness is the serial minimum.
        let serial = (0..s.n_samples as u64)
            .map(|i| {
                let (u, v) = s.pair(i);
                pairing(&law, &u, &v) / (u - v).norm().powi(3)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(serial.to_bits(), a.c_min.to_bits());
    }

    #[test]
    fn degenerate_sampling_is_reported() {
        let s = PairSampling {
            n_samples: 10,
            entry_range: (1.0, 1.0 + 1e-12),
            seed: 0,
        };
        assert!(matches!(
            certify_p6(&ViscosityLaw::exponential(), 3.0, s),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn fg_examples() {
        let law = ViscosityLaw::exponential();
        assert_eq!(
            fg_decomposition(&law, 0.0).unwrap(),
            FgSplit {
                fprime: 0.0,
                gprime: 0.0
            }
        );
        let one = fg_decomposition(&law, 1.0).unwrap();
        assert_eq!(one.fprime, 0.5);
        assert!((one.gprime - (E - 2.5)).abs() < 1e-15);
        let r: Vec<f64> = [0.1, 1.0, 5.0]
            .iter()
            .map(|&z| fg_decomposition(&law, z).unwrap().gprime / z)
            .collect();
        assert!(r[0] < r[1] && r[1] < r[2]);
        let p = ViscosityLaw::power_law(1.0, 1.0).unwrap();
        assert!(matches!(fg_decomposition(&p, 1.0), Err(Error::UnsupportedLaw(_))));
    }

    #[test]
    fn fg_identity_on_grid() {
        let law = ViscosityLaw::exponential();
        for i in 0..=2000 {
            let z = 20.0 * i as f64 / 2000.0;
            let s = fg_decomposition(&law, z).unwrap();
            let pz = law.p_z(z);
            assert!(
                (pz - s.fprime - s.gprime).abs() <= 1e-10 * pz.max(f64::MIN_POSITIVE),
                "z={z}"
            );
        }
    }

    #[test]
    fn fg_certificate() {
        let zs = crate::young::log_grid(1e-6, 30.0, 1000);
        let r = certify_fg_decomposition(&ViscosityLaw::exponential(), &zs).unwrap();
        assert!(r.all_pass(), "{:#?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.get("fg.gprime_over_z_monotone").unwrap().residual, 0.0);
        let p = ViscosityLaw::power_law(1.0, 1.0).unwrap();
        assert!(matches!(
            certify_fg_decomposition(&p, &zs),
            Err(Error::UnsupportedLaw(_))
        ));
        let flipped = ViscosityLaw::exponential().sign_flipped();
        assert!(certify_fg_decomposition(&flipped, &zs).is_err());
    }

    #[test]
    fn chain_on_equal_pair_is_trivial() {
        let law = ViscosityLaw::power_law(1.0, 1.0).unwrap();
        let u = Tensor3::diag(1.0, 2.0, 3.0);
        let o = chain_pair(&law, 1.0, 1.0, &u, &u);
        assert!(!o.skipped);
        assert!((0..15).all(|k| !o.violated(k)));
    }

    #[test]
    fn chain_skips_boundary_pairs() {
        let law = ViscosityLaw::power_law(1.0, 1.0).unwrap();
        let u = Tensor3::diag(1.0, 0.0, 0.0);
        let v = Tensor3::diag(2.0, 0.0, 0.0);
        assert!(chain_pair(&law, 1.0, 1.0, &u, &v).skipped);
    }

    #[test]
    fn chain_holds_on_samples() {
        let s = PairSampling {
            n_samples: 2000,
            entry_range: (-5.0, 5.0),
            seed: 5,
        };
        for law in [
            ViscosityLaw::power_law(1.0, 1.0).unwrap(),
            ViscosityLaw::power_law(2.0, 0.5).unwrap(),
            ViscosityLaw::exponential(),
        ] {
            let r = certify_p6a_chain(&law, s).unwrap();
            assert!(r.all_pass(), "{}: {:#?}", law.name(), r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn chain_rejects_laws_without_growth() {
        let law = ViscosityLaw::exponential().sign_flipped();
        let s = PairSampling {
            n_samples: 10,
            entry_range: (-5.0, 5.0),
            seed: 5,
        };
        let r = certify_p6a_chain(&law, s).unwrap();
        assert!(!r.all_pass());
    }

    #[test]
    fn envelope_slope_of_power_law() {
        let s = PairSampling {
            n_samples: 40_000,
            entry_range: (-5.0, 5.0),
            seed: 8,
        };
        let fit = fit_lower_envelope(&ViscosityLaw::power_law(1.0, 1.0).unwrap(), s);
        assert!(fit.bins_used >= 4);
        // Upper side is the contract; the lower side guards against fitting noise.
        assert!(fit.slope <= 3.0 + EXPONENT_SLACK && fit.slope > 2.75, "{fit:?}");
    }

    proptest! {
        #[test]
        fn monotonicity(seed in any::<u64>(), scale in 0.01f64..3.0) {
            let s = PairSampling { n_samples: 1, entry_range: (-scale, scale), seed };
            let (u, v) = s.pair(0);
            for law in laws() {
                let p = pairing(&law, &u, &v);
                let b = 1.0 + u.norm() + v.norm();
                prop_assert!(p >= -1e-12 * b * b * b);
            }
        }

        #[test]
        fn frame_indifference(seed in any::<u64>(), ax in prop::array::uniform3(-1.0f64..1.0), angle in 0.0f64..6.3) {
            prop_assume!(ax.iter().map(|a| a * a).sum::<f64>() > 1e-3);
            let s = PairSampling { n_samples: 1, entry_range: (-3.0, 3.0), seed };
            let (u, _) = s.pair(0);
            let r = rotation(ax, angle);
            let rt = r.transpose();
            for law in laws() {
                let lhs = stress(&law, &r.matmul(&u).matmul(&rt));
                let rhs = r.matmul(&stress(&law, &u)).matmul(&rt);
                let scale = rhs.norm().max(1.0);
                prop_assert!((lhs - rhs).norm() <= 1e-10 * scale);
            }
        }

        #[test]
        fn viscosity_nonnegative_and_nondecreasing(a in 0.0f64..40.0, b in 0.0f64..40.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for law in laws() {
                prop_assert!(law.p(lo) >= 0.0);
                prop_assert!(law.p(lo) <= law.p(hi) * (1.0 + 1e-15));
            }
        }
    }
}
