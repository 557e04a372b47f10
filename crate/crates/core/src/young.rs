//! Young functions, convex conjugation, modulars and Luxemburg norms.
//!
//! The built-in gauges are the exponential `M(z) = eᶻ − z − 1`, its conjugate
//! `N(y) = (1+y)ln(1+y) − y`, the logarithmic family
//! `Φ_γ(z) = (1+z)ln^γ(1+z)` and the quadratic `F(z) = z²/4`. Conjugates
//! without a closed form (the `Ψ_γ` family) exist only as tabulated gauges
//! produced by [`tabulate_conjugate`].

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Switch point between the power series and the closed form of `M`.
pub const M_SERIES_SWITCH: f64 = 0.25;
/// Number of series terms used below the switch point.
pub const M_SERIES_TERMS: usize = 12;
/// Evaluation ceiling for `M` (eᶻ stays far from overflow).
pub const M_DOMAIN_MAX: f64 = 500.0;

const WIDE_DOMAIN: f64 = 1e250;

#[derive(Debug, Clone, PartialEq)]
pub enum YoungKind {
    /// `M(z) = eᶻ − z − 1`.
    Exponential,
    /// `Φ_γ(z) = (1+z) ln^γ(1+z)`, `γ > 1`.
    PhiGamma { gamma: f64 },
    /// `N(y) = (1+y) ln(1+y) − y`, the conjugate of `M`.
    ExpConjugate,
    /// `F(z) = z²/4`.
    Quadratic,
    /// Piecewise-linear interpolant through `(0,0)` and the breakpoints.
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the segment `[b_{k-1}, b_k]` containing `z` (with `b_{-1} = 0`).
    fn segment(&self, z: f64) -> usize {
        self.breakpoints
            .partition_point(|&b| b < z)
            .min(self.breakpoints.len() - 1)
    }

    fn knot(&self, k: isize) -> (f64, f64) {
        if k < 0 {
            (0.0, 0.0)
        } else {
            (self.breakpoints[k as usize], self.values[k as usize])
        }
    }

    fn eval(&self, z: f64) -> f64 {
        let k = self.segment(z) as isize;
        let (z0, v0) = self.knot(k - 1);
        let (z1, v1) = self.knot(k);
        v0 + (v1 - v0) * (z - z0) / (z1 - z0)
    }

    /// Right derivative (left derivative at the last breakpoint).
    fn slope(&self, z: f64) -> f64 {
        let mut k = self.breakpoints.partition_point(|&b| b <= z) as isize;
        if k as usize >= self.breakpoints.len() {
            k = self.breakpoints.len() as isize - 1;
        }
        let (z0, v0) = self.knot(k - 1);
        let (z1, v1) = self.knot(k);
        (v1 - v0) / (z1 - z0)
    }
}

/// A convex, non-decreasing gauge with `Φ(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct YoungFunction {
    pub kind: YoungKind,
    /// Largest argument for which evaluation is guaranteed finite.
    pub domain_max: f64,
}

impl YoungFunction {
    pub fn exponential() -> Self {
        Self {
            kind: YoungKind::Exponential,
            domain_max: M_DOMAIN_MAX,
        }
    }

    pub fn phi_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::Precondition(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(Self {
            kind: YoungKind::PhiGamma { gamma },
            domain_max: WIDE_DOMAIN,
        })
    }

    pub fn exp_conjugate() -> Self {
        Self {
            kind: YoungKind::ExpConjugate,
            domain_max: WIDE_DOMAIN,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: YoungKind::Quadratic,
            domain_max: 1e150,
        }
    }

    /// Tabulated gauge; breakpoints must be strictly increasing and positive,
    /// values non-decreasing and non-negative.
    pub fn tabulated(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidTable(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] <= 0.0 || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTable(
                "breakpoints must be positive and strictly increasing".into(),
            ));
        }
        if values[0] < 0.0 || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidTable(
                "values must be non-negative and non-decreasing".into(),
            ));
        }
        let domain_max = *breakpoints.last().unwrap();
        Ok(Self {
            kind: YoungKind::Tabulated(Table { breakpoints, values }),
            domain_max,
        })
    }

    fn check(&self, z: f64) -> Result<()> {
        if z.is_nan() || z < 0.0 || z > self.domain_max {
            Err(Error::Range {
                value: z,
                max: self.domain_max,
            })
        } else {
            Ok(())
        }
    }

    /// `Φ(z)`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(match &self.kind {
            YoungKind::Exponential => m_value(z),
            YoungKind::PhiGamma { gamma } => (1.0 + z) * z.ln_1p().powf(*gamma),
            YoungKind::ExpConjugate => n_value(z),
            YoungKind::Quadratic => 0.25 * z * z,
            YoungKind::Tabulated(t) => t.eval(z),
        })
    }

    /// `Φ'(z)` (right derivative for tabulated gauges).
    pub fn derivative(&self, z: f64) -> Result<f64> {
        self.check(z)?;
        Ok(match &self.kind {
            YoungKind::Exponential => z.exp_m1(),
            YoungKind::PhiGamma { gamma } => {
                let l = z.ln_1p();
                if l == 0.0 {
                    0.0
                } else {
                    l.powf(*gamma) + gamma * l.powf(gamma - 1.0)
                }
            }
            YoungKind::ExpConjugate => z.ln_1p(),
            YoungKind::Quadratic => 0.5 * z,
            YoungKind::Tabulated(t) => t.slope(z),
        })
    }
}

/// `M(z)`; series below [`M_SERIES_SWITCH`], closed form above.
pub(crate) fn m_value(z: f64) -> f64 {
    if z < M_SERIES_SWITCH {
        m_series(z)
    } else {
        z.exp_m1() - z
    }
}

/// `Σ_{i=2}^{13} zⁱ/i!`.
pub(crate) fn m_series(z: f64) -> f64 {
    let mut term = z * z / 2.0;
    let mut sum = term;
    for i in 3..(M_SERIES_TERMS + 2) {
        term *= z / i as f64;
        sum += term;
    }
    sum
}

/// Closed form of the convex conjugate of `M`.
pub(crate) fn n_value(y: f64) -> f64 {
    if y < 0.05 {
        // Σ_{k≥2} (−1)^k y^k / (k(k−1)); alternating, 16 terms is plenty here.
        let mut sum = 0.0;
        let mut p = y;
        for k in 2..18 {
            p *= y;
            let kf = k as f64;
            let t = p / (kf * (kf - 1.0));
            sum += if k % 2 == 0 { t } else { -t };
        }
        sum
    } else {
        (1.0 + y) * y.ln_1p() - y
    }
}

/// Search bracket and tolerance for [`conjugate_numeric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateSearch {
    pub z_hi: f64,
    /// Absolute tolerance on the returned supremum.
    pub tol: f64,
}

impl Default for ConjugateSearch {
    fn default() -> Self {
        Self { z_hi: 50.0, tol: 1e-15 }
    }
}

/// `sup_{z∈[0,z_hi]} (z·y − Φ(z))` by bisection on the derivative.
///
/// The supremand is concave, so with `s'(lo) ≥ 0 ≥ s'(hi)` the gap between
/// the true supremum and `max(s(lo), s(hi))` is at most
/// `min(s'(lo), −s'(hi))·(hi − lo)`; iteration stops once that bound drops
/// below `tol` or the bracket collapses to adjacent floats.
pub fn conjugate_numeric(f: &YoungFunction, y: f64, search: ConjugateSearch) -> Result<f64> {
    if y.is_nan() || y < 0.0 {
        return Err(Error::Range {
            value: y,
            max: f64::INFINITY,
        });
    }
    let z_hi = search.z_hi;
    if z_hi > f.domain_max {
        return Err(Error::Range {
            value: z_hi,
            max: f.domain_max,
        });
    }
    if y - f.derivative(z_hi)? >= 0.0 {
        return Err(Error::Bracketing { y, z_hi });
    }
    if f.derivative(0.0)? >= y {
        return Ok(0.0);
    }
    let supremand = |z: f64| -> Result<f64> { Ok(z * y - f.eval(z)?) };
    let (mut lo, mut hi) = (0.0_f64, z_hi);
    for _ in 0..4000 {
        let slope_lo = y - f.derivative(lo)?;
        let slope_hi = f.derivative(hi)? - y;
        let gap = slope_lo.min(slope_hi) * (hi - lo);
        let mid = 0.5 * (lo + hi);
        if gap <= search.tol || mid <= lo || mid >= hi {
            break;
        }
        if y - f.derivative(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(supremand(lo)?.max(supremand(hi)?).max(0.0))
}

/// Tabulates the conjugate of `f` on the given increasing positive `y` grid.
pub fn tabulate_conjugate(f: &YoungFunction, y_grid: &[f64], search: ConjugateSearch) -> Result<YoungFunction> {
    let values = y_grid
        .iter()
        .map(|&y| conjugate_numeric(f, y, search))
        .collect::<Result<Vec<_>>>()?;
    YoungFunction::tabulated(y_grid.to_vec(), values)
}

/// Log-spaced grid of `n ≥ 2` points on `[a, b]`, `0 < a < b`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `∫ Φ(|v|)` by the midpoint rule on the field's grid.
pub fn modular(v: &ScalarField, f: &YoungFunction) -> Result<f64> {
    let w = v.grid().cell_measure();
    let mut sum = 0.0;
    for (cell, x) in v.values().iter().enumerate() {
        let z = x.abs();
        let phi = f.eval(z).map_err(|_| Error::CellOverflow {
            cell,
            value: z,
            max: f.domain_max,
        })?;
        sum += phi;
    }
    Ok(sum * w)
}

/// Modular of `v/λ`, with overflow read as "larger than one".
fn scaled_modular_exceeds_one(v: &ScalarField, f: &YoungFunction, lambda: f64) -> bool {
    let w = v.grid().cell_measure();
    let mut sum = 0.0;
    for x in v.values() {
        match f.eval(x.abs() / lambda) {
            Ok(p) => sum += p * w,
            Err(_) => return true,
        }
        if sum > 1.0 {
            return true;
        }
    }
    sum > 1.0
}

/// `inf{λ > 0 : ∫Φ(|v|/λ) ≤ 1}` to relative tolerance `tol`.
pub fn luxemburg_norm(v: &ScalarField, f: &YoungFunction, tol: f64) -> Result<f64> {
    const CAP: usize = 400;
    let vmax = v.values().iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if vmax == 0.0 {
        return Ok(0.0);
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    let mut hi = vmax;
    let mut n = 0;
    while scaled_modular_exceeds_one(v, f, hi) {
        hi *= 2.0;
        n += 1;
        if n > CAP {
            return Err(Error::NonConvergence {
                iterations: n,
                lo: hi,
                hi: f64::INFINITY,
            });
        }
    }
    let mut lo = hi;
    n = 0;
    while !scaled_modular_exceeds_one(v, f, lo) {
        lo *= 0.5;
        n += 1;
        if n > CAP {
            return Err(Error::NonConvergence {
                iterations: n,
                lo: 0.0,
                hi: lo,
            });
        }
    }
    n = 0;
    while hi - lo > tol * lo {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if scaled_modular_exceeds_one(v, f, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        n += 1;
        if n > CAP {
            return Err(Error::NonConvergence { iterations: n, lo, hi });
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delta2Probe {
    pub sup_ratio: f64,
    pub satisfied: bool,
}

/// Samples `Φ(2z)/Φ(z)` on `samples` uniformly spaced points of `(a, b]`.
///
/// The condition is reported satisfied when the sampled supremum is finite
/// and the ratio is non-increasing over the top tenth of the range.
pub fn check_delta2(f: &YoungFunction, z_range: (f64, f64), samples: usize) -> Result<Delta2Probe> {
    let (a, b) = z_range;
    if !(a >= 0.0 && b > a && 2.0 * b <= f.domain_max) || samples < 2 {
        return Err(Error::Range {
            value: b,
            max: 0.5 * f.domain_max,
        });
    }
    let mut ratios = Vec::with_capacity(samples);
    for i in 1..=samples {
        let z = a + (b - a) * i as f64 / samples as f64;
        let base = f.eval(z)?;
        if base > 0.0 {
            ratios.push(f.eval(2.0 * z)? / base);
        }
    }
    let sup_ratio = ratios.iter().cloned().fold(0.0_f64, f64::max);
    let tail = (ratios.len() / 10).max(2).min(ratios.len());
    let top = &ratios[ratios.len() - tail..];
    let non_increasing = top.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(Delta2Probe {
        sup_ratio,
        satisfied: sup_ratio.is_finite() && non_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Grid};
    use std::f64::consts::E;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(1, &[n], &[1.0], Boundary::Periodic).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        for f in [
            YoungFunction::exponential(),
            YoungFunction::phi_gamma(2.0).unwrap(),
            YoungFunction::exp_conjugate(),
            YoungFunction::quadratic(),
            YoungFunction::tabulated(vec![1.0, 2.0], vec![1.0, 3.0]).unwrap(),
        ] {
            assert_eq!(f.eval(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn phi_gamma_at_e_minus_one() {
        for g in [1.5, 2.0, 3.7] {
            let f = YoungFunction::phi_gamma(g).unwrap();
            assert!((f.eval(E - 1.0).unwrap() - E).abs() < 1e-14);
        }
    }

    #[test]
    fn m_at_one() {
        let m = YoungFunction::exponential().eval(1.0).unwrap();
        assert!((m - 0.718_281_828_459_045_1).abs() < 1e-15);
    }

    #[test]
    fn m_branches_agree_at_switch() {
        let z = M_SERIES_SWITCH;
        let s = m_series(z);
        let c = z.exp_m1() - z;
        assert!(((s - c) / c).abs() < 1e-14);
        let naive = z.exp() - z - 1.0;
        assert!(((s - naive) / c).abs() < 1e-14);
    }

    #[test]
    fn overflow_is_an_error() {
        let f = YoungFunction::exponential();
        assert!(matches!(f.eval(501.0), Err(Error::Range { .. })));
        assert!(f.eval(-1.0).is_err());
    }

    #[test]
    fn conjugate_examples() {
        let m = YoungFunction::exponential();
        let s = ConjugateSearch::default();
        assert_eq!(conjugate_numeric(&m, 0.0, s).unwrap(), 0.0);
        assert!((conjugate_numeric(&m, E - 1.0, s).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn conjugate_of_quadratic_against_grid_maximization() {
        let f = YoungFunction::quadratic();
        for y in [0.5, 1.0, 2.0] {
            let got = conjugate_numeric(&f, y, ConjugateSearch::default()).unwrap();
            // oracle: brute-force maximization on a fine grid, then y².
            let brute = (0..=200_000)
                .map(|i| {
                    let z = 10.0 * i as f64 / 200_000.0;
                    z * y - 0.25 * z * z
                })
                .fold(f64::MIN, f64::max);
            assert!((got - brute).abs() < 1e-8, "y={y}");
            assert!((got - y * y).abs() < 1e-12, "y={y}");
        }
    }

    #[test]
    fn unbracketed_supremum_is_reported() {
        let m = YoungFunction::exponential();
        let r = conjugate_numeric(&m, 1e6, ConjugateSearch { z_hi: 5.0, tol: 1e-12 });
        assert!(matches!(r, Err(Error::Bracketing { .. })));
    }

    #[test]
    fn conjugate_of_m_matches_closed_form() {
        let m = YoungFunction::exponential();
        for y in log_grid(1e-3, 1e3, 50) {
            let got = conjugate_numeric(&m, y, ConjugateSearch::default()).unwrap();
            let want = (1.0 + y) * y.ln_1p() - y;
            assert!(((got - want) / want).abs() < 1e-8, "y={y} got={got} want={want}");
        }
    }

    #[test]
    fn biconjugate_of_quadratic() {
        let f = YoungFunction::quadratic();
        // Linear tabulation error of the second conjugate is at most Δy²/4.
        let ys: Vec<f64> = (1..=6000).map(|i| i as f64 * 1e-3).collect();
        let psi = tabulate_conjugate(&f, &ys, ConjugateSearch::default()).unwrap();
        for i in 0..=50 {
            let z = 10.0 * i as f64 / 50.0;
            let back = conjugate_numeric(&psi, z, ConjugateSearch { z_hi: 6.0, tol: 1e-14 }).unwrap();
            assert!((back - 0.25 * z * z).abs() < 1e-6, "z={z} back={back}");
        }
    }

    #[test]
    fn tabulated_phi_gamma_conjugate_is_convex_and_monotone() {
        let f = YoungFunction::phi_gamma(2.0).unwrap();
        let ys = log_grid(1e-3, 50.0, 120);
        let psi = tabulate_conjugate(&f, &ys, ConjugateSearch { z_hi: 1e4, tol: 1e-12 }).unwrap();
        let v: Vec<f64> = ys.iter().map(|&y| psi.eval(y).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        for w in ys.windows(3) {
            let (a, b) = (w[0], w[2]);
            let lhs = psi.eval(0.5 * (a + b)).unwrap();
            let rhs = 0.5 * (psi.eval(a).unwrap() + psi.eval(b).unwrap());
            assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn modular_examples() {
        let g = unit_grid(32);
        let zero = ScalarField::constant(g, 0.0);
        assert_eq!(modular(&zero, &YoungFunction::exponential()).unwrap(), 0.0);
        let one = ScalarField::constant(g, 1.0);
        let got = modular(&one, &YoungFunction::exponential()).unwrap();
        assert!((got - (E - 2.0)).abs() < 1e-14);
        let c = ScalarField::constant(g, E - 1.0);
        let got = modular(&c, &YoungFunction::phi_gamma(2.0).unwrap()).unwrap();
        assert!((got - E).abs() < 1e-13);
    }

    #[test]
    fn modular_overflow_carries_cell() {
        let g = unit_grid(8);
        let mut v = ScalarField::constant(g, 1.0);
        v.values_mut()[5] = 600.0;
        assert!(matches!(
            modular(&v, &YoungFunction::exponential()),
            Err(Error::CellOverflow { cell: 5, .. })
        ));
    }

    #[test]
    fn luxemburg_of_constant() {
        // independent root of eᶻ − z − 1 = 1 by Newton iteration
        let mut z1: f64 = 1.0;
        for _ in 0..60 {
            z1 -= (z1.exp() - z1 - 2.0) / (z1.exp() - 1.0);
        }
        let g = unit_grid(16);
        let c = 3.0;
        let v = ScalarField::constant(g, c);
        let got = luxemburg_norm(&v, &YoungFunction::exponential(), 1e-12).unwrap();
        assert!(((got - c / z1) / (c / z1)).abs() < 1e-11);
        assert_eq!(
            luxemburg_norm(&ScalarField::constant(g, 0.0), &YoungFunction::exponential(), 1e-12).unwrap(),
            0.0
        );
    }

    #[test]
    fn luxemburg_is_homogeneous() {
        let g = unit_grid(64);
        let v = ScalarField::from_fn(g, |i| (0.3 + (i as f64 * 0.7).sin()).abs());
        let f = YoungFunction::exponential();
        let a = luxemburg_norm(&v, &f, 1e-12).unwrap();
        let mut v2 = v.clone();
        v2.values_mut().iter_mut().for_each(|x| *x *= 2.0);
        let b = luxemburg_norm(&v2, &f, 1e-12).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-10 * b);
    }

    #[test]
    fn delta2_examples() {
        let q = check_delta2(&YoungFunction::quadratic(), (0.0, 10.0), 500).unwrap();
        assert!((q.sup_ratio - 4.0).abs() < 1e-12 && q.satisfied);
        let m = check_delta2(&YoungFunction::exponential(), (0.0, 30.0), 500).unwrap();
        assert!(m.sup_ratio > 1e6 && !m.satisfied);
        let p = check_delta2(&YoungFunction::phi_gamma(2.0).unwrap(), (0.0, 100.0), 1000).unwrap();
        assert!(p.sup_ratio.is_finite() && p.sup_ratio <= 4.0 + 1e-9 && p.satisfied);
    }

    #[test]
    fn tabulated_rejects_bad_tables() {
        assert!(YoungFunction::tabulated(vec![1.0, 0.5], vec![0.0, 1.0]).is_err());
        assert!(YoungFunction::tabulated(vec![1.0, 2.0], vec![2.0, 1.0]).is_err());
        assert!(YoungFunction::tabulated(vec![], vec![]).is_err());
    }
}
