//! Structured cell-centred grids, discrete fields and the finite-difference
//! operators shared by the solver and the certification code.
//!
//! Layout is collocated: every field lives at cell centres
//! `x_i = (i + ½) h`. Derivatives are second-order central differences. At a
//! no-slip wall the stencil reaches a ghost cell holding the odd reflection
//! of velocity components (so face velocities vanish) and the even reflection
//! of scalars and tensors. On periodic grids the central difference is
//! exactly skew-adjoint, which gives the discrete summation-by-parts identity
//! `Σ Dv:Dw = −Σ div(Dv)·w`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    NoSlip,
}

/// Which velocity gradient feeds the stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrainMode {
    /// `½(∇u + ∇uᵀ)`.
    #[default]
    Symmetric,
    /// `∇u`, for sensitivity studies.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    h: [f64; 3],
    bc: Boundary,
}

impl Grid {
    /// A grid on `[0, L_1) × … × [0, L_dim)` with `n[a]` cells along axis `a`.
    pub fn new(dim: usize, n: &[usize], lengths: &[f64], bc: Boundary) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n.len() != dim || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} cell counts and lengths, got {} and {}",
                n.len(),
                lengths.len()
            )));
        }
        let mut cells = [1usize; 3];
        let mut h = [1.0; 3];
        for a in 0..dim {
            if n[a] < 4 {
                return Err(Error::InvalidGrid(format!("axis {a} has {} < 4 cells", n[a])));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {a} has length {}", lengths[a])));
            }
            cells[a] = n[a];
            h[a] = lengths[a] / n[a] as f64;
        }
        Ok(Self { dim, n: cells, h, bc })
    }

    /// Unit interval/square/cube with `n` cells per axis.
    pub fn uniform(dim: usize, n: usize, bc: Boundary) -> Result<Self> {
        Self::new(dim, &vec![n; dim], &vec![1.0; dim], bc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> [usize; 3] {
        self.n
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.h
    }

    /// Smallest spacing over the active axes.
    pub fn h_min(&self) -> f64 {
        self.h[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lengths(&self) -> [f64; 3] {
        [
            self.n[0] as f64 * self.h[0],
            self.n[1] as f64 * self.h[1],
            self.n[2] as f64 * self.h[2],
        ]
    }

    pub fn cell_measure(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    pub fn total_measure(&self) -> f64 {
        self.cell_measure() * self.len() as f64
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n[1] + ijk[1]) * self.n[2] + ijk[2]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let j = (idx / self.n[2]) % self.n[1];
        let i = idx / (self.n[1] * self.n[2]);
        [i, j, k]
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let ijk = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (ijk[a] as f64 + 0.5) * self.h[a];
        }
        x
    }

    /// Neighbour of `idx` one cell along `axis` in direction `dir = ±1`;
    /// `None` means the stencil crosses a no-slip wall and needs a ghost.
    pub fn neighbor(&self, idx: usize, axis: usize, dir: isize) -> Option<usize> {
        let mut ijk = self.multi_index(idx);
        let n = self.n[axis] as isize;
        let p = ijk[axis] as isize + dir;
        if (0..n).contains(&p) {
            ijk[axis] = p as usize;
            Some(self.index(ijk))
        } else {
            match self.bc {
                Boundary::Periodic => {
                    ijk[axis] = p.rem_euclid(n) as usize;
                    Some(self.index(ijk))
                }
                Boundary::NoSlip => None,
            }
        }
    }

    /// Cells within `width` layers of a wall are `false`. On periodic grids
    /// every cell is interior.
    pub fn interior_mask(&self, width: usize) -> Vec<bool> {
        (0..self.len())
            .map(|idx| match self.bc {
                Boundary::Periodic => true,
                Boundary::NoSlip => {
                    let ijk = self.multi_index(idx);
                    (0..self.dim).all(|a| ijk[a] >= width && ijk[a] + width < self.n[a])
                }
            })
            .collect()
    }

    fn same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    values: Vec<Tensor3>,
    symmetric: bool,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Even reflection at walls.
    fn at(&self, idx: usize, axis: usize, dir: isize) -> f64 {
        match self.grid.neighbor(idx, axis, dir) {
            Some(j) => self.values[j],
            None => self.values[idx],
        }
    }
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<[f64; 3]>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, [0.0; 3])
    }

    pub fn constant(grid: Grid, v: [f64; 3]) -> Self {
        let mut v = v;
        for c in v.iter_mut().skip(grid.dim()) {
            *c = 0.0;
        }
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize) -> [f64; 3]) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.values
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|v| v[c]).collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(norm3).fold(0.0, f64::max)
    }

    /// Odd reflection at walls.
    fn at(&self, idx: usize, axis: usize, dir: isize) -> [f64; 3] {
        match self.grid.neighbor(idx, axis, dir) {
            Some(j) => self.values[j],
            None => {
                let v = self.values[idx];
                [-v[0], -v[1], -v[2]]
            }
        }
    }
}

impl TensorField {
    pub fn new(grid: Grid, values: Vec<Tensor3>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        let symmetric = values.iter().all(|t| t.symmetric);
        Ok(Self {
            grid,
            values,
            symmetric,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Tensor3] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn map(&self, f: impl Fn(&Tensor3) -> Tensor3) -> Self {
        let values: Vec<Tensor3> = self.values.iter().map(f).collect();
        let symmetric = values.iter().all(|t| t.symmetric);
        Self {
            grid: self.grid,
            values,
            symmetric,
        }
    }

    /// Even reflection at walls.
    fn at(&self, idx: usize, axis: usize, dir: isize) -> &Tensor3 {
        match self.grid.neighbor(idx, axis, dir) {
            Some(j) => &self.values[j],
            None => &self.values[idx],
        }
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Samples `f(x, t)` at cell centres.
pub fn discretize_scalar(grid: Grid, t: f64, f: impl Fn([f64; 3], f64) -> f64) -> ScalarField {
    ScalarField::from_fn(grid, |i| f(grid.center(i), t))
}

/// Samples a vector function at cell centres; components beyond `dim` are zeroed.
pub fn discretize_vector(grid: Grid, t: f64, f: impl Fn([f64; 3], f64) -> [f64; 3]) -> VectorField {
    VectorField::from_fn(grid, |i| {
        let mut v = f(grid.center(i), t);
        for c in v.iter_mut().skip(grid.dim()) {
            *c = 0.0;
        }
        v
    })
}

pub fn grad_scalar(rho: &ScalarField) -> VectorField {
    let g = rho.grid;
    VectorField::from_fn(g, |idx| {
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate().take(g.dim) {
            *o = (rho.at(idx, a, 1) - rho.at(idx, a, -1)) / (2.0 * g.h[a]);
        }
        out
    })
}

pub fn div_vector(u: &VectorField) -> ScalarField {
    let g = u.grid;
    ScalarField::from_fn(g, |idx| {
        (0..g.dim)
            .map(|a| (u.at(idx, a, 1)[a] - u.at(idx, a, -1)[a]) / (2.0 * g.h[a]))
            .sum()
    })
}

/// `(div S)_i = Σ_j ∂_j S_ij`.
pub fn div_tensor(s: &TensorField) -> VectorField {
    let g = s.grid;
    VectorField::from_fn(g, |idx| {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(g.dim) {
            *o = (0..g.dim)
                .map(|j| (s.at(idx, j, 1).m[i][j] - s.at(idx, j, -1).m[i][j]) / (2.0 * g.h[j]))
                .sum();
        }
        out
    })
}

/// `G_ij = ∂_j u_i`.
pub fn full_grad(u: &VectorField) -> TensorField {
    let g = u.grid;
    let values = (0..g.len())
        .map(|idx| {
            let mut m = [[0.0; 3]; 3];
            for j in 0..g.dim {
                let (p, q) = (u.at(idx, j, 1), u.at(idx, j, -1));
                for (i, row) in m.iter_mut().enumerate().take(g.dim) {
                    row[j] = (p[i] - q[i]) / (2.0 * g.h[j]);
                }
            }
            Tensor3 { m, symmetric: false }
        })
        .collect();
    TensorField {
        grid: g,
        values,
        symmetric: false,
    }
}

/// `Du = ½(∇u + ∇uᵀ)`, exactly symmetric.
pub fn sym_grad(u: &VectorField) -> TensorField {
    let full = full_grad(u);
    TensorField {
        grid: full.grid,
        values: full.values.iter().map(Tensor3::sym_part).collect(),
        symmetric: true,
    }
}

/// The strain fed to the stress, per [`StrainMode`].
pub fn strain(u: &VectorField, mode: StrainMode) -> TensorField {
    match mode {
        StrainMode::Symmetric => sym_grad(u),
        StrainMode::Full => full_grad(u),
    }
}

pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_measure()
}

/// `∫ A : B`.
pub fn inner(a: &TensorField, b: &TensorField) -> Result<f64> {
    a.grid.same(&b.grid)?;
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x.ddot(y)).sum();
    Ok(s * a.grid.cell_measure())
}

/// `∫ u · v`.
pub fn inner_vector(u: &VectorField, v: &VectorField) -> Result<f64> {
    u.grid.same(&v.grid)?;
    let s: f64 = u.values.iter().zip(&v.values).map(|(x, y)| dot3(x, y)).sum();
    Ok(s * u.grid.cell_measure())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbpResidual {
    /// Largest `|∫Dv:Dw + ∫div(Dv)·w|` over the trials.
    pub absolute: f64,
    /// Largest absolute residual divided by `max(1, Σ|Dv:Dw| + Σ|div(Dv)·w|)`.
    pub residual: f64,
}

/// Random smooth trial field: a few Fourier modes per component, damped by
/// a wall envelope on no-slip grids.
fn smooth_trial(grid: Grid, rng: &mut ChaCha8Rng) -> VectorField {
    let len = grid.lengths();
    let modes: Vec<([f64; 3], [f64; 3], f64)> = (0..4)
        .map(|_| {
            let mut k = [0.0; 3];
            let mut phase = [0.0; 3];
            for a in 0..grid.dim() {
                k[a] = rng.gen_range(1..=4) as f64 * 2.0 * std::f64::consts::PI / len[a];
                phase[a] = rng.gen_range(0.0..std::f64::consts::TAU);
            }
            (k, phase, rng.gen_range(-1.0..1.0))
        })
        .collect();
    let comps: Vec<usize> = (0..grid.dim()).map(|_| rng.gen_range(0..modes.len())).collect();
    discretize_vector(grid, 0.0, |x, _| {
        let mut v = [0.0; 3];
        for (c, vc) in v.iter_mut().enumerate().take(grid.dim()) {
            let mut s = 0.0;
            for (m, (k, ph, amp)) in modes.iter().enumerate() {
                let w = if m == comps[c] { 1.5 } else { 1.0 };
                s += w * amp * (0..grid.dim()).map(|a| (k[a] * x[a] + ph[a]).sin()).product::<f64>();
            }
            *vc = s;
        }
        v
    })
}

/// Largest residual of the discrete identity `∫Dv:Dw = −∫div(Dv)·w` over
/// `trials` random smooth pairs. On no-slip grids `w` is zeroed on the two
/// cell layers next to each wall.
pub fn sbp_residual(grid: Grid, trials: usize, seed: u64) -> SbpResidual {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = grid.interior_mask(2);
    let m = grid.cell_measure();
    let mut worst = SbpResidual {
        absolute: 0.0,
        residual: 0.0,
    };
    for trial in 0..trials {
        let v = smooth_trial(grid, &mut rng);
        let mut w = if trial == 0 {
            v.clone()
        } else {
            smooth_trial(grid, &mut rng)
        };
        for (wi, keep) in w.values.iter_mut().zip(&mask) {
            if !keep {
                *wi = [0.0; 3];
            }
        }
        let dv = sym_grad(&v);
        let dw = sym_grad(&w);
        let div = div_tensor(&dv);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut scale = 0.0;
        for idx in 0..grid.len() {
            let a = dv.values[idx].ddot(&dw.values[idx]);
            let b = dot3(&div.values[idx], &w.values[idx]);
            lhs += a;
            rhs += b;
            scale += a.abs() + b.abs();
        }
        let abs = ((lhs + rhs) * m).abs();
        let rel = abs / (scale * m).max(1.0);
        worst.absolute = worst.absolute.max(abs);
        worst.residual = worst.residual.max(rel);
    }
    worst
}

/// Writes one row per cell: index columns `i[,j[,k]]` followed by the named
/// value columns, all values with 17 significant digits.
pub fn write_fields_csv(path: &Path, grid: &Grid, columns: &[(&str, &[f64])]) -> Result<()> {
    for (name, col) in columns {
        if col.len() != grid.len() {
            return Err(Error::Shape(format!("column {name} has {} rows", col.len())));
        }
    }
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let idx_names = ["i", "j", "k"];
    let header: Vec<&str> = idx_names[..grid.dim()]
        .iter()
        .cloned()
        .chain(columns.iter().map(|c| c.0))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for cell in 0..grid.len() {
        let ijk = grid.multi_index(cell);
        let mut row: Vec<String> = ijk[..grid.dim()].iter().map(|v| v.to_string()).collect();
        row.extend(columns.iter().map(|c| fmt17(c.1[cell])));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_fields_csv`]; returns the value-column
/// names and columns in cell order.
pub fn read_fields_csv(path: &Path, grid: &Grid) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty file", path.display())))??;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let d = grid.dim();
    if names.len() < d || names[..d] != ["i", "j", "k"][..d] {
        return Err(Error::Io(format!("{}: bad header {header:?}", path.display())));
    }
    let value_names = names[d..].to_vec();
    let mut cols = vec![vec![f64::NAN; grid.len()]; value_names.len()];
    let mut seen = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != names.len() {
            return Err(Error::Io(format!("{}: ragged row {line:?}", path.display())));
        }
        let mut ijk = [0usize; 3];
        for a in 0..d {
            ijk[a] = parts[a]
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("bad index in {line:?}")))?;
            if ijk[a] >= grid.cells()[a] {
                return Err(Error::Shape(format!("index {ijk:?} outside grid")));
            }
        }
        let cell = grid.index(ijk);
        for (c, p) in parts[d..].iter().enumerate() {
            cols[c][cell] = p
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("bad value in {line:?}")))?;
        }
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::Shape(format!("{seen} rows for {} cells", grid.len())));
    }
    Ok((value_names, cols))
}

/// Decimal with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
