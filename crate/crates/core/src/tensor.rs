//! 3×3 real tensors with a symmetric flag.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor3 {
    pub m: [[f64; 3]; 3],
    pub symmetric: bool,
}

impl Default for Tensor3 {
    fn default() -> Self {
        Self::zero()
    }
}

impl Tensor3 {
    pub const fn zero() -> Self {
        Self {
            m: [[0.0; 3]; 3],
            symmetric: true,
        }
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        let mut t = Self::zero();
        t.m[0][0] = a;
        t.m[1][1] = b;
        t.m[2][2] = c;
        t
    }

    /// Builds a tensor from rows; the symmetric flag is set iff the rows are
    /// exactly symmetric.
    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        let mut t = Self { m, symmetric: false };
        t.symmetric = t.is_exactly_symmetric();
        t
    }

    /// `(A + Aᵀ)/2`, written so that both off-diagonal entries are the same
    /// floating-point value.
    #[allow(clippy::needless_range_loop)]
    pub fn sym_part(&self) -> Self {
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            s[i][i] = self.m[i][i];
            for j in (i + 1)..3 {
                let v = 0.5 * (self.m[i][j] + self.m[j][i]);
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        Self { m: s, symmetric: true }
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0.0; 3]; 3];
        for (i, row) in self.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                t[j][i] = *v;
            }
        }
        Self {
            m: t,
            symmetric: self.symmetric,
        }
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| self.m[i][j] == self.m[j][i]))
    }

    /// Double contraction `A : B = Σ A_ij B_ij`.
    pub fn ddot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.m[i][j] * other.m[i][j];
            }
        }
        s
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self::from_rows(r)
    }

    /// `v ↦ A v`.
    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut r = [0.0; 3];
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = (0..3).map(|k| self.m[i][k] * v[k]).sum();
        }
        r
    }

    pub fn max_abs(&self) -> f64 {
        self.m
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

impl Add for Tensor3 {
    type Output = Tensor3;
    fn add(self, o: Tensor3) -> Tensor3 {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += o.m[i][j];
            }
        }
        r.symmetric = self.symmetric && o.symmetric;
        r
    }
}

impl Sub for Tensor3 {
    type Output = Tensor3;
    fn sub(self, o: Tensor3) -> Tensor3 {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] -= o.m[i][j];
            }
        }
        r.symmetric = self.symmetric && o.symmetric;
        r
    }
}

impl Mul<f64> for Tensor3 {
    type Output = Tensor3;
    fn mul(self, s: f64) -> Tensor3 {
        let mut r = self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }
}

impl Neg for Tensor3 {
    type Output = Tensor3;
    fn neg(self) -> Tensor3 {
        self * -1.0
    }
}

/// Rotation about a unit axis by `angle` (Rodrigues).
pub fn rotation(axis: [f64; 3], angle: f64) -> Tensor3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Tensor3::from_rows([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])
}
