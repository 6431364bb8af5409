//! Dense complex vectors and operators.
//!
//! Composite spaces are always ordered clock ⊗ system ⊗ ancilla₁ ⊗ ancilla₂ ⊗ …
//! with row-major composite indices: for factor dimensions `[d0, d1, d2]` the
//! basis state `|i0 i1 i2⟩` sits at `(i0 * d1 + i1) * d2 + i2`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest composite dimension `kron` will build.
pub const MAX_DIM: usize = 4096;

/// Entrywise tolerance for Hermiticity and unitarity checks.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct CVector(DVector<C64>);

#[derive(Clone, Debug, PartialEq)]
pub struct COperator(DMatrix<C64>);

fn check_finite<'a>(it: impl Iterator<Item = &'a C64>) -> Result<()> {
    for (k, z) in it.enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite(k));
        }
    }
    Ok(())
}

impl CVector {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension("vector must have positive dimension".into()));
        }
        check_finite(entries.iter())?;
        Ok(Self(DVector::from_vec(entries)))
    }

    pub fn from_real(entries: &[f64]) -> Result<Self> {
        Self::new(entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    /// Computational basis vector `|k⟩`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[k] = ONE;
        Self(v)
    }

    pub fn from_dvector(v: DVector<C64>) -> Self {
        Self(v)
    }

    pub fn as_dvector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        self.0.as_mut_slice()
    }

    pub fn get(&self, k: usize) -> C64 {
        self.0[k]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("cannot normalize the zero vector".into()));
        }
        Ok(self.scale(C64::new(1.0 / n, 0.0)))
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &CVector) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn scale(&self, z: C64) -> Self {
        Self(&self.0 * z)
    }

    pub fn kron(&self, other: &CVector) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    pub fn max_abs_diff(&self, other: &CVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `|self⟩⟨other|`.
    pub fn outer(&self, other: &CVector) -> COperator {
        COperator(&self.0 * other.0.adjoint())
    }
}

impl Add for &CVector {
    type Output = CVector;
    fn add(self, rhs: &CVector) -> CVector {
        CVector(&self.0 + &rhs.0)
    }
}

impl Sub for &CVector {
    type Output = CVector;
    fn sub(self, rhs: &CVector) -> CVector {
        CVector(&self.0 - &rhs.0)
    }
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the orthonormal eigenvectors.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> COperator {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&x| C64::new(x, 0.0)),
        ));
        COperator(&self.vectors * d * self.vectors.adjoint())
    }

    /// `V f(Λ) V†`.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64) -> COperator {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let z = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= z;
            }
        }
        COperator(scaled * self.vectors.adjoint())
    }

    pub fn propagator(&self, t: f64) -> COperator {
        self.apply_function(|lam| C64::from_polar(1.0, -lam * t))
    }
}

impl COperator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "operator must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(m.iter())?;
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows must form a square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn real_diagonal(values: &[f64]) -> Self {
        let v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::diagonal(&v)
    }

    /// Projector `|v⟩⟨v|` (no normalization applied).
    pub fn projector(v: &CVector) -> Self {
        v.outer(v)
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, z: C64) -> Self {
        Self(&self.0 * z)
    }

    pub fn scale_real(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        CVector(&self.0 * &v.0)
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &COperator) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn commutator(&self, other: &COperator) -> COperator {
        COperator(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Largest entrywise violation `|h_ij − conj(h_ji)|` and where it occurs.
    pub fn hermiticity_violation(&self) -> (usize, usize, f64) {
        let n = self.dim();
        let mut worst = (0, 0, 0.0);
        for i in 0..n {
            for j in i..n {
                let dev = (self.0[(i, j)] - self.0[(j, i)].conj()).norm();
                if dev > worst.2 {
                    worst = (i, j, dev);
                }
            }
        }
        worst
    }

    pub fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        let (row, col, deviation) = self.hermiticity_violation();
        if deviation > tol {
            return Err(Error::NotHermitian { row, col, deviation });
        }
        Ok(())
    }

    /// `max |U†U − 1|`.
    pub fn unitarity_defect(&self) -> f64 {
        let p = self.0.adjoint() * &self.0;
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((p[(i, j)] - target).norm());
            }
        }
        worst
    }

    pub fn ensure_unitary(&self, tol: f64) -> Result<()> {
        let defect = self.unitarity_defect();
        if defect > tol {
            return Err(Error::NotUnitary(defect));
        }
        Ok(())
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.0.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    }

    /// Hermitian eigendecomposition; the input is Hermitized before solving.
    pub fn eigh(&self) -> Result<HermitianEigen> {
        self.ensure_hermitian(HERMITIAN_TOL)?;
        let sym = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(HermitianEigen { values, vectors })
    }
}

impl Add for &COperator {
    type Output = COperator;
    fn add(self, rhs: &COperator) -> COperator {
        COperator(&self.0 + &rhs.0)
    }
}

impl Sub for &COperator {
    type Output = COperator;
    fn sub(self, rhs: &COperator) -> COperator {
        COperator(&self.0 - &rhs.0)
    }
}

impl Mul for &COperator {
    type Output = COperator;
    fn mul(self, rhs: &COperator) -> COperator {
        COperator(&self.0 * &rhs.0)
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &COperator, b: &COperator) -> Result<COperator> {
    let dim = a.dim().saturating_mul(b.dim());
    if dim > MAX_DIM {
        return Err(Error::DimensionOverflow { dim, max: MAX_DIM });
    }
    Ok(COperator(a.0.kronecker(&b.0)))
}

pub fn kron_all(factors: &[&COperator]) -> Result<COperator> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::Dimension("kron of an empty list".into()))?;
    let mut acc = (*first).clone();
    for f in rest {
        acc = kron(&acc, f)?;
    }
    Ok(acc)
}

/// `exp(−i t h)` for Hermitian `h`.
pub fn expm_hermitian_generator(h: &COperator, t: f64) -> Result<COperator> {
    Ok(h.eigh()?.propagator(t))
}

/// Digit of `factor` in the row-major composite `index`.
pub fn factor_digit(index: usize, dims: &[usize], factor: usize) -> usize {
    let stride: usize = dims[factor + 1..].iter().product();
    (index / stride) % dims[factor]
}

/// Embed `op`, acting on the listed factors (in the listed order), into the
/// full composite space with identity on the remaining factors.
pub fn embed(op: &COperator, dims: &[usize], factors: &[usize]) -> Result<COperator> {
    let sub: usize = factors.iter().map(|&f| dims[f]).product();
    if sub != op.dim() {
        return Err(Error::Dimension(format!(
            "operator of dimension {} does not act on factors {:?} of {:?}",
            op.dim(),
            factors,
            dims
        )));
    }
    let total: usize = dims.iter().product();
    if total > MAX_DIM {
        return Err(Error::DimensionOverflow { dim: total, max: MAX_DIM });
    }
    let digits = |idx: usize| -> Vec<usize> { (0..dims.len()).map(|f| factor_digit(idx, dims, f)).collect() };
    let sub_index = |d: &[usize]| factors.iter().fold(0, |acc, &f| acc * dims[f] + d[f]);
    let all: Vec<Vec<usize>> = (0..total).map(digits).collect();
    let rest: Vec<usize> = (0..dims.len()).filter(|f| !factors.contains(f)).collect();
    let mut m = DMatrix::zeros(total, total);
    for r in 0..total {
        for c in 0..total {
            if rest.iter().all(|&f| all[r][f] == all[c][f]) {
                m[(r, c)] = op.get(sub_index(&all[r]), sub_index(&all[c]));
            }
        }
    }
    Ok(COperator(m))
}

/// `(⟨bra| ⊗ 1) v` for `v` on a space whose leading factor matches `bra`.
pub fn contract_leading(bra: &CVector, v: &CVector) -> Result<CVector> {
    let dc = bra.dim();
    if !v.dim().is_multiple_of(dc) {
        return Err(Error::Dimension(format!("cannot contract {} against leading factor {}", v.dim(), dc)));
    }
    let rest = v.dim() / dc;
    let mut out = DVector::zeros(rest);
    for c in 0..dc {
        let w = bra.get(c).conj();
        for r in 0..rest {
            out[r] += w * v.get(c * rest + r);
        }
    }
    Ok(CVector(out))
}

/// Probability weight of the components whose factor digits match every
/// `(factor, outcome)` constraint.
pub fn outcome_weight(v: &CVector, dims: &[usize], constraints: &[(usize, usize)]) -> f64 {
    v.as_slice()
        .iter()
        .enumerate()
        .filter(|(idx, _)| constraints.iter().all(|&(f, a)| factor_digit(*idx, dims, f) == a))
        .map(|(_, z)| z.norm_sqr())
        .sum()
}

pub mod pauli {
    use super::*;

    pub fn x() -> COperator {
        COperator::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    pub fn y() -> COperator {
        COperator::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap()
    }

    pub fn z() -> COperator {
        COperator::real_diagonal(&[1.0, -1.0])
    }

    pub fn plus() -> CVector {
        CVector::from_real(&[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]).unwrap()
    }

    pub fn minus() -> CVector {
        CVector::from_real(&[std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2]).unwrap()
    }
}

pub mod random {
    use super::*;
    use rand::Rng;

    fn gaussian(rng: &mut impl Rng) -> f64 {
        // Box-Muller; the first uniform is kept away from zero.
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn ginibre(dim: usize, rng: &mut impl Rng) -> DMatrix<C64> {
        DMatrix::from_fn(dim, dim, |_, _| C64::new(gaussian(rng), gaussian(rng)))
    }

    pub fn hermitian(dim: usize, rng: &mut impl Rng) -> COperator {
        let g = ginibre(dim, rng);
        COperator((&g + g.adjoint()) * C64::new(0.5, 0.0))
    }

    /// Haar-distributed unitary via QR of a Ginibre matrix with phase fix.
    pub fn unitary(dim: usize, rng: &mut impl Rng) -> COperator {
        let qr = ginibre(dim, rng).qr();
        let (mut q, r) = (qr.q(), qr.r());
        for j in 0..dim {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
            for i in 0..dim {
                q[(i, j)] *= phase;
            }
        }
        COperator(q)
    }

    pub fn state(dim: usize, rng: &mut impl Rng) -> CVector {
        let v = DVector::from_fn(dim, |_, _| C64::new(gaussian(rng), gaussian(rng)));
        let n = v.norm();
        CVector(v / C64::new(n, 0.0))
    }
}

// JSON form: nested arrays of `[re, im]` pairs.

impl Serialize for CVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.0.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        CVector::new(pairs.iter().map(|p| C64::new(p[0], p[1])).collect()).map_err(serde::de::Error::custom)
    }
}

impl Serialize for COperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for COperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|p| C64::new(p[0], p[1])).collect())
            .collect();
        COperator::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
