//! Measurement couplings: Kraus sets, their purification on system ⊗ ancilla,
//! and time-dependent interaction schedules `K(t) = Σ_i k_i(t − τ_i) K_i`.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{embed, kron, COperator, CVector, HERMITIAN_TOL, I, ONE, ZERO};

/// Gaussian windows are cut off beyond this many widths.
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

/// Kraus operators `K^a` on the system with `Σ_a K^a† K^a = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    operators: Vec<COperator>,
    ancilla_dim: usize,
}

impl KrausSet {
    /// Ancilla dimension defaults to the number of operators.
    pub fn new(operators: Vec<COperator>) -> Result<Self> {
        let n = operators.len();
        Self::with_ancilla_dim(operators, n)
    }

    pub fn with_ancilla_dim(operators: Vec<COperator>, ancilla_dim: usize) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| Error::InvalidParameter("Kraus set is empty".into()))?;
        let d = first.dim();
        if operators.iter().any(|k| k.dim() != d) {
            return Err(Error::Dimension("Kraus operators differ in dimension".into()));
        }
        if ancilla_dim < operators.len() {
            return Err(Error::InvalidParameter(format!(
                "ancilla dimension {ancilla_dim} is smaller than the {} Kraus operators",
                operators.len()
            )));
        }
        let set = Self { operators, ancilla_dim };
        let residual = set.completeness_residual();
        if residual > HERMITIAN_TOL {
            return Err(Error::KrausIncomplete(residual));
        }
        Ok(set)
    }

    /// Projective measurement onto the given orthonormal basis.
    pub fn projective(basis: &[CVector]) -> Result<Self> {
        Self::new(basis.iter().map(COperator::projector).collect())
    }

    pub fn operators(&self) -> &[COperator] {
        &self.operators
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn system_dim(&self) -> usize {
        self.operators[0].dim()
    }

    pub fn completeness_residual(&self) -> f64 {
        let d = self.system_dim();
        let sum = self
            .operators
            .iter()
            .fold(COperator::zeros(d), |acc, k| &acc + &(&k.dagger() * k));
        sum.max_abs_diff(&COperator::identity(d))
    }

    /// Born-rule outcome probabilities `‖K^a ψ‖²`.
    pub fn probabilities(&self, psi: &CVector) -> Vec<f64> {
        self.operators.iter().map(|k| k.apply(psi).norm_sqr()).collect()
    }
}

/// Unitary `V` on system ⊗ ancilla with `V(|ψ⟩⊗|0⟩) = Σ_a K^a|ψ⟩⊗|a⟩`.
///
/// Columns outside the ready sector are filled by Gram–Schmidt over the
/// standard basis, in index order.
pub fn purification_unitary(kraus: &KrausSet) -> Result<COperator> {
    let residual = kraus.completeness_residual();
    if residual > HERMITIAN_TOL {
        return Err(Error::KrausIncomplete(residual));
    }
    let (ds, na) = (kraus.system_dim(), kraus.ancilla_dim());
    let dim = ds * na;
    let mut columns: Vec<Option<DVector<C64>>> = vec![None; dim];
    for s in 0..ds {
        let mut col = DVector::zeros(dim);
        for (a, k) in kraus.operators().iter().enumerate() {
            for row in 0..ds {
                col[row * na + a] = k.get(row, s);
            }
        }
        columns[s * na] = Some(col);
    }
    let mut basis: Vec<DVector<C64>> = columns.iter().flatten().cloned().collect();
    let mut candidates = 0..dim;
    for slot in columns.iter_mut().filter(|c| c.is_none()) {
        loop {
            let k = candidates
                .next()
                .ok_or_else(|| Error::InvalidParameter("orthonormal completion ran out of candidates".into()))?;
            let mut v = DVector::from_fn(dim, |i, _| if i == k { ONE } else { ZERO });
            // Two passes keep the completion orthonormal to rounding.
            for _ in 0..2 {
                for b in &basis {
                    let overlap = b.dotc(&v);
                    v -= b * overlap;
                }
            }
            let n = v.norm();
            if n > 1e-8 {
                let v = v / C64::new(n, 0.0);
                basis.push(v.clone());
                *slot = Some(v);
                break;
            }
        }
    }
    let cols: Vec<DVector<C64>> = columns.into_iter().map(|c| c.unwrap()).collect();
    COperator::from_matrix(nalgebra::DMatrix::from_columns(&cols))
}

/// Hermitian `K` with `e^{−iK} = V`, principal branch of the logarithm.
pub fn unitary_generator(v: &COperator) -> Result<COperator> {
    v.ensure_unitary(1e-9)?;
    let schur = v.as_matrix().clone().schur();
    let (q, t) = schur.unpack();
    let n = v.dim();
    let mut logs = nalgebra::DMatrix::zeros(n, n);
    for k in 0..n {
        // e^{−iK} = V  ⇒  K = i log V.
        logs[(k, k)] = I * C64::new(0.0, t[(k, k)].arg());
    }
    let k = &q * logs * q.adjoint();
    let k = (&k + k.adjoint()) * C64::new(0.5, 0.0);
    COperator::from_matrix(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowShape {
    /// Constant on `[a, b)`.
    Indicator { a: f64, b: f64 },
    /// Point event at offset `at`.
    Delta { at: f64 },
    /// Gaussian centred at offset `at`, truncated at 8 widths.
    Gaussian { at: f64, sigma: f64 },
}

/// Window `k(u)` with total integral `normalization`, evaluated at the offset
/// `u = t − τ` from the owning term's centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct WindowFunction {
    #[serde(flatten)]
    shape: WindowShape,
    normalization: f64,
}

#[derive(Deserialize)]
struct RawWindow {
    #[serde(flatten)]
    shape: WindowShape,
    normalization: Option<f64>,
}

impl TryFrom<RawWindow> for WindowFunction {
    type Error = Error;
    fn try_from(raw: RawWindow) -> Result<Self> {
        let w = match raw.shape {
            WindowShape::Indicator { a, b } => Self::indicator(a, b)?,
            WindowShape::Delta { at } => Self::delta(at)?,
            WindowShape::Gaussian { at, sigma } => Self::gaussian(at, sigma)?,
        };
        match raw.normalization {
            Some(n) => w.with_normalization(n),
            None => Ok(w),
        }
    }
}

impl WindowFunction {
    /// Raw characteristic function of `[a, b)`, integral `b − a`.
    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidParameter(format!("indicator window needs a < b, got [{a}, {b})")));
        }
        Ok(Self { shape: WindowShape::Indicator { a, b }, normalization: b - a })
    }

    /// Indicator of `[a, b)` rescaled to unit integral.
    pub fn unit_indicator(a: f64, b: f64) -> Result<Self> {
        Self::indicator(a, b)?.with_normalization(1.0)
    }

    pub fn delta(at: f64) -> Result<Self> {
        if !at.is_finite() {
            return Err(Error::InvalidParameter("delta window position must be finite".into()));
        }
        Ok(Self { shape: WindowShape::Delta { at }, normalization: 1.0 })
    }

    pub fn gaussian(at: f64, sigma: f64) -> Result<Self> {
        if !(at.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gaussian window needs sigma > 0, got {sigma}")));
        }
        Ok(Self { shape: WindowShape::Gaussian { at, sigma }, normalization: 1.0 })
    }

    pub fn with_normalization(mut self, normalization: f64) -> Result<Self> {
        if !normalization.is_finite() {
            return Err(Error::InvalidParameter("window normalization must be finite".into()));
        }
        self.normalization = normalization;
        Ok(self)
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn is_delta(&self) -> bool {
        matches!(self.shape, WindowShape::Delta { .. })
    }

    /// Closed support `[lo, hi]` in offset coordinates.
    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            WindowShape::Indicator { a, b } => (a, b),
            WindowShape::Delta { at } => (at, at),
            WindowShape::Gaussian { at, sigma } => (at - GAUSSIAN_CUTOFF * sigma, at + GAUSSIAN_CUTOFF * sigma),
        }
    }

    pub fn width(&self) -> f64 {
        let (lo, hi) = self.support();
        hi - lo
    }

    /// Pointwise value; indicators are closed on the left and open on the
    /// right. `None` for delta windows.
    pub fn value(&self, u: f64) -> Option<f64> {
        match self.shape {
            WindowShape::Indicator { a, b } => {
                Some(if u >= a && u < b { self.normalization / (b - a) } else { 0.0 })
            }
            WindowShape::Delta { .. } => None,
            WindowShape::Gaussian { at, sigma } => {
                let z = (u - at) / sigma;
                Some(if z.abs() > GAUSSIAN_CUTOFF {
                    0.0
                } else {
                    self.normalization * (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
                })
            }
        }
    }

    /// Mean of the window over the cell `[u − h/2, u + h/2]`.
    ///
    /// Quadrature weight for a grid node; it makes trapezoid sums of
    /// discontinuous indicators second-order accurate.
    pub fn cell_average(&self, u: f64, h: f64) -> Option<f64> {
        match self.shape {
            WindowShape::Indicator { a, b } => {
                let overlap = ((u + 0.5 * h).min(b) - (u - 0.5 * h).max(a)).max(0.0);
                Some(self.normalization / (b - a) * overlap / h)
            }
            _ => self.value(u),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTerm {
    pub window: WindowFunction,
    pub center: f64,
    /// Hermitian coupling on system ⊗ ancillas.
    pub coupling: COperator,
}

impl ScheduleTerm {
    /// Support in absolute time.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.window.support();
        (self.center + lo, self.center + hi)
    }
}

/// `H_S ⊗ 1 + Σ_i k_i(t − τ_i) K_i` on system ⊗ ancilla₁ ⊗ ….
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct InteractionSchedule {
    free_hamiltonian: COperator,
    ancilla_dims: Vec<usize>,
    terms: Vec<ScheduleTerm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    free_hamiltonian: COperator,
    #[serde(default)]
    ancilla_dims: Vec<usize>,
    #[serde(default)]
    terms: Vec<ScheduleTerm>,
}

impl TryFrom<RawSchedule> for InteractionSchedule {
    type Error = Error;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        let mut s = Self::new(raw.free_hamiltonian, raw.ancilla_dims)?;
        for t in raw.terms {
            s = s.with_term(t.window, t.center, t.coupling)?;
        }
        Ok(s)
    }
}

impl InteractionSchedule {
    pub fn new(free_hamiltonian: COperator, ancilla_dims: Vec<usize>) -> Result<Self> {
        free_hamiltonian.ensure_hermitian(HERMITIAN_TOL)?;
        if ancilla_dims.contains(&0) {
            return Err(Error::Dimension("ancilla dimensions must be positive".into()));
        }
        Ok(Self { free_hamiltonian, ancilla_dims, terms: Vec::new() })
    }

    /// Schedule with `H_S = 0`.
    pub fn empty(system_dim: usize, ancilla_dims: Vec<usize>) -> Result<Self> {
        Self::new(COperator::zeros(system_dim), ancilla_dims)
    }

    pub fn with_term(mut self, window: WindowFunction, center: f64, coupling: COperator) -> Result<Self> {
        if coupling.dim() != self.total_dim() {
            return Err(Error::Dimension(format!(
                "coupling has dimension {}, schedule space has {}",
                coupling.dim(),
                self.total_dim()
            )));
        }
        if !center.is_finite() {
            return Err(Error::InvalidParameter("term centre must be finite".into()));
        }
        coupling.ensure_hermitian(HERMITIAN_TOL)?;
        self.terms.push(ScheduleTerm { window, center, coupling });
        Ok(self)
    }

    pub fn free_hamiltonian(&self) -> &COperator {
        &self.free_hamiltonian
    }

    pub fn terms(&self) -> &[ScheduleTerm] {
        &self.terms
    }

    pub fn system_dim(&self) -> usize {
        self.free_hamiltonian.dim()
    }

    pub fn ancilla_dims(&self) -> &[usize] {
        &self.ancilla_dims
    }

    /// Factor dimensions `[system, ancilla₁, …]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.system_dim()).chain(self.ancilla_dims.iter().copied()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn free_is_zero(&self) -> bool {
        self.free_hamiltonian.max_abs() == 0.0
    }

    pub fn has_delta_terms(&self) -> bool {
        self.terms.iter().any(|t| t.window.is_delta())
    }

    /// `H_S ⊗ 1` on the full schedule space.
    pub fn free_extended(&self) -> COperator {
        let ancillas: usize = self.ancilla_dims.iter().product();
        kron(&self.free_hamiltonian, &COperator::identity(ancillas)).expect("schedule space fits MAX_DIM")
    }

    /// Convex hull of all term supports.
    pub fn support(&self) -> Option<(f64, f64)> {
        self.terms.iter().map(ScheduleTerm::support).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Whether term supports are pairwise disjoint (touching endpoints allowed).
    pub fn windows_disjoint(&self) -> bool {
        let mut spans: Vec<(f64, f64)> = self.terms.iter().map(ScheduleTerm::support).collect();
        spans.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        spans.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    pub fn coupling_at(&self, t: f64) -> Result<COperator> {
        self.combine(|w, u| w.value(u), t)
    }

    /// Like [`Self::coupling_at`] with each window replaced by its mean over the
    /// quadrature cell of width `h` around `t`.
    pub fn cell_coupling(&self, t: f64, h: f64) -> Result<COperator> {
        self.combine(|w, u| w.cell_average(u, h), t)
    }

    fn combine(&self, eval: impl Fn(&WindowFunction, f64) -> Option<f64>, t: f64) -> Result<COperator> {
        let mut k = self.free_extended();
        for term in &self.terms {
            let weight = eval(&term.window, t - term.center).ok_or_else(|| {
                Error::UnsupportedSchedule("delta windows have no pointwise value; use the ideal event solver".into())
            })?;
            if weight != 0.0 {
                k = &k + &term.coupling.scale_real(weight);
            }
        }
        Ok(k)
    }

    /// Move `H_S` into an interaction term active on `[t_min, t_max)`, leaving
    /// a zero free Hamiltonian; the dynamics inside that interval is unchanged.
    pub fn fold_free_hamiltonian(&self, t_min: f64, t_max: f64) -> Result<Self> {
        let h = self.free_extended();
        let mut folded = Self::new(COperator::zeros(self.system_dim()), self.ancilla_dims.clone())?;
        folded.terms = self.terms.clone();
        if h.max_abs() > 0.0 {
            folded = folded.with_term(WindowFunction::indicator(t_min, t_max)?, 0.0, h)?;
        }
        Ok(folded)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json(e.to_string()))
    }
}

/// Embed a system ⊗ ancilla_j operator into system ⊗ ancilla₁ ⊗ ….
pub fn embed_on_ancilla(op: &COperator, dims: &[usize], ancilla: usize) -> Result<COperator> {
    embed(op, dims, &[0, ancilla + 1])
}
