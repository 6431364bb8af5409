//! Twirled observables on clock ⊗ system for finite-dimensional clocks.
//!
//! Physical states solve `(H_C ⊗ 1 + 1 ⊗ H_S)Ψ = 0`. Observables "at clock
//! time τ" are group averages of `|φ_τ⟩⟨φ_τ| ⊗ f_S` over the flow of that
//! constraint, computed exactly as block-diagonal projections in its
//! eigenbasis.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::clock::{ClockModel, ClockQuality};
use crate::error::{Error, Result};
use crate::tensor::{contract_leading, expm_hermitian_generator, kron, COperator, CVector, ZERO};

/// Eigenvalues of the constraint closer than this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Constraint residual accepted for a free history state.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Eigen-structure of `H = H_C ⊗ 1 + 1 ⊗ H_S` in the product basis
/// (clock energy basis ⊗ eigenbasis of `H_S`).
#[derive(Clone, Debug)]
pub struct ConstraintSpectrum {
    /// Unitary whose columns are the product eigenvectors.
    basis: DMatrix<C64>,
    energies: Vec<f64>,
    /// Degeneracy cluster of each eigenvector.
    cluster: Vec<usize>,
    clock_dim: usize,
}

impl ConstraintSpectrum {
    pub fn new(clock: &ClockModel, h_s: &COperator) -> Result<Self> {
        let levels = clock.levels()?;
        let eig = h_s.eigh()?;
        let clock_dim = levels.len();
        let ds = h_s.dim();
        let basis = kron(&COperator::identity(clock_dim), &COperator::from_matrix(eig.vectors.clone())?)?
            .as_matrix()
            .clone();
        let energies: Vec<f64> = levels
            .iter()
            .flat_map(|&e| eig.values.iter().map(move |&l| e + l))
            .collect();
        let mut order: Vec<usize> = (0..energies.len()).collect();
        order.sort_by(|&a, &b| energies[a].partial_cmp(&energies[b]).unwrap());
        let mut cluster = vec![0; energies.len()];
        let mut label = 0;
        for w in 1..order.len() {
            if energies[order[w]] - energies[order[w - 1]] > DEGENERACY_TOL {
                label += 1;
            }
            cluster[order[w]] = label;
        }
        debug_assert_eq!(energies.len(), clock_dim * ds);
        Ok(Self { basis, energies, cluster, clock_dim })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn clock_dim(&self) -> usize {
        self.clock_dim
    }

    /// `Σ_λ P_λ X P_λ`, the infinite-time average of `e^{−itH} X e^{itH}`.
    pub fn block_average(&self, x: &COperator) -> COperator {
        let mut y = self.basis.adjoint() * x.as_matrix() * &self.basis;
        let n = self.energies.len();
        for i in 0..n {
            for j in 0..n {
                if self.cluster[i] != self.cluster[j] {
                    y[(i, j)] = ZERO;
                }
            }
        }
        COperator::from_matrix(&self.basis * y * self.basis.adjoint()).expect("finite")
    }

    /// Projector onto the null space of the constraint.
    pub fn null_projector(&self) -> COperator {
        let n = self.energies.len();
        let mut p = DMatrix::zeros(n, n);
        for (j, &e) in self.energies.iter().enumerate() {
            if e.abs() <= DEGENERACY_TOL {
                let col = self.basis.column(j);
                p += col * col.adjoint();
            }
        }
        COperator::from_matrix(p).expect("finite")
    }

    pub fn hamiltonian(&self) -> COperator {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.energies.len(),
            self.energies.iter().map(|&e| C64::new(e, 0.0)),
        ));
        COperator::from_matrix(&self.basis * d * self.basis.adjoint()).expect("finite")
    }
}

/// `(H_C ⊗ 1 + 1 ⊗ H_S)` on clock ⊗ system.
pub fn constraint_operator(clock: &ClockModel, h_s: &COperator) -> Result<COperator> {
    let hc = clock.hamiltonian()?;
    Ok(&kron(&hc, &COperator::identity(h_s.dim()))? + &kron(&COperator::identity(hc.dim()), h_s)?)
}

/// A vector on clock ⊗ system (⊗ ancillas).
#[derive(Clone, Debug)]
pub struct HistoryState {
    vector: CVector,
    clock: ClockModel,
    dims: Vec<usize>,
}

impl HistoryState {
    pub fn new(vector: CVector, clock: ClockModel, dims: Vec<usize>) -> Result<Self> {
        if dims.first().copied() != clock.dim() || dims.iter().product::<usize>() != vector.dim() {
            return Err(Error::Dimension(format!("history vector of dimension {} does not match factors {dims:?}", vector.dim())));
        }
        Ok(Self { vector, clock, dims })
    }

    pub fn vector(&self) -> &CVector {
        &self.vector
    }

    pub fn clock(&self) -> &ClockModel {
        &self.clock
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `‖(H_C + H_S)Ψ‖ / ‖Ψ‖`.
    pub fn constraint_residual(&self, h_s: &COperator) -> Result<f64> {
        let h = constraint_operator(&self.clock, h_s)?;
        Ok(h.apply(&self.vector).norm() / self.vector.norm())
    }

    /// Conditioned state `⟨φ_t|Ψ⟩`.
    pub fn condition(&self, t: f64) -> Result<CVector> {
        contract_leading(&self.clock.clock_state(t)?, &self.vector)
    }

    pub fn apply(&self, op: &COperator) -> Self {
        Self { vector: op.apply(&self.vector), clock: self.clock, dims: self.dims.clone() }
    }
}

/// Nodes of a periodic rectangle rule over one clock period, fine enough to
/// integrate every frequency `e_n + λ` of the constraint exactly.
fn period_nodes(clock: &ClockModel, h_s: &COperator) -> Result<(Vec<f64>, f64)> {
    let period = clock.period().ok_or_else(|| Error::UnsupportedClock("history states need a finite clock".into()))?;
    let delta = clock.level_spacing().unwrap();
    let spread = h_s.eigh()?.values.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let n = 2 * (clock.dim().unwrap() + (spread / delta).ceil() as usize) + 4;
    let h = period / n as f64;
    Ok(((0..n).map(|k| k as f64 * h).collect(), h))
}

/// `R⁻¹(τ)ψ = N_C Σ_i w_i |φ_{t_i}⟩ ⊗ e^{−i(t_i − τ)H_S} ψ` over one period.
pub fn inverse_reduction(clock: &ClockModel, h_s: &COperator, psi: &CVector, tau: f64) -> Result<CVector> {
    if psi.dim() != h_s.dim() {
        return Err(Error::Dimension("state and Hamiltonian differ in dimension".into()));
    }
    let (nodes, w) = period_nodes(clock, h_s)?;
    let eig = h_s.eigh()?;
    let d = clock.dim().unwrap();
    let mut out = CVector::zeros(d * psi.dim());
    let scale = C64::new(clock.normalization() * w, 0.0);
    for &t in &nodes {
        let evolved = eig.propagator(t - tau).apply(psi).scale(scale);
        out = &out + &clock.clock_state(t)?.kron(&evolved);
    }
    Ok(out)
}

/// History state of the free constraint with `⟨φ_0|Ψ⟩ ∝ ψ₀`, unit plain norm.
///
/// Fails with the achieved residual when `ψ₀` has components whose energies
/// do not cancel against any clock level.
pub fn free_history_state(clock: &ClockModel, h_s: &COperator, psi0: &CVector) -> Result<HistoryState> {
    let raw = inverse_reduction(clock, h_s, psi0, 0.0)?;
    let dims = vec![clock.dim().unwrap(), h_s.dim()];
    let norm = raw.norm();
    if norm < 1e-12 {
        return Err(Error::ResonanceFailure(1.0));
    }
    let state = HistoryState::new(raw.scale(C64::new(1.0 / norm, 0.0)), *clock, dims)?;
    let residual = state.constraint_residual(h_s)?;
    if residual > CONSTRAINT_TOL {
        return Err(Error::ResonanceFailure(residual));
    }
    let conditioned = state.condition(0.0)?;
    let lost = (conditioned.norm() - conditioned.inner(psi0).norm()).abs() / conditioned.norm();
    if lost > CONSTRAINT_TOL {
        // Part of ψ₀ is off resonance and was projected out.
        return Err(Error::ResonanceFailure(lost));
    }
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct TwirledOperator {
    matrix: COperator,
    label: (String, f64),
}

impl TwirledOperator {
    pub fn matrix(&self) -> &COperator {
        &self.matrix
    }

    pub fn label(&self) -> (&str, f64) {
        (&self.label.0, self.label.1)
    }

    /// `‖[T, H_C + H_S]‖_max`.
    pub fn commutator_defect(&self, clock: &ClockModel, h_s: &COperator) -> Result<f64> {
        Ok(self.matrix.commutator(&constraint_operator(clock, h_s)?).max_abs())
    }
}

/// `N_C ∫_0^T dt e^{−itH}(|φ_τ⟩⟨φ_τ| ⊗ f_S)e^{itH} = d·Σ_λ P_λ(|φ_τ⟩⟨φ_τ| ⊗ f_S)P_λ`.
pub fn twirl(clock: &ClockModel, h_s: &COperator, f_s: &COperator, tau: f64) -> Result<TwirledOperator> {
    twirl_labeled(clock, h_s, f_s, tau, "F")
}

pub fn twirl_labeled(clock: &ClockModel, h_s: &COperator, f_s: &COperator, tau: f64, name: &str) -> Result<TwirledOperator> {
    let spectrum = ConstraintSpectrum::new(clock, h_s)?;
    twirl_with(&spectrum, clock, f_s, tau, name)
}

pub fn twirl_with(
    spectrum: &ConstraintSpectrum,
    clock: &ClockModel,
    f_s: &COperator,
    tau: f64,
    name: &str,
) -> Result<TwirledOperator> {
    let phi = clock.clock_state(tau)?;
    let x = kron(&COperator::projector(&phi), f_s)?;
    let d = spectrum.clock_dim() as f64;
    Ok(TwirledOperator { matrix: spectrum.block_average(&x).scale_real(d), label: (name.to_string(), tau) })
}

/// Twirl of an arbitrary operator `X` on clock ⊗ system.
pub fn twirl_operator(spectrum: &ConstraintSpectrum, x: &COperator) -> COperator {
    spectrum.block_average(x).scale_real(spectrum.clock_dim() as f64)
}

/// `⟨Ψ|P₀|Φ⟩` with `P₀` the projector onto the constraint null space.
pub fn physical_inner(clock: &ClockModel, h_s: &COperator, psi: &CVector, phi: &CVector) -> Result<C64> {
    let p0 = ConstraintSpectrum::new(clock, h_s)?.null_projector();
    Ok(psi.inner(&p0.apply(phi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoTimeProbability {
    /// Twirled-observable value.
    pub probability: f64,
    /// Standard Born value `‖Π_q U(τ₂−τ₁) Π_k U(τ₁) ψ₀‖²`.
    pub born: f64,
    pub deviation: f64,
    pub quality: ClockQuality,
}

/// Joint probability of `Π_k` at τ₁ and then `Π_q` at τ₂:
/// `‖⟨φ_0|Π_q(τ₂)Π_k(τ₁)|Ψ⟩‖² / ‖⟨φ_0|Ψ⟩‖²`.
pub fn two_time_probability_to(
    clock: &ClockModel,
    h_s: &COperator,
    psi0: &CVector,
    pi_k: &COperator,
    tau1: f64,
    pi_q: &COperator,
    tau2: f64,
) -> Result<TwoTimeProbability> {
    let spectrum = ConstraintSpectrum::new(clock, h_s)?;
    let psi = inverse_reduction(clock, h_s, psi0, 0.0)?;
    let first = twirl_with(&spectrum, clock, pi_k, tau1, "Pi_k")?;
    let second = twirl_with(&spectrum, clock, pi_q, tau2, "Pi_q")?;
    let sandwiched = second.matrix().apply(&first.matrix().apply(&psi));
    let phi0 = clock.clock_state(0.0)?;
    let denominator = contract_leading(&phi0, &psi)?.norm_sqr();
    let probability = contract_leading(&phi0, &sandwiched)?.norm_sqr() / denominator;
    let born = born_two_time(h_s, psi0, pi_k, tau1, pi_q, tau2)?;
    let quality = clock.quality(&h_s.eigh()?.values);
    Ok(TwoTimeProbability { probability, born, deviation: (probability - born).abs(), quality })
}

/// Born oracle `‖Π_q e^{−i(τ₂−τ₁)H_S} Π_k e^{−iτ₁H_S} ψ₀‖²`.
pub fn born_two_time(h_s: &COperator, psi0: &CVector, pi_k: &COperator, tau1: f64, pi_q: &COperator, tau2: f64) -> Result<f64> {
    let eig = h_s.eigh()?;
    let v = pi_k.apply(&eig.propagator(tau1).apply(psi0));
    Ok(pi_q.apply(&eig.propagator(tau2 - tau1).apply(&v)).norm_sqr())
}

/// `‖R⁻¹(τ)R(τ)Ψ − Ψ‖/‖Ψ‖` with `R(τ) = ⟨φ_τ|`.
pub fn reduction_map_roundtrip(clock: &ClockModel, h_s: &COperator, psi: &HistoryState, tau: f64) -> Result<f64> {
    let reduced = psi.condition(tau)?;
    let back = inverse_reduction(clock, h_s, &reduced, tau)?;
    Ok((&back - psi.vector()).norm() / psi.vector().norm())
}

/// Matrix of `R(τ')R⁻¹(τ)` on the system, column by column.
pub fn reduction_transfer(clock: &ClockModel, h_s: &COperator, tau_to: f64, tau_from: f64) -> Result<COperator> {
    let ds = h_s.dim();
    let phi = clock.clock_state(tau_to)?;
    let mut m = DMatrix::zeros(ds, ds);
    for j in 0..ds {
        let col = contract_leading(&phi, &inverse_reduction(clock, h_s, &CVector::basis(ds, j), tau_from)?)?;
        for i in 0..ds {
            m[(i, j)] = col.get(i);
        }
    }
    COperator::from_matrix(m)
}

/// Naive double conditioning: condition on `(φ_τ, a)`, then ask for
/// `(φ_τ', b)`. The joint value `P(a at τ)·|⟨φ_τ'|φ_τ⟩|²·|⟨b|a⟩|²` vanishes for
/// orthogonal clock times whatever the dynamics.
pub fn kuchar_naive_two_time(
    clock: &ClockModel,
    h_s: &COperator,
    psi0: &CVector,
    a: &CVector,
    tau: f64,
    b: &CVector,
    tau_prime: f64,
) -> Result<f64> {
    let psi = inverse_reduction(clock, h_s, psi0, 0.0)?;
    let phi = clock.clock_state(tau)?;
    let conditioned = contract_leading(&phi, &psi)?;
    let first = a.inner(&conditioned).norm_sqr() / conditioned.norm_sqr();
    let clock_overlap = clock.clock_state(tau_prime)?.inner(&phi).norm_sqr();
    Ok(first * clock_overlap * b.inner(a).norm_sqr())
}

/// `‖⟨φ_t|F(τ₂)G(τ₁)|Ψ⟩ − U(t−τ₂) F U(τ₂−τ₁) G U(τ₁) ψ₀‖` with
/// `Ψ = R⁻¹(0)ψ₀`.
#[allow(clippy::too_many_arguments)]
pub fn conditioning_identity_check(
    clock: &ClockModel,
    h_s: &COperator,
    psi0: &CVector,
    f_s: &COperator,
    tau2: f64,
    g_s: &COperator,
    tau1: f64,
    t: f64,
) -> Result<f64> {
    let spectrum = ConstraintSpectrum::new(clock, h_s)?;
    let psi = inverse_reduction(clock, h_s, psi0, 0.0)?;
    let g = twirl_with(&spectrum, clock, g_s, tau1, "G")?;
    let f = twirl_with(&spectrum, clock, f_s, tau2, "F")?;
    let lhs = contract_leading(&clock.clock_state(t)?, &f.matrix().apply(&g.matrix().apply(&psi)))?;
    let u = |dt: f64| expm_hermitian_generator(h_s, dt);
    let rhs = u(t - tau2)?.apply(&f_s.apply(&u(tau2 - tau1)?.apply(&g_s.apply(&u(tau1)?.apply(psi0)))));
    Ok((&lhs - &rhs).norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbabilityRow {
    pub tau1: f64,
    pub tau2: f64,
    pub outcome_k: usize,
    pub outcome_q: usize,
    pub p_to: f64,
    pub p_born: f64,
}

/// Probability table with columns `tau1,tau2,outcome_k,outcome_q,P_TO,P_Born,abs_dP`.
pub fn probability_table_csv(rows: &[ProbabilityRow]) -> String {
    let mut out = String::from("tau1,tau2,outcome_k,outcome_q,P_TO,P_Born,abs_dP\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.12e},{:.12e},{:.3e}",
            r.tau1,
            r.tau2,
            r.outcome_k,
            r.outcome_q,
            r.p_to,
            r.p_born,
            (r.p_to - r.p_born).abs()
        )
        .unwrap();
    }
    out
}
