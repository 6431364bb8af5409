//! Discrete-time model: clock ticks on an orthogonal lattice and the system
//! advances by one unitary per tick, `ψ(t_{k+1}) = U^(k) ψ(t_k)`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{expm_hermitian_generator, COperator, CVector};

pub const UNITARITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    OpenLine,
    /// The step window closes into a cycle: `ψ(t_K) = ψ(t_0)`.
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvolution")]
pub struct DiscreteEvolution {
    steps: Vec<COperator>,
    boundary: Boundary,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvolution {
    steps: Vec<COperator>,
    #[serde(default)]
    boundary: Boundary,
}

impl TryFrom<RawEvolution> for DiscreteEvolution {
    type Error = Error;
    fn try_from(raw: RawEvolution) -> Result<Self> {
        Self::new(raw.steps, raw.boundary)
    }
}

impl DiscreteEvolution {
    pub fn new(steps: Vec<COperator>, boundary: Boundary) -> Result<Self> {
        let dim = steps.first().ok_or_else(|| Error::InvalidParameter("no steps".into()))?.dim();
        for u in &steps {
            if u.dim() != dim {
                return Err(Error::Dimension("step unitaries differ in dimension".into()));
            }
            u.ensure_unitary(UNITARITY_TOL)?;
        }
        Ok(Self { steps, boundary })
    }

    /// Steps of an ideal-clock run sampled on the lattice `t_k = kπ/E`:
    /// `U^(k) = V_{k+1} e^{−i(π/E)H}` with `V_j` the kick at lattice point
    /// `j` (identity if none).
    pub fn from_lattice(
        free: &COperator,
        energy: f64,
        kicks: &[(usize, COperator)],
        count: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(energy > 0.0) {
            return Err(Error::InvalidParameter(format!("clock energy must be positive, got {energy}")));
        }
        let free_step = expm_hermitian_generator(free, std::f64::consts::PI / energy)?;
        let steps = (0..count)
            .map(|k| match kicks.iter().find(|(j, _)| *j == k + 1) {
                Some((_, v)) => v * &free_step,
                None => free_step.clone(),
            })
            .collect();
        Self::new(steps, boundary)
    }

    pub fn steps(&self) -> &[COperator] {
        &self.steps
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    /// Full-cycle product `U^(K−1)…U^(0)`.
    pub fn monodromy(&self) -> COperator {
        self.steps.iter().fold(COperator::identity(self.dim()), |acc, u| u * &acc)
    }

    /// `Û = Σ_k |k+1⟩⟨k| ⊗ U^(k)` on clock ⊗ system, with `|K⟩ ≡ |0⟩` for a
    /// periodic window. On an open line the last step leaves the window.
    pub fn global_step_operator(&self) -> Result<COperator> {
        let k = self.steps.len();
        let d = self.dim();
        let clock_dim = match self.boundary {
            Boundary::Periodic => k,
            Boundary::OpenLine => k + 1,
        };
        let mut m = COperator::zeros(clock_dim * d).as_matrix().clone();
        for (j, u) in self.steps.iter().enumerate() {
            let next = (j + 1) % clock_dim;
            m.view_mut((next * d, j * d), (d, d)).copy_from(u.as_matrix());
        }
        COperator::from_matrix(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonodromyReport {
    /// Smallest `|λ − 1|` over monodromy eigenvalues.
    pub min_distance: f64,
    /// The initial state was replaced by the closest eigenvector.
    pub replaced_initial: bool,
    pub fixed_point_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSolution {
    /// `ψ(t_0), …, ψ(t_K)`.
    pub states: Vec<CVector>,
    pub monodromy: Option<MonodromyReport>,
}

/// Iterate the steps from `psi_t0`. For a periodic window the initial state
/// must be a fixed point of the monodromy; if it is not, the eigenvector whose
/// eigenvalue is closest to 1 is used instead and the distance is reported.
pub fn discrete_solve(evo: &DiscreteEvolution, psi_t0: &CVector) -> Result<DiscreteSolution> {
    if psi_t0.dim() != evo.dim() {
        return Err(Error::Dimension("initial state does not match the step unitaries".into()));
    }
    if (psi_t0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("initial state has norm {}", psi_t0.norm())));
    }
    let mut start = psi_t0.clone();
    let mut report = None;
    if evo.boundary == Boundary::Periodic {
        let m = evo.monodromy();
        let residual = (&m.apply(psi_t0) - psi_t0).norm();
        let schur = m.as_matrix().clone().schur();
        let (q, t) = schur.unpack();
        // A unitary is normal, so its Schur form is diagonal.
        let (best, min_distance) = (0..t.nrows())
            .map(|i| (i, (t[(i, i)] - C64::new(1.0, 0.0)).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let replaced = residual > UNITARITY_TOL;
        if replaced {
            let v = CVector::from_dvector(q.column(best).into_owned());
            let overlap = v.inner(psi_t0);
            let phase = if overlap.norm() > 1e-12 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
            start = v.scale(phase).normalized()?;
        }
        report = Some(MonodromyReport {
            min_distance,
            replaced_initial: replaced,
            fixed_point_residual: (&m.apply(&start) - &start).norm(),
        });
    }
    let mut states = Vec::with_capacity(evo.steps.len() + 1);
    states.push(start);
    for u in &evo.steps {
        let next = u.apply(states.last().unwrap());
        states.push(next);
    }
    Ok(DiscreteSolution { states, monodromy: report })
}

/// `max_k ‖ψ(t_{k+1}) − U^(k)ψ(t_k)‖`, plus `‖ψ(t_K) − ψ(t_0)‖` for a
/// periodic window.
pub fn discrete_constraint_residual(evo: &DiscreteEvolution, history: &[CVector]) -> Result<f64> {
    if history.len() != evo.steps.len() + 1 {
        return Err(Error::Dimension(format!(
            "history has {} states for {} steps",
            history.len(),
            evo.steps.len()
        )));
    }
    let mut residual = evo
        .steps
        .iter()
        .enumerate()
        .map(|(k, u)| (&history[k + 1] - &u.apply(&history[k])).norm())
        .fold(0.0, f64::max);
    if evo.boundary == Boundary::Periodic {
        residual = residual.max((&history[history.len() - 1] - &history[0]).norm());
    }
    Ok(residual)
}
