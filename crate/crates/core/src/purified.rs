//! Purified measurements: the conditioned state `ψ(t) = ⟨φ_t|Ψ⟩` on
//! system ⊗ ancillas for a constraint with clock-conditioned couplings.
//!
//! For an ideal clock `ψ` evolves piecewise unitarily. For a clock with
//! bounded spectrum it obeys the time-non-local equation
//! `i dψ/dt = Σ ∫ f(t − t')K(t')ψ(t') dt'`, solved here by the Born series
//! `ψ = Σ_N (−i)^N ∫…∫ F(t−t_N)K(t_N)…F(t₂−t₁)K(t₁)ψ₀` on a uniform grid.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::clock::{ClockKind, ClockModel, Kernel, TimeGrid};
use crate::error::{Error, Result};
use crate::measurement::{InteractionSchedule, WindowShape};
use crate::tensor::{contract_leading, expm_hermitian_generator, kron, outcome_weight, COperator, CVector, HermitianEigen, I};
use crate::twirled::{inverse_reduction, twirl_operator, ConstraintSpectrum};

/// Unitary applied instantaneously at `time` on system ⊗ ancillas.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementEvent {
    pub time: f64,
    pub unitary: COperator,
}

/// `ψ_S ⊗ |0⟩ ⊗ … ⊗ |0⟩`, the system state with all ancillas ready.
pub fn ready_state(psi_s: &CVector, ancilla_dims: &[usize]) -> CVector {
    ancilla_dims.iter().fold(psi_s.clone(), |acc, &d| acc.kron(&CVector::basis(d, 0)))
}

/// Nyström data of a continuum solve: `ψ(t) = ψ₀ − i Σ_j F(t − t_j) g_j`
/// with `g_j = w_j K(t_j) ψ(t_j)`, valid at any `t`.
#[derive(Clone, Debug)]
struct Nystrom {
    psi0: CVector,
    nodes: Vec<usize>,
    sources: Vec<CVector>,
}

/// Conditioned states on a time grid, with what is needed to rebuild the
/// history state they came from.
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<CVector>,
    /// `None` for the ideal clock.
    clock: Option<ClockModel>,
    kernel: Kernel,
    schedule: InteractionSchedule,
    nystrom: Option<Nystrom>,
}

impl Trajectory {
    pub fn from_states(
        grid: TimeGrid,
        states: Vec<CVector>,
        clock: Option<ClockModel>,
        kernel: Kernel,
        schedule: InteractionSchedule,
    ) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::Dimension(format!("{} states for {} grid points", states.len(), grid.len())));
        }
        if states.iter().any(|s| s.dim() != schedule.total_dim()) {
            return Err(Error::Dimension("state dimension differs from the schedule space".into()));
        }
        Ok(Self { grid, states, clock, kernel, schedule, nystrom: None })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[CVector] {
        &self.states
    }

    pub fn clock(&self) -> Option<&ClockModel> {
        self.clock.as_ref()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn schedule(&self) -> &InteractionSchedule {
        &self.schedule
    }

    pub fn dims(&self) -> Vec<usize> {
        self.schedule.dims()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(CVector::norm).collect()
    }

    pub fn state_at(&self, t: f64) -> Option<&CVector> {
        self.grid.index_of(t).map(|i| &self.states[i])
    }

    fn is_periodic(&self) -> bool {
        matches!(self.clock, Some(c) if c.kind() != ClockKind::ContinuumBounded)
    }

    /// `⟨φ_t|Ψ⟩` reconstructed from the trajectory at each requested time.
    pub fn conditioned_states(&self, times: &[f64]) -> Result<Vec<CVector>> {
        match self.clock {
            None => times
                .iter()
                .map(|&t| {
                    self.state_at(t)
                        .cloned()
                        .ok_or_else(|| Error::InvalidGrid(format!("t = {t} is not a grid point")))
                })
                .collect(),
            Some(clock) if self.is_periodic() => Ok(PeriodicSmearing::new(self, &clock).apply(times)),
            Some(clock) => Ok(ContinuumSmearing::new(self, clock.energy()).apply(times)),
        }
    }

    /// Trajectory CSV: `t`, real and imaginary part of each amplitude,
    /// `norm`, `denominator`.
    pub fn to_csv(&self) -> Result<String> {
        let denominators = pm_denominator_curve(self)?;
        let dim = self.schedule.total_dim();
        let mut out = String::from("t");
        for k in 0..dim {
            write!(out, ",re_{k},im_{k}").unwrap();
        }
        out.push_str(",norm,denominator\n");
        for (i, s) in self.states.iter().enumerate() {
            write!(out, "{:.12}", self.grid.point(i)).unwrap();
            for z in s.as_slice() {
                write!(out, ",{:.12e},{:.12e}", z.re, z.im).unwrap();
            }
            writeln!(out, ",{:.12e},{:.12e}", s.norm(), denominators[i]).unwrap();
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BornSeriesOptions {
    pub tol: f64,
    pub max_order: usize,
}

impl Default for BornSeriesOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_order: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BornSeriesReport {
    pub orders_used: usize,
    /// Max-over-grid norm of each order `1..=orders_used`.
    pub term_norms: Vec<f64>,
    pub converged: bool,
    /// Evolution residual of the returned trajectory.
    pub residual: f64,
}

impl BornSeriesReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Discretized series operator: `term_N(t_i) = −i Σ_j A_{ij} g_j` with
/// `g_j = w_j K_j term_{N−1}(t_j)`, where `A_{ij} = a[i − j]` (minus
/// `a[−j]` when `origin` is set, for the periodic kernel `F_τ(t)`).
struct SeriesOperator {
    n: usize,
    dim: usize,
    support: Vec<usize>,
    couplings: Vec<COperator>,
    table: Vec<C64>,
    k_min: i64,
    origin: bool,
}

impl SeriesOperator {
    fn new(
        grid: &TimeGrid,
        schedule: &InteractionSchedule,
        kernel_at: impl Fn(f64) -> C64 + Sync,
        origin: bool,
    ) -> Result<Self> {
        let n = grid.len();
        let h = grid.spacing();
        let weights = grid.trapezoid_weights();
        let mut support = Vec::new();
        let mut couplings = Vec::new();
        for j in 0..n {
            let k = schedule.cell_coupling(grid.point(j), h)?;
            if k.max_abs() > 0.0 {
                support.push(j);
                couplings.push(k.scale_real(weights[j]));
            }
        }
        let (j_min, j_max) = (
            support.first().copied().unwrap_or(0) as i64,
            support.last().copied().unwrap_or(0) as i64,
        );
        let k_min = -j_max;
        let k_max = n as i64 - 1 - j_min;
        let table: Vec<C64> = (k_min..=k_max).into_par_iter().map(|k| kernel_at(k as f64 * h)).collect();
        Ok(Self { n, dim: schedule.total_dim(), support, couplings, table, k_min, origin })
    }

    fn a(&self, k: i64) -> C64 {
        self.table[(k - self.k_min) as usize]
    }

    /// `g_j = w_j K_j v(t_j)` at the support nodes, flattened.
    fn sources(&self, values: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let mut g = Vec::with_capacity(self.support.len() * d);
        for (s, &j) in self.support.iter().enumerate() {
            let v = CVector::new(values[j * d..(j + 1) * d].to_vec()).expect("finite");
            g.extend_from_slice(self.couplings[s].apply(&v).as_slice());
        }
        g
    }

    /// `−i Σ_j A_{ij} g_j` at every node.
    fn integrate(&self, g: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let mut offset = vec![C64::new(0.0, 0.0); d];
        if self.origin {
            for (s, &j) in self.support.iter().enumerate() {
                let a = self.a(-(j as i64));
                for r in 0..d {
                    offset[r] += a * g[s * d + r];
                }
            }
        }
        let mut out = vec![C64::new(0.0, 0.0); self.n * d];
        out.par_chunks_mut(d).enumerate().for_each(|(i, acc)| {
            for (s, &j) in self.support.iter().enumerate() {
                let a = self.a(i as i64 - j as i64);
                for r in 0..d {
                    acc[r] += a * g[s * d + r];
                }
            }
            for r in 0..d {
                acc[r] = -I * (acc[r] - offset[r]);
            }
        });
        out
    }
}

struct SeriesResult {
    psi: Vec<C64>,
    term_norms: Vec<f64>,
    converged: bool,
    terms: Vec<Vec<C64>>,
}

fn max_node_norm(values: &[C64], d: usize) -> f64 {
    values
        .chunks(d)
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn run_series(op: &SeriesOperator, psi0: &CVector, opts: &BornSeriesOptions, keep_terms: bool) -> SeriesResult {
    let d = op.dim;
    let mut term: Vec<C64> = (0..op.n).flat_map(|_| psi0.as_slice().iter().copied()).collect();
    let mut psi = term.clone();
    let mut term_norms = Vec::new();
    let mut terms = Vec::new();
    if keep_terms {
        terms.push(term.clone());
    }
    let mut converged = op.support.is_empty();
    while !converged && term_norms.len() < opts.max_order {
        term = op.integrate(&op.sources(&term));
        let norm = max_node_norm(&term, d);
        for (p, t) in psi.iter_mut().zip(&term) {
            *p += t;
        }
        term_norms.push(norm);
        if keep_terms {
            terms.push(term.clone());
        }
        converged = norm < opts.tol;
    }
    SeriesResult { psi, term_norms, converged, terms }
}

fn unflatten(values: &[C64], d: usize) -> Vec<CVector> {
    values.chunks(d).map(|c| CVector::new(c.to_vec()).expect("finite")).collect()
}

fn check_series_input(schedule: &InteractionSchedule, psi0: &CVector) -> Result<()> {
    if !schedule.free_is_zero() {
        return Err(Error::UnsupportedSchedule(
            "the Born-series solver needs H_S folded into the schedule (see fold_free_hamiltonian)".into(),
        ));
    }
    if schedule.has_delta_terms() {
        return Err(Error::UnsupportedSchedule("delta windows are handled by delta_kick_closed_form".into()));
    }
    if psi0.dim() != schedule.total_dim() {
        return Err(Error::Dimension("initial state does not live on the schedule space".into()));
    }
    Ok(())
}

/// Margin the continuum solver keeps between window supports and grid ends.
pub fn solver_margin(kernel: Kernel) -> f64 {
    kernel.energy().map_or(0.0, |e| 4.0 * PI / e)
}

/// Uniform grid for [`born_series_solve`]: spacing `min(0.01/E, width/50)`
/// snapped to `1/m`, nodes on multiples of the spacing, covering the schedule
/// support (and `extra`, if given) plus the solver margin.
pub fn solver_grid(kernel: Kernel, schedule: &InteractionSchedule, extra: Option<(f64, f64)>) -> Result<TimeGrid> {
    let (mut lo, mut hi) = schedule.support().unwrap_or((0.0, 1.0));
    if let Some((a, b)) = extra {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let min_width = schedule.terms().iter().map(|t| t.window.width()).fold(f64::INFINITY, f64::min);
    let mut h = kernel.energy().map_or(0.01, |e| 0.01 / e).min(min_width / 50.0);
    h = 1.0 / (1.0 / h).ceil();
    let margin = solver_margin(kernel).max(h);
    let start = ((lo - margin) / h).floor() as i64;
    let end = ((hi + margin) / h).ceil() as i64;
    TimeGrid::from_step(start as f64 * h, h, (end - start + 1) as usize)
}

/// Born-series solution on `grid`, truncated when an order's max-over-grid
/// norm drops below `opts.tol`. Non-convergence is reported in the report,
/// not as an error.
pub fn born_series_solve(
    kernel: Kernel,
    schedule: &InteractionSchedule,
    psi0: &CVector,
    grid: &TimeGrid,
    opts: &BornSeriesOptions,
) -> Result<(Trajectory, BornSeriesReport)> {
    check_series_input(schedule, psi0)?;
    if let Some((lo, hi)) = schedule.support() {
        let margin = solver_margin(kernel);
        let slack = 1e-9 * grid.spacing();
        if grid.t_min() > lo - margin + slack || grid.t_max() < hi + margin - slack {
            return Err(Error::InvalidGrid(format!(
                "grid [{}, {}] must cover the schedule support [{lo}, {hi}] with margin {margin}",
                grid.t_min(),
                grid.t_max()
            )));
        }
    }
    let op = SeriesOperator::new(grid, schedule, |t| C64::new(kernel.cumulative(t), 0.0), false)?;
    let result = run_series(&op, psi0, opts, false);
    let sources = unflatten(&op.sources(&result.psi), op.dim);
    let clock = match kernel {
        Kernel::Ideal => None,
        Kernel::Finite(e) => Some(ClockModel::continuum(e)?),
    };
    let mut trajectory = Trajectory::from_states(*grid, unflatten(&result.psi, op.dim), clock, kernel, schedule.clone())?;
    trajectory.nystrom = Some(Nystrom { psi0: psi0.clone(), nodes: op.support.clone(), sources });
    let residual = evolution_residual(&trajectory)?;
    let report = BornSeriesReport {
        orders_used: result.term_norms.len(),
        term_norms: result.term_norms,
        converged: result.converged,
        residual,
    };
    Ok((trajectory, report))
}

/// The individual series orders `0..=orders` at every grid node.
pub fn born_series_terms(
    kernel: Kernel,
    schedule: &InteractionSchedule,
    psi0: &CVector,
    grid: &TimeGrid,
    orders: usize,
) -> Result<Vec<Vec<CVector>>> {
    check_series_input(schedule, psi0)?;
    let op = SeriesOperator::new(grid, schedule, |t| C64::new(kernel.cumulative(t), 0.0), false)?;
    let opts = BornSeriesOptions { tol: 0.0, max_order: orders };
    let result = run_series(&op, psi0, &opts, true);
    let mut terms: Vec<Vec<CVector>> = result.terms.iter().map(|t| unflatten(t, op.dim)).collect();
    while terms.len() <= orders {
        terms.push(vec![CVector::zeros(op.dim); grid.len()]);
    }
    Ok(terms)
}

/// Max over interior nodes of
/// `‖i Δψ/Δt − H_S ψ(t) − Σ_j w_j f(t − t_j) K(t_j) ψ(t_j)‖`.
///
/// For the ideal clock `f` is a delta and the memory term collapses to the
/// local `K(t)ψ(t)`; nodes next to a coupling discontinuity are skipped.
pub fn evolution_residual(trajectory: &Trajectory) -> Result<f64> {
    let grid = trajectory.grid();
    let schedule = trajectory.schedule();
    let (n, h) = (grid.len(), grid.spacing());
    if n < 3 {
        return Err(Error::InvalidGrid("need at least 3 points for central differences".into()));
    }
    let states = trajectory.states();
    let free = schedule.free_extended();
    let derivative = |i: usize| (&states[i + 1] - &states[i - 1]).scale(C64::new(0.0, 1.0 / (2.0 * h)));
    let residuals: Vec<f64> = match trajectory.kernel() {
        Kernel::Ideal => {
            let k: Vec<COperator> = (0..n).map(|i| schedule.coupling_at(grid.point(i))).collect::<Result<_>>()?;
            (1..n - 1)
                .into_par_iter()
                .filter(|&i| k[i - 1] == k[i] && k[i] == k[i + 1])
                .map(|i| (&derivative(i) - &k[i].apply(&states[i])).norm())
                .collect()
        }
        Kernel::Finite(e) => {
            let op = SeriesOperator::new(grid, schedule, |t| C64::new(crate::clock::overlap_kernel_f(e, t), 0.0), false)?;
            let flat: Vec<C64> = states.iter().flat_map(|s| s.as_slice().iter().copied()).collect();
            // integrate() returns −i Σ f g; multiply by i to recover Σ f g.
            let memory = unflatten(&op.integrate(&op.sources(&flat)), op.dim);
            (1..n - 1)
                .into_par_iter()
                .map(|i| {
                    let rhs = &free.apply(&states[i]) + &memory[i].scale(I);
                    (&derivative(i) - &rhs).norm()
                })
                .collect()
        }
    };
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

/// `M(F) = 1 − 2iF K(2 + iK)⁻¹`, the resummed Born series for a kick
/// `K δ(t − τ)` read at a time where the cumulative kernel equals `F`.
///
/// The closed form is cross-checked against the 50-term partial sum
/// `1 + 2F Σ_{N≥1} (−iK/2)^N` before it is returned.
pub fn delta_kick_closed_form(k: &COperator, f_value: f64) -> Result<COperator> {
    let eig = k.eigh()?;
    let radius = eig.values.iter().fold(0.0f64, |m, &l| m.max(0.5 * l.abs()));
    if radius >= 1.0 {
        return Err(Error::SeriesDivergence(radius));
    }
    let closed = eig.apply_function(|l| C64::new(1.0, 0.0) - C64::new(0.0, 2.0 * f_value * l) / C64::new(2.0, l));
    let series = delta_kick_series(k, f_value, 50);
    let bound = 2.0 * f_value.abs() * radius.powi(51) / (1.0 - radius) * k.dim() as f64 + 1e-12;
    let mismatch = closed.max_abs_diff(&series);
    if mismatch > bound {
        return Err(Error::InvalidParameter(format!(
            "closed form disagrees with the series oracle by {mismatch:e} (bound {bound:e})"
        )));
    }
    Ok(closed)
}

/// Partial sum `1 + 2F Σ_{N=1}^{terms} (−iK/2)^N`.
pub fn delta_kick_series(k: &COperator, f_value: f64, terms: usize) -> COperator {
    let step = k.scale(C64::new(0.0, -0.5));
    let mut power = COperator::identity(k.dim());
    let mut sum = COperator::zeros(k.dim());
    for _ in 0..terms {
        power = &power * &step;
        sum = &sum + &power;
    }
    &COperator::identity(k.dim()) + &sum.scale_real(2.0 * f_value)
}

/// Exact ideal-clock trajectory: free evolution under `H_S`, piecewise-exact
/// propagation through indicator windows, sub-stepped propagation through
/// Gaussian windows, and instantaneous unitaries for delta windows
/// (`e^{−i n K}` with `n` the window normalization) and for `events`.
///
/// `psi0` is the state at `t = 0` of the freely evolving system; an event at
/// a grid time is already applied in the state stored there.
pub fn pm_ideal_history(
    schedule: &InteractionSchedule,
    events: &[MeasurementEvent],
    psi0: &CVector,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let states = ideal_states(schedule, events, psi0, &grid.points())?;
    Trajectory::from_states(*grid, states, None, Kernel::Ideal, schedule.clone())
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Mark {
    Event(usize),
    Break,
    Query(usize),
}

/// Ideal-clock states at sorted `times`.
pub fn ideal_states(
    schedule: &InteractionSchedule,
    events: &[MeasurementEvent],
    psi0: &CVector,
    times: &[f64],
) -> Result<Vec<CVector>> {
    if psi0.dim() != schedule.total_dim() {
        return Err(Error::Dimension("initial state does not live on the schedule space".into()));
    }
    let mut all_events: Vec<MeasurementEvent> = events.to_vec();
    let mut smooth = InteractionSchedule::new(schedule.free_hamiltonian().clone(), schedule.ancilla_dims().to_vec())?;
    let mut breaks = Vec::new();
    for term in schedule.terms() {
        match term.window.shape() {
            WindowShape::Delta { at } => all_events.push(MeasurementEvent {
                time: term.center + at,
                unitary: expm_hermitian_generator(&term.coupling, term.window.normalization())?,
            }),
            WindowShape::Indicator { .. } => {
                let (lo, hi) = term.support();
                breaks.extend([lo, hi]);
                smooth = smooth.with_term(term.window, term.center, term.coupling.clone())?;
            }
            WindowShape::Gaussian { sigma, .. } => {
                let (lo, hi) = term.support();
                let steps = ((hi - lo) / (sigma / 50.0)).ceil() as usize;
                breaks.extend((0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64));
                smooth = smooth.with_term(term.window, term.center, term.coupling.clone())?;
            }
        }
    }
    for e in &all_events {
        if e.unitary.dim() != schedule.total_dim() {
            return Err(Error::Dimension("event unitary does not act on the schedule space".into()));
        }
        e.unitary.ensure_unitary(1e-10)?;
    }
    all_events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    if let Some(w) = all_events.windows(2).find(|w| (w[1].time - w[0].time).abs() < 1e-12) {
        return Err(Error::CoincidentEvents(w[0].time));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGrid("query times must be sorted".into()));
    }

    let mut marks: Vec<(f64, Mark)> = Vec::new();
    marks.extend(all_events.iter().enumerate().map(|(k, e)| (e.time, Mark::Event(k))));
    marks.extend(breaks.iter().map(|&t| (t, Mark::Break)));
    marks.extend(times.iter().enumerate().map(|(k, &t)| (t, Mark::Query(k))));
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut t_now = marks.first().map_or(0.0, |m| m.0);
    let free = smooth.free_extended().eigh()?;
    let mut state = free.propagator(t_now).apply(psi0);
    let mut cache: HashMap<Vec<u64>, HermitianEigen> = HashMap::new();
    let mut out = vec![CVector::zeros(psi0.dim()); times.len()];
    for (t, mark) in marks {
        if t > t_now {
            let mid = 0.5 * (t + t_now);
            let h = smooth.coupling_at(mid)?;
            let key: Vec<u64> = h.as_matrix().iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
            if !cache.contains_key(&key) {
                cache.insert(key.clone(), h.eigh()?);
            }
            state = cache[&key].propagator(t - t_now).apply(&state);
            t_now = t;
        }
        match mark {
            Mark::Event(k) => state = all_events[k].unitary.apply(&state),
            Mark::Query(k) => out[k] = state.clone(),
            Mark::Break => {}
        }
    }
    Ok(out)
}

/// Smearing `N_C ∫ dτ ⟨φ_t|φ_τ⟩ ψ(τ)` for the continuum clock.
///
/// With Nyström data the solution is extended far beyond the grid on a
/// coarser lattice (exact solution values, not extrapolation); the two
/// semi-infinite remainders use the constant end values with exact kernel
/// weights.
struct ContinuumSmearing {
    energy: f64,
    times: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<CVector>,
}

/// Half-width of the extension beyond the grid, in units of `1/E`.
const EXTENSION_SPAN: f64 = 1000.0;

impl ContinuumSmearing {
    fn new(trajectory: &Trajectory, energy: f64) -> Self {
        let grid = trajectory.grid();
        let h = grid.spacing();
        match &trajectory.nystrom {
            Some(ny) => {
                let stride = ((0.1 / energy) / h).floor().max(1.0) as usize;
                let step = stride as f64 * h;
                let ext_steps = (EXTENSION_SPAN / energy / step).ceil() as usize;
                let ext = ext_steps as f64 * step;
                let span_steps = ((grid.t_max() - grid.t_min()) / step).ceil() as usize;
                let count = 2 * ext_steps + span_steps + 1;
                let t0 = grid.t_min() - ext;
                let times: Vec<f64> = (0..count).map(|k| t0 + k as f64 * step).collect();
                let node_times: Vec<f64> = ny.nodes.iter().map(|&j| grid.point(j)).collect();
                let values: Vec<CVector> = times
                    .par_iter()
                    .map(|&t| {
                        let mut acc = ny.psi0.clone();
                        for (tj, g) in node_times.iter().zip(&ny.sources) {
                            let f = crate::clock::cumulative_kernel_f(energy, t - tj);
                            acc = &acc + &g.scale(C64::new(0.0, -f));
                        }
                        acc
                    })
                    .collect();
                let mut weights = vec![step; count];
                weights[0] *= 0.5;
                weights[count - 1] *= 0.5;
                Self { energy, times, weights, values }
            }
            None => Self {
                energy,
                times: grid.points(),
                weights: grid.trapezoid_weights(),
                values: trajectory.states().to_vec(),
            },
        }
    }

    fn apply(&self, queries: &[f64]) -> Vec<CVector> {
        let e = self.energy;
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        queries
            .par_iter()
            .map(|&t| {
                let mut acc = self.values[0].scale(C64::new(1.0 - crate::clock::cumulative_kernel_f(e, t - first), 0.0));
                acc = &acc + &self.values[self.values.len() - 1].scale(C64::new(crate::clock::cumulative_kernel_f(e, t - last), 0.0));
                let mut sum = vec![C64::new(0.0, 0.0); acc.dim()];
                for ((&tk, &w), v) in self.times.iter().zip(&self.weights).zip(&self.values) {
                    let c = w * crate::clock::overlap_kernel_f(e, t - tk);
                    for (s, z) in sum.iter_mut().zip(v.as_slice()) {
                        *s += c * z;
                    }
                }
                &acc + &CVector::new(sum).expect("finite")
            })
            .collect()
    }
}

/// Finite-sum reconstruction `N_C Σ_j w_j ⟨φ_t|φ_{τ_j}⟩ ψ(τ_j)` for a
/// periodic clock over one period.
struct PeriodicSmearing<'a> {
    clock: ClockModel,
    trajectory: &'a Trajectory,
}

impl<'a> PeriodicSmearing<'a> {
    fn new(trajectory: &'a Trajectory, clock: &ClockModel) -> Self {
        Self { clock: *clock, trajectory }
    }

    fn apply(&self, queries: &[f64]) -> Vec<CVector> {
        let grid = self.trajectory.grid();
        let weights = periodic_weights(grid);
        let taus = grid.points();
        queries
            .par_iter()
            .map(|&t| {
                let d = self.trajectory.schedule().total_dim();
                let mut sum = vec![C64::new(0.0, 0.0); d];
                for ((&tau, &w), v) in taus.iter().zip(&weights).zip(self.trajectory.states()) {
                    let c = self.clock.scaled_overlap(t, tau) * w;
                    for (s, z) in sum.iter_mut().zip(v.as_slice()) {
                        *s += c * z;
                    }
                }
                CVector::new(sum).expect("finite")
            })
            .collect()
    }
}

/// Trapezoid weights on `[0, T]`; for a periodic integrand this is the
/// rectangle rule over one period.
fn periodic_weights(grid: &TimeGrid) -> Vec<f64> {
    grid.trapezoid_weights()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PmProbability {
    pub probability: f64,
    /// `⟨Ψ|(|φ_t⟩⟨φ_t| ⊗ 1)|Ψ⟩`.
    pub denominator: f64,
}

/// Conditional probability of ancilla outcomes at clock time `t`:
/// `⟨Ψ|(|φ_t⟩⟨φ_t| ⊗ 1 ⊗ |a⟩⟨a|)|Ψ⟩ / ⟨Ψ|(|φ_t⟩⟨φ_t| ⊗ 1)|Ψ⟩`.
///
/// `outcomes` lists `(ancilla index, outcome)` pairs, all of which must hold.
pub fn pm_probability(trajectory: &Trajectory, outcomes: &[(usize, usize)], t: f64) -> Result<PmProbability> {
    let state = trajectory.conditioned_states(&[t])?.remove(0);
    probability_from_state(trajectory, &state, outcomes, t)
}

/// [`pm_probability`] at every grid time.
pub fn pm_probability_curve(trajectory: &Trajectory, outcomes: &[(usize, usize)]) -> Result<Vec<PmProbability>> {
    let times = trajectory.grid().points();
    let states = trajectory.conditioned_states(&times)?;
    times.iter().zip(&states).map(|(&t, s)| probability_from_state(trajectory, s, outcomes, t)).collect()
}

/// Denominator `‖⟨φ_t|Ψ⟩‖²` at every grid time.
pub fn pm_denominator_curve(trajectory: &Trajectory) -> Result<Vec<f64>> {
    Ok(trajectory.conditioned_states(&trajectory.grid().points())?.iter().map(CVector::norm_sqr).collect())
}

fn probability_from_state(trajectory: &Trajectory, state: &CVector, outcomes: &[(usize, usize)], t: f64) -> Result<PmProbability> {
    let dims = trajectory.dims();
    let mut constraints = Vec::with_capacity(outcomes.len());
    for &(ancilla, a) in outcomes {
        if ancilla + 1 >= dims.len() || a >= dims[ancilla + 1] {
            return Err(Error::InvalidParameter(format!("no outcome {a} on ancilla {ancilla}")));
        }
        constraints.push((ancilla + 1, a));
    }
    let denominator = state.norm_sqr();
    if denominator < 1e-14 {
        return Err(Error::Unreachable { t, denominator });
    }
    Ok(PmProbability { probability: outcome_weight(state, &dims, &constraints) / denominator, denominator })
}

/// Max over sample times of `‖N_C Σ_j w_j f(t − t_j) ψ(t_j) − ψ(t)‖`: does the
/// trajectory reproduce itself when smeared with the clock overlap?
pub fn history_roundtrip_check(trajectory: &Trajectory) -> Result<f64> {
    if trajectory.clock().is_none() {
        // f is a delta: the smearing is the identity.
        return Ok(0.0);
    }
    let grid = trajectory.grid();
    let samples = 64.min(grid.len());
    let idx: Vec<usize> = (0..samples).map(|k| k * (grid.len() - 1) / (samples - 1).max(1)).collect();
    let times: Vec<f64> = idx.iter().map(|&i| grid.point(i)).collect();
    let rebuilt = trajectory.conditioned_states(&times)?;
    Ok(idx
        .iter()
        .zip(&rebuilt)
        .map(|(&i, r)| (r - &trajectory.states()[i]).norm())
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeriodicOptions {
    pub tol: f64,
    pub max_order: usize,
    /// `Kernel::Ideal` uses the step kernel `Θ(t − τ)`.
    pub ideal: bool,
    /// Grid points over `[0, T]`; chosen from the clock energy if `None`.
    pub points: Option<usize>,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_order: 40, ideal: false, points: None }
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicSolution {
    pub trajectory: Trajectory,
    pub report: BornSeriesReport,
    /// `‖ψ(0) − N_C ∫_0^T dτ ⟨φ_0|φ_τ⟩ ψ(τ)‖`.
    pub periodicity_residual: f64,
}

/// `A(x) = (N_C/d) Σ_n ∫_0^x e^{i e_n u} du`, so that
/// `F_τ(t) = N_C ∫_0^t ⟨φ_σ|φ_τ⟩ dσ = A(t − τ) − A(−τ)`.
fn periodic_antiderivative(clock: &ClockModel, levels: &[f64], x: f64) -> C64 {
    let scale = clock.normalization() / levels.len() as f64;
    levels
        .iter()
        .map(|&e| if e == 0.0 { C64::new(x, 0.0) } else { (C64::from_polar(1.0, e * x) - 1.0) / C64::new(0.0, e) })
        .sum::<C64>()
        * scale
}

/// Born series for a periodic clock over one period `[0, T]`, with kernel
/// `F_τ(t)` and initial condition `ψ(0) = ψ₀`.
pub fn periodic_pm_solve(
    clock: &ClockModel,
    schedule: &InteractionSchedule,
    psi0: &CVector,
    opts: &PeriodicOptions,
) -> Result<PeriodicSolution> {
    if clock.kind() != ClockKind::PeriodicFinite {
        return Err(Error::UnsupportedClock("periodic_pm_solve needs a PeriodicFinite clock".into()));
    }
    check_series_input(schedule, psi0)?;
    let period = clock.period().unwrap();
    if let Some((lo, hi)) = schedule.support() {
        if lo < 0.0 || hi > period {
            return Err(Error::UnsupportedSchedule(format!("windows [{lo}, {hi}] leave the period [0, {period}]")));
        }
    }
    let points = opts.points.unwrap_or_else(|| (period / (0.01 / clock.energy())).ceil() as usize + 1);
    let grid = TimeGrid::new(0.0, period, points)?;
    let levels = clock.levels()?;
    let op = if opts.ideal {
        SeriesOperator::new(&grid, schedule, |x| C64::new(crate::clock::ideal_step(x), 0.0), true)?
    } else {
        SeriesOperator::new(&grid, schedule, |x| periodic_antiderivative(clock, &levels, x), true)?
    };
    let result = run_series(&op, psi0, &BornSeriesOptions { tol: opts.tol, max_order: opts.max_order }, false);
    let kernel = if opts.ideal { Kernel::Ideal } else { Kernel::Finite(clock.energy()) };
    let trajectory = Trajectory::from_states(grid, unflatten(&result.psi, op.dim), Some(*clock), kernel, schedule.clone())?;
    let rebuilt = trajectory.conditioned_states(&[0.0])?.remove(0);
    let periodicity_residual = (&trajectory.states()[0] - &rebuilt).norm();
    let report = BornSeriesReport {
        orders_used: result.term_norms.len(),
        term_norms: result.term_norms,
        converged: result.converged,
        residual: periodicity_residual,
    };
    Ok(PeriodicSolution { trajectory, report, periodicity_residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TranslationCheck {
    /// Direct PM conditional probability.
    pub lhs: f64,
    /// Quotient of twirled sandwiched operators against the TO history state.
    pub rhs: f64,
}

/// Compare the PM probability of ancilla outcome `a` at clock time `t` with
/// the same number obtained from twirled operators.
///
/// The PM solution map `Π: ψ₀ ↦ Ψ` is built column by column on S ⊗ A; the
/// operator `B = Π†(|φ_t⟩⟨φ_t| ⊗ 1 ⊗ |a⟩⟨a|)Π` is lifted to
/// `|φ_0⟩⟨φ_0| ⊗ B`, twirled, and evaluated on the TO history state of
/// `ψ₀ ⊗ |r⟩`.
pub fn pm_to_translation_check(
    clock: &ClockModel,
    schedule: &InteractionSchedule,
    psi_s: &CVector,
    a: usize,
    t: f64,
    opts: &PeriodicOptions,
) -> Result<TranslationCheck> {
    if schedule.ancilla_dims().len() != 1 {
        return Err(Error::UnsupportedSchedule("translation check expects exactly one ancilla".into()));
    }
    let d = clock.dim().ok_or_else(|| Error::UnsupportedClock("translation check needs a finite clock".into()))?;
    let dims = schedule.dims();
    let total = schedule.total_dim();
    let psi0 = ready_state(psi_s, schedule.ancilla_dims());

    let solve = |v: &CVector| periodic_pm_solve(clock, schedule, v, opts);
    let direct = solve(&psi0)?;
    let lhs = pm_probability(&direct.trajectory, &[(0, a)], t)?.probability;

    // Columns of Π.
    let weights = periodic_weights(direct.trajectory.grid());
    let taus = direct.trajectory.grid().points();
    let clock_states: Vec<CVector> = taus.iter().map(|&tau| clock.clock_state(tau)).collect::<Result<_>>()?;
    let mut columns = Vec::with_capacity(total);
    for m in 0..total {
        let sol = if CVector::basis(total, m) == psi0 { direct.clone() } else { solve(&CVector::basis(total, m))? };
        let mut col = CVector::zeros(d * total);
        for ((phi, &w), psi) in clock_states.iter().zip(&weights).zip(sol.trajectory.states()) {
            col = &col + &phi.kron(psi).scale(C64::new(clock.normalization() * w, 0.0));
        }
        columns.push(col);
    }
    let phi_t = clock.clock_state(t)?;
    let b = |with_outcome: bool| -> Result<COperator> {
        let reduced: Vec<CVector> = columns.iter().map(|c| contract_leading(&phi_t, c)).collect::<Result<_>>()?;
        Ok(COperator::from_fn(total, |i, j| {
            reduced[i]
                .as_slice()
                .iter()
                .zip(reduced[j].as_slice())
                .enumerate()
                .filter(|(k, _)| !with_outcome || crate::tensor::factor_digit(*k, &dims, 1) == a)
                .map(|(_, (x, y))| x.conj() * y)
                .sum()
        }))
    };
    let h_ext = schedule.free_extended();
    let spectrum = ConstraintSpectrum::new(clock, &h_ext)?;
    let anchor = COperator::projector(&clock.clock_state(0.0)?);
    let eta = inverse_reduction(clock, &h_ext, &psi0, 0.0)?;
    let expect = |op: COperator| -> Result<f64> {
        let twirled = twirl_operator(&spectrum, &kron(&anchor, &op)?);
        Ok(eta.inner(&twirled.apply(&eta)).re)
    };
    let rhs = expect(b(true)?)? / expect(b(false)?)?;
    Ok(TranslationCheck { lhs, rhs })
}
