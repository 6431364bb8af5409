//! Clock models, clock states and the overlap kernels.
//!
//! A clock with flat energy spectrum on `[−E, E]` has overlap kernel
//! `f(t) = N_C⟨φ_t|φ_0⟩ = sin(E t)/(π t)` and cumulative kernel
//! `F(t) = ∫_{−∞}^t f = 1/2 + Si(E t)/π`, a smoothed Heaviside step.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::sync::RwLock;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{COperator, CVector};

/// Sine integral `Si(x) = ∫_0^x sin(u)/u du`.
///
/// Power series for `|x| ≤ 8`, continued fraction for `E₁(ix)` beyond.
pub fn sine_integral(x: f64) -> f64 {
    let ax = x.abs();
    let si = if ax <= 8.0 { si_series(ax) } else { si_continued_fraction(ax) };
    si.copysign(x)
}

fn si_series(x: f64) -> f64 {
    let x2 = x * x;
    // term_k = (−1)^k x^{2k+1} / (2k+1)!
    let mut term = x;
    let mut sum = x;
    let mut k = 0;
    loop {
        k += 1;
        let n = (2 * k) as f64;
        term *= -x2 / (n * (n + 1.0));
        let contrib = term / (n + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-17 * sum.abs().max(1e-300) {
            return sum;
        }
    }
}

fn si_continued_fraction(x: f64) -> f64 {
    // Modified Lentz evaluation of E₁(ix); Si(x) = π/2 + Im[e^{−ix} h].
    let tiny = 1e-300;
    let mut b = C64::new(1.0, x);
    let mut c = C64::new(1.0 / tiny, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..1000 {
        let a = -((i - 1) * (i - 1)) as f64;
        b += 2.0;
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    let h = C64::from_polar(1.0, -x) * h;
    FRAC_PI_2 + h.im
}

/// `f(dt) = sin(E dt)/(π dt)`, with the limit `E/π` for `|dt| < 1e−12`.
pub fn overlap_kernel_f(energy: f64, dt: f64) -> f64 {
    if dt.abs() < 1e-12 {
        energy / PI
    } else {
        (energy * dt).sin() / (PI * dt)
    }
}

/// `F(t) = 1/2 + Si(E t)/π`.
pub fn cumulative_kernel_f(energy: f64, t: f64) -> f64 {
    0.5 + sine_integral(energy * t) / PI
}

/// Heaviside step with `Θ(0) = 1/2`, the `E → ∞` limit of `F`.
pub fn ideal_step(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Which cumulative kernel a solver integrates against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// Perfect clock: `F = Θ`, `f = δ`.
    Ideal,
    /// Flat spectrum on `[−E, E]`.
    Finite(f64),
}

impl Kernel {
    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            Kernel::Ideal => ideal_step(t),
            Kernel::Finite(e) => cumulative_kernel_f(e, t),
        }
    }

    /// Overlap kernel; `None` for the ideal clock, where it is a delta.
    pub fn overlap(&self, dt: f64) -> Option<f64> {
        match *self {
            Kernel::Ideal => None,
            Kernel::Finite(e) => Some(overlap_kernel_f(e, dt)),
        }
    }

    pub fn energy(&self) -> Option<f64> {
        match *self {
            Kernel::Ideal => None,
            Kernel::Finite(e) => Some(e),
        }
    }
}

const CACHE_QUANTUM: f64 = 1e-12;

/// Memoized `(f, F)` evaluation keyed by offsets quantized to 1e−12.
///
/// Offsets are snapped to the quantization lattice before evaluation, so a
/// cached value and a fresh evaluation agree bit for bit.
#[derive(Debug)]
pub struct KernelEvaluator {
    energy: f64,
    cache: RwLock<HashMap<i64, (f64, f64)>>,
}

impl KernelEvaluator {
    pub fn new(energy: f64) -> Result<Self> {
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::InvalidParameter(format!("clock energy must be positive, got {energy}")));
        }
        Ok(Self { energy, cache: RwLock::new(HashMap::new()) })
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    fn key(dt: f64) -> i64 {
        (dt / CACHE_QUANTUM).round() as i64
    }

    fn compute(&self, key: i64) -> (f64, f64) {
        let dt = key as f64 * CACHE_QUANTUM;
        (overlap_kernel_f(self.energy, dt), cumulative_kernel_f(self.energy, dt))
    }

    pub fn get(&self, dt: f64) -> (f64, f64) {
        let key = Self::key(dt);
        if let Some(&v) = self.cache.read().unwrap().get(&key) {
            return v;
        }
        let v = self.compute(key);
        // A racing writer computes the identical value, so either insert wins.
        self.cache.write().unwrap().entry(key).or_insert(v);
        v
    }

    pub fn f(&self, dt: f64) -> f64 {
        self.get(dt).0
    }

    pub fn cumulative(&self, dt: f64) -> f64 {
        self.get(dt).1
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest deviation between cached entries and fresh evaluations.
    pub fn verify_cache(&self) -> f64 {
        let cache = self.cache.read().unwrap();
        cache
            .iter()
            .map(|(&k, &(f, big_f))| {
                let (f2, big_f2) = self.compute(k);
                (f - f2).abs().max((big_f - big_f2).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    ContinuumBounded,
    PeriodicFinite,
    DiscreteOrthogonal,
}

/// Spectral data of a clock with flat energy density.
///
/// Finite clocks use the equally spaced levels `e_n = Δ·(n − ⌊(d−1)/2⌋)`:
/// `Δ = 2E/(d−1)` for [`ClockKind::PeriodicFinite`] and `Δ = 2E/d` for
/// [`ClockKind::DiscreteOrthogonal`]. Either way a zero level is present and
/// the clock is exactly periodic with period `2π/Δ`. For odd `d` the periodic
/// levels span `[−E, E]`; for even `d` the band sits half a spacing higher.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    kind: ClockKind,
    #[serde(rename = "E")]
    energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl ClockModel {
    pub fn continuum(energy: f64) -> Result<Self> {
        Self::new(ClockKind::ContinuumBounded, energy, None)
    }

    pub fn periodic(energy: f64, dim: usize) -> Result<Self> {
        Self::new(ClockKind::PeriodicFinite, energy, Some(dim))
    }

    pub fn discrete(energy: f64, dim: usize) -> Result<Self> {
        Self::new(ClockKind::DiscreteOrthogonal, energy, Some(dim))
    }

    pub fn new(kind: ClockKind, energy: f64, dim: Option<usize>) -> Result<Self> {
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::InvalidParameter(format!("clock energy must be positive, got {energy}")));
        }
        match (kind, dim) {
            (ClockKind::ContinuumBounded, _) => Ok(Self { kind, energy, dim: None }),
            (_, Some(d)) if d >= 2 => Ok(Self { kind, energy, dim: Some(d) }),
            (_, d) => Err(Error::InvalidParameter(format!("finite clock needs dimension >= 2, got {d:?}"))),
        }
    }

    pub fn kind(&self) -> ClockKind {
        self.kind
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::Finite(self.energy)
    }

    fn finite_dim(&self) -> Result<usize> {
        self.dim.ok_or_else(|| {
            Error::UnsupportedClock("the continuum clock has no finite-dimensional representation".into())
        })
    }

    pub fn level_spacing(&self) -> Option<f64> {
        let d = self.dim? as f64;
        Some(match self.kind {
            ClockKind::PeriodicFinite => 2.0 * self.energy / (d - 1.0),
            _ => 2.0 * self.energy / d,
        })
    }

    pub fn levels(&self) -> Result<Vec<f64>> {
        let d = self.finite_dim()?;
        let delta = self.level_spacing().unwrap();
        let offset = ((d - 1) / 2) as f64;
        Ok((0..d).map(|n| delta * (n as f64 - offset)).collect())
    }

    pub fn period(&self) -> Option<f64> {
        self.level_spacing().map(|delta| 2.0 * PI / delta)
    }

    /// Spacing of mutually orthogonal clock times, `π/E`.
    pub fn orthogonal_step(&self) -> f64 {
        PI / self.energy
    }

    /// `N_C`, fixing `N_C ∫ dt |φ_t⟩⟨φ_t| = 1` over one period (or ℝ).
    pub fn normalization(&self) -> f64 {
        match (self.dim, self.period()) {
            (Some(d), Some(t)) => d as f64 / t,
            _ => self.energy / PI,
        }
    }

    pub fn hamiltonian(&self) -> Result<COperator> {
        Ok(COperator::real_diagonal(&self.levels()?))
    }

    /// `|φ_t⟩` in the energy basis: components `e^{−i e_n t}/√d`.
    pub fn clock_state(&self, t: f64) -> Result<CVector> {
        let levels = self.levels()?;
        let norm = 1.0 / (levels.len() as f64).sqrt();
        CVector::new(levels.iter().map(|&e| C64::from_polar(norm, -e * t)).collect())
    }

    /// `N_C⟨φ_t|φ_s⟩`; for the continuum clock this is `f(t − s)`.
    pub fn scaled_overlap(&self, t: f64, s: f64) -> C64 {
        match self.levels() {
            Ok(levels) => {
                let scale = self.normalization() / levels.len() as f64;
                levels.iter().map(|&e| C64::from_polar(scale, e * (t - s))).sum()
            }
            Err(_) => C64::new(overlap_kernel_f(self.energy, t - s), 0.0),
        }
    }

    /// Width of `spectrum` relative to the clock band `2E`, and whether the
    /// spectrum fits inside `[−E, E]`.
    pub fn quality(&self, spectrum: &[f64]) -> ClockQuality {
        let lo = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ClockQuality {
            width_ratio: (hi - lo) / (2.0 * self.energy),
            in_band: lo >= -self.energy - 1e-12 && hi <= self.energy + 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClockQuality {
    pub width_ratio: f64,
    pub in_band: bool,
}

/// Uniform time grid `t_i = t_min + i·h`, `h = (t_max − t_min)/(n − 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_max <= t_min {
            return Err(Error::InvalidGrid(format!("need t_min < t_max, got [{t_min}, {t_max}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        Ok(Self { t_min, t_max, n })
    }

    /// `n` points starting at `t_min` with exact spacing `step`.
    pub fn from_step(t_min: f64, step: f64, n: usize) -> Result<Self> {
        Self::new(t_min, t_min + step * (n - 1) as f64, n)
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.t_max
        } else {
            self.t_min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    /// Index of the grid point within `1e−9·h` of `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_min) / self.spacing();
        let k = x.round();
        if k >= 0.0 && (k as usize) < self.n && (x - k).abs() < 1e-9 {
            Some(k as usize)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResolutionCheck {
    /// `‖N_C Σ_i w_i |φ_{t_i}⟩⟨φ_{t_i}| − 1‖_max`.
    pub deviation: f64,
    /// Whether the grid spans a full period of the clock.
    pub complete: bool,
}

/// Discretized resolution of the identity by clock states over `grid`.
///
/// A grid spanning exactly one period uses trapezoid weights; a grid ending
/// one step short of the period (the orthogonal lattice of a discrete clock)
/// uses uniform weights.
pub fn identity_resolution_check(clock: &ClockModel, grid: &TimeGrid) -> Result<ResolutionCheck> {
    let levels = clock.levels()?;
    let period = clock.period().unwrap();
    let (span, h) = (grid.t_max() - grid.t_min(), grid.spacing());
    let tol = 1e-9 * period;
    let (weights, complete) = if (span - period).abs() <= tol {
        (grid.trapezoid_weights(), true)
    } else if (span + h - period).abs() <= tol {
        (vec![h; grid.len()], true)
    } else {
        (grid.trapezoid_weights(), span >= period - tol)
    };
    let d = levels.len();
    let scale = clock.normalization() / d as f64;
    let times = grid.points();
    let mut deviation: f64 = 0.0;
    for m in 0..d {
        for n in 0..d {
            let entry: C64 = times
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| C64::from_polar(scale * w, -(levels[m] - levels[n]) * t))
                .sum();
            let target = if m == n { 1.0 } else { 0.0 };
            deviation = deviation.max((entry - target).norm());
        }
    }
    Ok(ResolutionCheck { deviation, complete })
}

/// `(f ∗ g)(t) = ∫ f(u) g(t − u) du` for the continuum clock.
///
/// Trapezoid rule on `[−L, L]` with the tails closed by freezing `g` at the
/// cut (weights `F(−L)` and `1 − F(L)`); the residual `O(1/L)` tail error is
/// removed by combining the `L` and `L/2` results.
pub fn overlap_convolution(energy: f64, g: impl Fn(f64) -> f64, t: f64, half_width: f64, points: usize) -> f64 {
    let truncated = |l: f64, n: usize| -> f64 {
        let h = 2.0 * l / (n - 1) as f64;
        let mut sum = 0.0;
        for k in 0..n {
            let u = -l + k as f64 * h;
            let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
            sum += w * overlap_kernel_f(energy, u) * g(t - u);
        }
        let low_tail = cumulative_kernel_f(energy, -l) * g(t + l);
        let high_tail = (1.0 - cumulative_kernel_f(energy, l)) * g(t - l);
        sum + low_tail + high_tail
    };
    2.0 * truncated(half_width, points) - truncated(0.5 * half_width, points / 2)
}

/// Kernel table with columns `t,f,F,E`.
pub fn kernel_table_csv(kernel: Kernel, grid: &TimeGrid) -> String {
    let mut out = String::from("t,f,F,E\n");
    let label = kernel.energy().map_or("inf".to_string(), |e| format!("{e}"));
    for t in grid.points() {
        let f = kernel.overlap(t).map_or("nan".to_string(), |v| format!("{v:.15e}"));
        writeln!(out, "{t:.12},{f},{:.15e},{label}", kernel.cumulative(t)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::expm_hermitian_generator;
    use proptest::prelude::*;

    /// Composite Simpson rule, the quadrature oracle for the kernels.
    fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for k in 1..n {
            s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn sinc(u: f64) -> f64 {
        if u == 0.0 {
            1.0
        } else {
            u.sin() / u
        }
    }

    #[test]
    fn sine_integral_against_quadrature() {
        for &x in &[0.1, 1.0, 2.5, 7.9, 8.0, 8.1, 12.0, 30.0, 100.0] {
            let oracle = simpson(sinc, 0.0, x, 20_000);
            assert!((sine_integral(x) - oracle).abs() < 1e-10, "x = {x}");
            assert_eq!(sine_integral(-x), -sine_integral(x));
        }
        assert_eq!(sine_integral(0.0), 0.0);
    }

    #[test]
    fn sine_integral_is_continuous_at_the_switch() {
        let below = sine_integral(8.0);
        let above = sine_integral(8.0 + 1e-12);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn overlap_kernel_examples() {
        assert!((overlap_kernel_f(PI, 0.0) - 1.0).abs() < 1e-15);
        assert!((overlap_kernel_f(PI, 1e-13) - 1.0).abs() < 1e-15);
        assert!(overlap_kernel_f(PI, 1.0).abs() < 1e-15);
        // (1/2π)∫_{−1}^{1} e^{i e π/2} de = (1/π)∫_0^1 cos(e π/2) de.
        let oracle = simpson(|e| (e * FRAC_PI_2).cos(), 0.0, 1.0, 1000) / PI;
        assert!((overlap_kernel_f(1.0, FRAC_PI_2) - oracle).abs() < 1e-12);
        assert!((oracle - 2.0 / (PI * PI)).abs() < 1e-12);
    }

    #[test]
    fn cumulative_kernel_examples() {
        assert_eq!(cumulative_kernel_f(3.0, 0.0), 0.5);
        // Oracle: 1/2 + ∫_0^5 sin(25u)/(πu) du by quadrature.
        let oracle = 0.5 + simpson(|u| 25.0 * sinc(25.0 * u) / PI, 0.0, 5.0, 200_000);
        let value = cumulative_kernel_f(25.0, 5.0);
        assert!((value - oracle).abs() < 1e-8);
        assert!((value - 1.0).abs() < 3e-3);
    }

    #[test]
    fn cumulative_kernel_matches_quadrature_of_f() {
        for &(e, t) in &[(1.0, 0.7), (5.0, -0.3), (2.0, 3.0)] {
            let oracle = 0.5 + simpson(|u| overlap_kernel_f(e, u), 0.0, t, 100_000);
            assert!((cumulative_kernel_f(e, t) - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn evaluator_cache_is_reproducible() {
        let ev = KernelEvaluator::new(5.0).unwrap();
        for k in 0..200 {
            let dt = -3.0 + 0.031 * k as f64;
            let (f, big_f) = ev.get(dt);
            assert_eq!((f, big_f), ev.get(dt));
            assert!((-0.1..=1.1).contains(&big_f));
        }
        assert_eq!(ev.len(), 200);
        assert!(ev.verify_cache() < 1e-12);
        assert!(KernelEvaluator::new(-1.0).is_err());
    }

    #[test]
    fn evaluator_concurrent_fill() {
        use rayon::prelude::*;
        let ev = KernelEvaluator::new(2.0).unwrap();
        let sums: Vec<f64> = (0..8)
            .into_par_iter()
            .map(|_| (0..500).map(|k| ev.cumulative(0.01 * k as f64)).sum())
            .collect();
        assert!(sums.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(ev.len(), 500);
    }

    #[test]
    fn clock_state_examples() {
        let clock = ClockModel::periodic(3.0, 8).unwrap();
        let s = clock.clock_state(0.0).unwrap();
        for k in 0..8 {
            assert!((s.get(k) - C64::new(1.0 / 8f64.sqrt(), 0.0)).norm() < 1e-15);
        }
        let hc = clock.hamiltonian().unwrap();
        let (t, shift) = (0.4, 1.3);
        let moved = expm_hermitian_generator(&hc, shift).unwrap().apply(&clock.clock_state(t).unwrap());
        assert!(moved.max_abs_diff(&clock.clock_state(t + shift).unwrap()) < 1e-12);

        let disc = ClockModel::discrete(2.0, 8).unwrap();
        let step = disc.orthogonal_step();
        for k in 1..8 {
            let o = disc.clock_state(0.0).unwrap().inner(&disc.clock_state(k as f64 * step).unwrap());
            assert!(o.norm() < 1e-12);
        }
        assert!(ClockModel::continuum(1.0).unwrap().clock_state(0.0).is_err());
    }

    #[test]
    fn periodic_levels_and_period() {
        let odd = ClockModel::periodic(2.0, 5).unwrap();
        assert_eq!(odd.levels().unwrap(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        for d in [4, 5, 32] {
            let clock = ClockModel::periodic(3.0, d).unwrap();
            let t = clock.period().unwrap();
            assert!((t - PI * (d as f64 - 1.0) / 3.0).abs() < 1e-12);
            let back = clock.clock_state(t).unwrap();
            assert!(back.max_abs_diff(&clock.clock_state(0.0).unwrap()) < 1e-12);
            let levels = clock.levels().unwrap();
            assert!(levels.contains(&0.0));
            // Even d shifts the band up by half a spacing to keep a zero level.
            let half = 0.5 * clock.level_spacing().unwrap();
            assert!((levels[d - 1] - levels[0] - 6.0).abs() < 1e-12);
            assert!(levels.iter().all(|&e| e >= -3.0 - 1e-12 && e <= 3.0 + half + 1e-12));
        }
    }

    #[test]
    fn identity_resolution_examples() {
        let disc = ClockModel::discrete(1.5, 8).unwrap();
        let lattice = TimeGrid::from_step(0.0, disc.orthogonal_step(), 8).unwrap();
        let r = identity_resolution_check(&disc, &lattice).unwrap();
        assert!(r.deviation < 1e-12 && r.complete);

        let per = ClockModel::periodic(1.5, 8).unwrap();
        let full = TimeGrid::new(0.0, per.period().unwrap(), 256).unwrap();
        let r = identity_resolution_check(&per, &full).unwrap();
        assert!(r.deviation < 1e-6 && r.complete);

        let half = TimeGrid::new(0.0, 0.5 * per.period().unwrap(), 256).unwrap();
        let r = identity_resolution_check(&per, &half).unwrap();
        assert!(r.deviation >= 0.1 && !r.complete);

        assert!(identity_resolution_check(&ClockModel::continuum(1.0).unwrap(), &full).is_err());
    }

    #[test]
    fn continuum_normalization_matches_kernel() {
        let clock = ClockModel::continuum(2.0).unwrap();
        assert_eq!(clock.normalization(), 2.0 / PI);
        assert_eq!(clock.scaled_overlap(0.3, 0.0).re, overlap_kernel_f(2.0, 0.3));
    }

    #[test]
    fn convolution_identities() {
        let e = 2.0;
        for &t in &[-1.0, 0.0, 0.5, 3.0] {
            let ff = overlap_convolution(e, |s| overlap_kernel_f(e, s), t, 400.0, 4000);
            assert!((ff - overlap_kernel_f(e, t)).abs() < 1e-5, "f*f at {t}");
            let fc = overlap_convolution(e, |s| cumulative_kernel_f(e, s), t, 400.0, 4000);
            assert!((fc - cumulative_kernel_f(e, t)).abs() < 1e-5, "f*F at {t}");
        }
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.index_of(0.5), Some(3));
        assert_eq!(g.index_of(0.3), None);
        assert!(TimeGrid::new(1.0, 1.0, 5).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn kernel_csv_layout() {
        let csv = kernel_table_csv(Kernel::Finite(1.0), &TimeGrid::new(-1.0, 1.0, 3).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,f,F,E");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("0.000000000000,"));
        assert!(lines[2].contains(",5.000000000000000e-1,1"));
    }

    proptest! {
        #[test]
        fn cumulative_kernel_symmetry(e in 0.1f64..50.0, t in -20.0f64..20.0) {
            let sum = cumulative_kernel_f(e, t) + cumulative_kernel_f(e, -t);
            prop_assert!((sum - 1.0).abs() < 1e-8);
        }

        #[test]
        fn cumulative_kernel_bounded(e in 0.1f64..50.0, t in -20.0f64..20.0) {
            let v = cumulative_kernel_f(e, t);
            prop_assert!((-0.1..=1.1).contains(&v));
        }

        #[test]
        fn periodic_overlap_is_covariant(t in -10.0f64..10.0, s in -10.0f64..10.0, k in -2i32..3) {
            let clock = ClockModel::periodic(2.0, 9).unwrap();
            let period = clock.period().unwrap();
            let a = clock.scaled_overlap(t, s).norm();
            let b = clock.scaled_overlap(t - s + k as f64 * period, 0.0).norm();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
