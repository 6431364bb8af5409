//! Expansion terms for two disjoint measurement windows.
//!
//! The second Born order at time `t` is `−Σ_{a,b} C_ab(t) K_a K_b ψ₀` with
//! `C_ab(t) = ∫∫ F(t − s) F(s − u) k_a(s) k_b(u) ds du`. With windows at
//! `τ₁ < τ₂`, `C_21` is the causal coefficient (`K₂` after `K₁`) and `C_12`
//! the acausal one, which vanishes exactly for the ideal kernel.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::clock::{Kernel, TimeGrid};
use crate::error::{Error, Result};
use crate::measurement::{WindowFunction, WindowShape};
use crate::tensor::{COperator, CVector};

/// Default node spacing on window supports.
pub const QUADRATURE_SPACING: f64 = 0.0025;

/// Threshold on `|acausal| / |causal|` above which the order is reported as
/// indefinite.
pub const INDEFINITE_RATIO: f64 = 1e-6;

/// Trapezoid nodes `(u, weight · k(u))` on the support of a window centred at
/// `center`, with spacing at most `spacing`.
fn window_nodes(window: &WindowFunction, center: f64, spacing: f64) -> Result<(f64, f64, Vec<f64>)> {
    if window.is_delta() {
        return Err(Error::InvalidParameter("delta windows have no quadrature".into()));
    }
    let (lo, hi) = window.support();
    let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    let weights = (0..=n)
        .map(|k| {
            let u = lo + k as f64 * h;
            // Indicators are open on the right; use the left limit at the end node.
            let value = match window.shape() {
                WindowShape::Indicator { .. } if k == n => window.value(u - 0.5 * h).unwrap(),
                _ => window.value(u).unwrap(),
            };
            let w = if k == 0 || k == n { 0.5 * h } else { h };
            w * value
        })
        .collect();
    Ok((lo + center, h, weights))
}

/// `|∫ k(t₁ − τ) F(t − t₁) dt₁|` at each `t`.
pub fn first_order_magnitude(kernel: Kernel, window: &WindowFunction, tau: f64, times: &[f64]) -> Result<Vec<f64>> {
    let (start, h, weights) = window_nodes(window, tau, QUADRATURE_SPACING)?;
    Ok(times
        .par_iter()
        .map(|&t| {
            weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * kernel.cumulative(t - start - k as f64 * h))
                .sum::<f64>()
                .abs()
        })
        .collect())
}

/// `C_ab(t) = ∫∫ F(t − s) F(s − u) k_a(s − τ_a) k_b(u − τ_b) ds du`.
pub fn pair_coefficient(
    kernel: Kernel,
    outer: (&WindowFunction, f64),
    inner: (&WindowFunction, f64),
    t: f64,
    spacing: f64,
) -> Result<f64> {
    let (s0, hs, ws) = window_nodes(outer.0, outer.1, spacing)?;
    let (u0, hu, wu) = window_nodes(inner.0, inner.1, spacing)?;
    let outer_f: Vec<f64> = (0..ws.len()).map(|i| ws[i] * kernel.cumulative(t - s0 - i as f64 * hs)).collect();
    let sum = |i: usize| -> f64 {
        let s = s0 + i as f64 * hs;
        wu.iter().enumerate().map(|(j, w)| w * kernel.cumulative(s - u0 - j as f64 * hu)).sum::<f64>() * outer_f[i]
    };
    // Collect before summing: a parallel float reduction is order-dependent.
    let rows: Vec<f64> = (0..ws.len()).into_par_iter().map(sum).collect();
    Ok(rows.iter().sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderAnalysis {
    /// `None` for the ideal kernel.
    #[serde(rename = "E")]
    pub energy: Option<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub window: WindowFunction,
    pub t_eval: f64,
    pub causal: C64,
    pub acausal: C64,
}

impl OrderAnalysis {
    /// `|acausal| / |causal|`.
    pub fn ratio(&self) -> f64 {
        self.acausal.norm() / self.causal.norm()
    }

    pub fn indefinite(&self) -> bool {
        self.ratio() > INDEFINITE_RATIO
    }
}

/// Causal and acausal coefficients for copies of `window` at `τ₁ < τ₂`.
pub fn analyze(kernel: Kernel, window: &WindowFunction, tau1: f64, tau2: f64, t: f64) -> Result<OrderAnalysis> {
    let (lo, hi) = window.support();
    if tau2 + lo < tau1 + hi {
        return Err(Error::InvalidParameter(format!(
            "windows at {tau1} and {tau2} overlap (support width {})",
            hi - lo
        )));
    }
    if t < tau2 + hi {
        return Err(Error::InvalidParameter(format!("t = {t} lies before the end of the second window")));
    }
    let causal = pair_coefficient(kernel, (window, tau2), (window, tau1), t, QUADRATURE_SPACING)?;
    let acausal = acausal_coefficient(kernel, window, tau1, tau2, t)?;
    Ok(OrderAnalysis {
        energy: kernel.energy(),
        tau1,
        tau2,
        window: *window,
        t_eval: t,
        causal: C64::new(causal, 0.0),
        acausal,
    })
}

/// `∫∫ F(t − t₁) F(t₁ − t₂) k(t₁ − τ₁) k(t₂ − τ₂)`: the coefficient of
/// `K₁K₂`, the later window acting first.
pub fn acausal_coefficient(kernel: Kernel, window: &WindowFunction, tau1: f64, tau2: f64, t: f64) -> Result<C64> {
    Ok(C64::new(pair_coefficient(kernel, (window, tau1), (window, tau2), t, QUADRATURE_SPACING)?, 0.0))
}

/// Coefficient sweep over clock energies, in the order given.
pub fn coefficient_scan(energies: &[f64], window: &WindowFunction, tau1: f64, tau2: f64, t: f64) -> Result<Vec<OrderAnalysis>> {
    energies.par_iter().map(|&e| analyze(Kernel::Finite(e), window, tau1, tau2, t)).collect()
}

/// Columns `E,causal,acausal,ratio`.
pub fn coefficient_scan_csv(rows: &[OrderAnalysis]) -> String {
    let mut out = String::from("E,causal,acausal,ratio\n");
    for r in rows {
        let e = r.energy.map_or("inf".to_string(), |e| format!("{e}"));
        writeln!(out, "{e},{:.12e},{:.12e},{:.12e}", r.causal.re, r.acausal.re, r.ratio()).unwrap();
    }
    out
}

/// `F(t − t₁)·F(t₁ − t₂)` on `t1s × t2s`, rows indexed by `t₁`.
pub fn heatmap_product(kernel: Kernel, t: f64, t1s: &[f64], t2s: &[f64]) -> Vec<Vec<f64>> {
    t1s.par_iter()
        .map(|&t1| {
            let outer = kernel.cumulative(t - t1);
            t2s.iter().map(|&t2| outer * kernel.cumulative(t1 - t2)).collect()
        })
        .collect()
}

/// Heatmap CSV: first row `t1` then the `t₂` values; each further row starts
/// with its `t₁`.
pub fn heatmap_csv(t1s: &[f64], t2s: &[f64], values: &[Vec<f64>]) -> String {
    let mut out = String::from("t1");
    for t2 in t2s {
        write!(out, ",{t2:.6}").unwrap();
    }
    out.push('\n');
    for (t1, row) in t1s.iter().zip(values) {
        write!(out, "{t1:.6}").unwrap();
        for v in row {
            write!(out, ",{v:.12e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `Σ_{a,b} (−i)² C_ab(t) K_a K_b ψ₀` for windowed couplings
/// `(window, center, K)` and `H_S = 0`.
pub fn second_order_term(
    kernel: Kernel,
    terms: &[(WindowFunction, f64, COperator)],
    psi0: &CVector,
    t: f64,
    spacing: f64,
) -> Result<CVector> {
    let mut out = CVector::zeros(psi0.dim());
    for (wa, ca, ka) in terms {
        for (wb, cb, kb) in terms {
            let c = pair_coefficient(kernel, (wa, *ca), (wb, *cb), t, spacing)?;
            out = &out + &ka.apply(&kb.apply(psi0)).scale(C64::new(-c, 0.0));
        }
    }
    Ok(out)
}

/// Figure-style `first_order_magnitude` table: `t` then one column per kernel.
pub fn first_order_csv(kernels: &[Kernel], window: &WindowFunction, tau: f64, grid: &TimeGrid) -> Result<String> {
    let times = grid.points();
    let columns: Vec<Vec<f64>> =
        kernels.iter().map(|&k| first_order_magnitude(k, window, tau, &times)).collect::<Result<_>>()?;
    let mut out = String::from("t");
    for k in kernels {
        match k.energy() {
            Some(e) => write!(out, ",E={e}").unwrap(),
            None => out.push_str(",ideal"),
        }
    }
    out.push('\n');
    for (i, t) in times.iter().enumerate() {
        write!(out, "{t:.6}").unwrap();
        for c in &columns {
            write!(out, ",{:.12e}", c[i]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::cumulative_kernel_f;
    use crate::measurement::InteractionSchedule;
    use crate::purified::{born_series_terms, solver_grid};
    use crate::tensor::{kron, pauli};

    fn unit() -> WindowFunction {
        WindowFunction::indicator(0.0, 1.0).unwrap()
    }

    /// Independent midpoint-rule oracle.
    fn midpoint_pair(e: f64, s0: f64, u0: f64, t: f64, m: usize) -> f64 {
        let h = 1.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let s = s0 + (i as f64 + 0.5) * h;
            let outer = cumulative_kernel_f(e, t - s);
            for j in 0..m {
                let u = u0 + (j as f64 + 0.5) * h;
                acc += outer * cumulative_kernel_f(e, s - u);
            }
        }
        acc * h * h
    }

    #[test]
    fn first_order_examples() {
        let times = [-5.0, 1.5, 3.0];
        let ideal = first_order_magnitude(Kernel::Ideal, &unit(), 0.0, &times).unwrap();
        assert_eq!(ideal[0], 0.0);
        assert!((ideal[1] - 1.0).abs() < 1e-12 && (ideal[2] - 1.0).abs() < 1e-12);
        for e in [5.0, 10.0] {
            assert!(first_order_magnitude(Kernel::Finite(e), &unit(), 0.0, &[-5.0]).unwrap()[0] < 5e-2);
        }
        let grid: Vec<f64> = (0..=200).map(|k| -3.0 + 0.035 * k as f64).collect();
        let ideal = first_order_magnitude(Kernel::Ideal, &unit(), 0.0, &grid).unwrap();
        let dist = |e: f64| {
            let v = first_order_magnitude(Kernel::Finite(e), &unit(), 0.0, &grid).unwrap();
            v.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        assert!(dist(25.0) < dist(5.0));
    }

    #[test]
    fn ideal_acausal_vanishes() {
        let a = analyze(Kernel::Ideal, &unit(), 0.0, 3.0, 10.0).unwrap();
        assert_eq!(a.acausal, C64::new(0.0, 0.0));
        assert!((a.causal.re - 1.0).abs() < 1e-12);
        assert!(!a.indefinite());
    }

    #[test]
    fn coefficients_match_midpoint_oracle() {
        for e in [2.0, 5.0] {
            let a = analyze(Kernel::Finite(e), &unit(), 0.0, 3.0, 10.0).unwrap();
            let acausal = midpoint_pair(e, 0.0, 3.0, 10.0, 800);
            let causal = midpoint_pair(e, 3.0, 0.0, 10.0, 800);
            assert!((a.acausal.re - acausal).abs() < 1e-6, "{} vs {acausal}", a.acausal.re);
            assert!((a.causal.re - causal).abs() < 1e-6);
        }
    }

    #[test]
    fn coefficient_trends() {
        let rows = coefficient_scan(&[2.0, 5.0, 10.0, 20.0], &unit(), 0.0, 3.0, 10.0).unwrap();
        let acausal: Vec<f64> = rows.iter().map(|r| r.acausal.norm()).collect();
        assert!(acausal.windows(2).all(|w| w[1] < w[0]), "{acausal:?}");
        let causal: Vec<f64> = rows.iter().map(|r| (r.causal.re - 1.0).abs()).collect();
        assert!(causal.windows(2).all(|w| w[1] < w[0]), "{causal:?}");
        assert!(causal[3] < 0.05);
        assert!(rows.iter().all(OrderAnalysis::indefinite));
        let csv = coefficient_scan_csv(&rows);
        assert!(csv.starts_with("E,causal,acausal,ratio\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn refinement_changes_less_than_one_percent() {
        let coarse = pair_coefficient(Kernel::Finite(5.0), (&unit(), 0.0), (&unit(), 3.0), 10.0, 0.01).unwrap();
        let fine = pair_coefficient(Kernel::Finite(5.0), (&unit(), 0.0), (&unit(), 3.0), 10.0, 0.005).unwrap();
        assert!(((coarse - fine) / fine).abs() < 0.01);
    }

    #[test]
    fn late_time_dependence_follows_kernel_tail() {
        // Both outer factors sit in the 1/(E t) tail of F, so the coefficient
        // drifts with t by no more than the tail bound.
        let e = 5.0;
        let at = |t: f64| acausal_coefficient(Kernel::Finite(e), &unit(), 0.0, 3.0, t).unwrap().re;
        let t_sat = 3.0 + 1.0 + 8.0 * std::f64::consts::PI / e;
        let drift = (at(t_sat + 30.0) - at(t_sat)).abs();
        let bound = 2.0 / (std::f64::consts::PI * e * (t_sat - 1.0));
        assert!(drift < bound, "{drift} vs {bound}");
    }

    #[test]
    fn overlapping_windows_rejected() {
        assert!(analyze(Kernel::Finite(5.0), &unit(), 0.0, 0.5, 10.0).is_err());
        assert!(analyze(Kernel::Finite(5.0), &unit(), 0.0, 3.0, 3.5).is_err());
    }

    #[test]
    fn heatmap_examples() {
        let ideal = heatmap_product(Kernel::Ideal, 10.0, &[0.5], &[3.5]);
        assert_eq!(ideal[0][0], 0.0);
        let finite = heatmap_product(Kernel::Finite(5.0), 10.0, &[0.5], &[3.5]);
        let oracle = cumulative_kernel_f(5.0, 9.5) * cumulative_kernel_f(5.0, -3.0);
        assert!(finite[0][0].abs() > 0.0);
        assert!((finite[0][0] - oracle).abs() < 1e-14);
        let outer = heatmap_product(Kernel::Finite(25.0), 100.0, &[0.0], &[-100.0]);
        assert!((outer[0][0] - 1.0).abs() < 1e-3);
        let csv = heatmap_csv(&[0.0, 1.0], &[3.0, 4.0], &heatmap_product(Kernel::Ideal, 10.0, &[0.0, 1.0], &[3.0, 4.0]));
        assert_eq!(csv.lines().next().unwrap(), "t1,3.000000,4.000000");
    }

    #[test]
    fn second_order_matches_born_series() {
        let e = 5.0;
        let k1 = kron(&pauli::x(), &COperator::identity(2)).unwrap().scale_real(0.5);
        let k2 = kron(&pauli::z(), &pauli::x()).unwrap().scale_real(0.5);
        let terms = vec![(unit(), 0.0, k1.clone()), (unit(), 3.0, k2.clone())];
        let schedule = InteractionSchedule::empty(2, vec![2])
            .unwrap()
            .with_term(unit(), 0.0, k1)
            .unwrap()
            .with_term(unit(), 3.0, k2)
            .unwrap();
        let grid = solver_grid(Kernel::Finite(e), &schedule, Some((0.0, 6.0))).unwrap();
        let psi0 = CVector::basis(4, 1);
        let born = born_series_terms(Kernel::Finite(e), &schedule, &psi0, &grid, 2).unwrap();
        let t = 6.0;
        let assembled = second_order_term(Kernel::Finite(e), &terms, &psi0, t, 0.002).unwrap();
        let direct = &born[2][grid.index_of(t).unwrap()];
        assert!((&assembled - direct).norm() < 1e-5, "{}", (&assembled - direct).norm());
    }
}
