//! Acceptance criteria, one PASS/FAIL line each. Oracles are computed here
//! independently of the library routes they check wherever that is possible.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timeless::clock::{cumulative_kernel_f, ideal_step, overlap_convolution, overlap_kernel_f, ClockModel, Kernel, TimeGrid};
use timeless::discrete::{discrete_constraint_residual, discrete_solve, Boundary, DiscreteEvolution};
use timeless::experiments::{run_experiment, ExperimentConfig};
use timeless::measurement::{embed_on_ancilla, purification_unitary, unitary_generator, InteractionSchedule, KrausSet, WindowFunction};
use timeless::order::analyze;
use timeless::purified::{
    born_series_solve, delta_kick_closed_form, evolution_residual, history_roundtrip_check, pm_ideal_history,
    pm_probability, pm_probability_curve, pm_to_translation_check, ready_state, solver_grid, BornSeriesOptions,
    BornSeriesReport, MeasurementEvent, PeriodicOptions, Trajectory,
};
use timeless::tensor::{kron, pauli, random, COperator, CVector};
use timeless::twirled::{kuchar_naive_two_time, two_time_probability_to};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `Si(x)` by quadrature of `sin(u)/u`.
fn si_oracle(x: f64) -> f64 {
    let sinc = |u: f64| if u == 0.0 { 1.0 } else { u.sin() / u };
    simpson(sinc, 0.0, x, 20_000)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    // f(t) = (1/2π) ∫_{−E}^{E} cos(ωt) dω.
    let f_oracle = simpson(|w| (w * PI / 2.0).cos() / (2.0 * PI), -1.0, 1.0, 2000);
    let f = overlap_kernel_f(1.0, PI / 2.0);
    let exact = 2.0 / (PI * PI);
    let f0 = cumulative_kernel_f(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symmetry = (0..20)
        .map(|_| {
            let t = rng.random_range(-50.0..50.0);
            let e = rng.random_range(0.5..30.0);
            (cumulative_kernel_f(e, t) + cumulative_kernel_f(e, -t) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (f - f_oracle).abs() < 1e-10 && (f - exact).abs() < 1e-10 && (f0 - 0.5).abs() < 1e-8 && symmetry < 1e-8 && elapsed < 1.0;
    outcome(
        pass,
        format!("|f - quad| = {:.1e}, |F(0) - 1/2| = {:.1e}, max |F(t)+F(-t)-1| = {symmetry:.1e}, {elapsed:.2}s", (f - f_oracle).abs(), (f0 - 0.5).abs()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    // Kernel values against an independent Si quadrature at a few points.
    let spot = [1.0, 2.5, 7.0]
        .iter()
        .map(|&x| (cumulative_kernel_f(1.0, x) - (0.5 + si_oracle(x) / PI)).abs())
        .fold(0.0, f64::max);
    let tails: Vec<f64> = [1.0, 5.0, 25.0]
        .iter()
        .map(|&e| {
            (0..=49_000)
                .map(|k| 1.0 + 0.001 * k as f64)
                .flat_map(|t| [t, -t])
                .map(|t| (cumulative_kernel_f(e, t) - ideal_step(t)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = spot < 1e-9 && tails[1] < tails[0] && tails[2] < tails[1] && tails[2] < 0.01 && elapsed < 1.0;
    outcome(pass, format!("max_(|t|>=1) |F - Theta| for E = 1, 5, 25: {tails:.5?} (E=25 needs < 0.01), {elapsed:.2}s"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let e = 2.0;
    let mut worst = 0.0f64;
    for t in [-1.3, 0.0, 0.7, 2.9] {
        let ff = overlap_convolution(e, |s| overlap_kernel_f(e, s), t, 400.0, 4000);
        let ffc = overlap_convolution(e, |s| cumulative_kernel_f(e, s), t, 400.0, 4000);
        worst = worst.max((ff - overlap_kernel_f(e, t)).abs()).max((ffc - cumulative_kernel_f(e, t)).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && elapsed < 10.0, format!("max deviation {worst:.2e}, {elapsed:.2}s"))
}

fn projective_copy(basis: &[CVector]) -> COperator {
    purification_unitary(&KrausSet::projective(basis).unwrap()).unwrap()
}

/// Born oracle with explicit matrices: H_S = 0, so only projectors act.
fn born_oracle(psi0: &DMatrix<C64>, a: &DMatrix<C64>, b: &DMatrix<C64>) -> (f64, f64) {
    let pa = a * a.adjoint();
    let pb = b * b.adjoint();
    let first = (&pa * psi0).norm_squared();
    let joint = (&pb * &pa * psi0).norm_squared();
    (first, joint)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let col = |v: [f64; 2]| DMatrix::from_column_slice(2, 1, &[C64::new(v[0], 0.0), C64::new(v[1], 0.0)]);
    let (born_first, born_joint) = born_oracle(&col([1.0, 0.0]), &col([r, r]), &col([1.0, 0.0]));

    let psi0 = CVector::basis(2, 0);
    let h_s = COperator::zeros(2);
    let (pi_plus, pi_zero) = (COperator::projector(&pauli::plus()), COperator::projector(&psi0));
    let clock = ClockModel::periodic(10.0, 32).unwrap();
    let to_joint = two_time_probability_to(&clock, &h_s, &psi0, &pi_plus, 1.0, &pi_zero, 2.0).unwrap().probability;
    let to_first = two_time_probability_to(&clock, &h_s, &psi0, &pi_plus, 1.0, &COperator::identity(2), 2.0).unwrap().probability;

    let schedule = InteractionSchedule::empty(2, vec![2, 2]).unwrap();
    let dims = schedule.dims();
    let events = [
        MeasurementEvent { time: 1.0, unitary: embed_on_ancilla(&projective_copy(&[pauli::plus(), pauli::minus()]), &dims, 0).unwrap() },
        MeasurementEvent {
            time: 2.0,
            unitary: embed_on_ancilla(&projective_copy(&[CVector::basis(2, 0), CVector::basis(2, 1)]), &dims, 1).unwrap(),
        },
    ];
    let grid = TimeGrid::new(0.0, 3.0, 31).unwrap();
    let pm = pm_ideal_history(&schedule, &events, &ready_state(&psi0, &[2, 2]), &grid).unwrap();
    let pm_first = pm_probability(&pm, &[(0, 0)], 3.0).unwrap().probability;
    let pm_joint = pm_probability(&pm, &[(0, 0), (1, 0)], 3.0).unwrap().probability;

    let firsts = [born_first, to_first, pm_first];
    let joints = [born_joint, to_joint, pm_joint];
    let spread = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (born_first - 0.5).abs() < 1e-12
        && (born_joint - 0.25).abs() < 1e-12
        && spread(&firsts) < 1e-4
        && spread(&joints) < 1e-4
        && elapsed < 30.0;
    outcome(
        pass,
        format!("P(+): Born {born_first:.6} TO {to_first:.6} PM {pm_first:.6}; P(+,0): Born {born_joint:.6} TO {to_joint:.6} PM {pm_joint:.6}, {elapsed:.2}s"),
    )
}

fn kick_run() -> &'static (Trajectory, BornSeriesReport, f64) {
    static RUN: OnceLock<(Trajectory, BornSeriesReport, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let schedule = InteractionSchedule::empty(2, vec![])
            .unwrap()
            .with_term(WindowFunction::indicator(0.0, 1.0).unwrap(), 0.0, pauli::x().scale_real(0.5))
            .unwrap();
        let kernel = Kernel::Finite(5.0);
        let grid = solver_grid(kernel, &schedule, None).unwrap();
        let (traj, report) = born_series_solve(kernel, &schedule, &CVector::basis(2, 0), &grid, &BornSeriesOptions::default()).unwrap();
        (traj, report, start.elapsed().as_secs_f64())
    })
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (traj, report, solve_time) = kick_run();
    let residual = evolution_residual(traj).unwrap();
    let roundtrip = history_roundtrip_check(traj).unwrap();
    let elapsed = solve_time + start.elapsed().as_secs_f64();
    let pass = report.converged && report.orders_used <= 12 && residual < 1e-5 && roundtrip < 1e-4 && elapsed < 60.0;
    outcome(
        pass,
        format!("orders {}, residual {residual:.2e}, roundtrip {roundtrip:.2e}, {elapsed:.2}s", report.orders_used),
    )
}

/// `1 + 2F Σ_{N=1}^{50} (−iK/2)^N` with plain matrices.
fn kick_series_oracle(k: &DMatrix<C64>, f: f64) -> DMatrix<C64> {
    let n = k.nrows();
    let step = k * C64::new(0.0, -0.5);
    let mut power = DMatrix::<C64>::identity(n, n);
    let mut sum = DMatrix::<C64>::zeros(n, n);
    for _ in 0..50 {
        power = &power * &step;
        sum += &power;
    }
    DMatrix::<C64>::identity(n, n) + sum * C64::new(2.0 * f, 0.0)
}

fn criterion_6() -> Outcome {
    let x = pauli::x();
    let closed = delta_kick_closed_form(&x, 0.5).unwrap().singular_values();
    let mut oracle: Vec<f64> = kick_series_oracle(x.as_matrix(), 0.5).singular_values().iter().copied().collect();
    oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sv_gap = closed.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sv_exact = closed.iter().map(|s| (s - 2.0 / 5f64.sqrt()).abs()).fold(0.0, f64::max);
    let defect = delta_kick_closed_form(&x, 1.0).unwrap().unitarity_defect();
    let (traj, _, _) = kick_run();
    let deviation = traj.norms().iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);
    let pass = sv_gap < 1e-8 && sv_exact < 1e-8 && defect < 1e-10 && deviation > 1e-3;
    outcome(
        pass,
        format!("singular values {closed:.10?} (oracle gap {sv_gap:.1e}), F=1 unitarity defect {defect:.1e}, max |norm-1| {deviation:.2e}"),
    )
}

/// Midpoint rule for `∫∫ F(t−s)F(s−u)` over unit windows at `s0`, `u0`.
fn pair_oracle(e: f64, s0: f64, u0: f64, t: f64, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let s = s0 + (i as f64 + 0.5) * h;
        let outer = cumulative_kernel_f(e, t - s);
        acc += outer * (0..m).map(|j| cumulative_kernel_f(e, s - u0 - (j as f64 + 0.5) * h)).sum::<f64>();
    }
    acc * h * h
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let w = WindowFunction::indicator(0.0, 1.0).unwrap();
    let ideal = analyze(Kernel::Ideal, &w, 0.0, 3.0, 10.0).unwrap();
    let energies = [2.0, 5.0, 10.0, 20.0];
    let rows: Vec<_> = energies.iter().map(|&e| analyze(Kernel::Finite(e), &w, 0.0, 3.0, 10.0).unwrap()).collect();
    let oracle_gap = energies
        .iter()
        .zip(&rows)
        .map(|(&e, r)| (r.acausal.re - pair_oracle(e, 0.0, 3.0, 10.0, 400)).abs())
        .fold(0.0, f64::max);
    let acausal: Vec<f64> = rows.iter().map(|r| r.acausal.norm()).collect();
    let causal20 = rows[3].causal.re;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ideal.acausal.norm() == 0.0
        && acausal[1] > 1e-3
        && acausal.windows(2).all(|p| p[1] < p[0])
        && (causal20 - 1.0).abs() < 0.05
        && oracle_gap < 1e-5
        && elapsed < 120.0;
    let signed: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.acausal.re)).collect();
    outcome(
        pass,
        format!(
            "ideal acausal {:.1e}; acausal(E=2,5,10,20) = {signed:?} (E=5 needs |.| > 1e-3); causal(20) = {causal20:.5}; oracle gap {oracle_gap:.1e}, {elapsed:.2}s",
            ideal.acausal.norm()
        ),
    )
}

fn criterion_8() -> Outcome {
    let k = kron(&pauli::x(), &pauli::x()).unwrap().scale_real(0.5);
    let schedule = InteractionSchedule::empty(2, vec![2])
        .unwrap()
        .with_term(WindowFunction::indicator(0.0, 1.0).unwrap(), 0.0, k)
        .unwrap();
    let psi0 = ready_state(&CVector::basis(2, 0), &[2]);
    let kernel = Kernel::Finite(5.0);
    let grid = solver_grid(kernel, &schedule, None).unwrap();
    let (traj, _) = born_series_solve(kernel, &schedule, &psi0, &grid, &BornSeriesOptions::default()).unwrap();
    let p0 = pm_probability_curve(&traj, &[(0, 0)]).unwrap();
    let p1 = pm_probability_curve(&traj, &[(0, 1)]).unwrap();
    let sum_gap = p0.iter().zip(&p1).map(|(a, b)| (a.probability + b.probability - 1.0).abs()).fold(0.0, f64::max);
    let den: Vec<f64> = p0.iter().map(|p| p.denominator).collect();
    let ratio = den.iter().copied().fold(0.0, f64::max) / den.iter().copied().fold(f64::INFINITY, f64::min);

    let ideal = pm_ideal_history(&schedule, &[], &psi0, &grid).unwrap();
    let q0 = pm_probability_curve(&ideal, &[(0, 0)]).unwrap();
    let q1 = pm_probability_curve(&ideal, &[(0, 1)]).unwrap();
    let ideal_sum_gap = q0.iter().zip(&q1).map(|(a, b)| (a.probability + b.probability - 1.0).abs()).fold(0.0, f64::max);
    let ideal_den = q0.iter().map(|p| (p.denominator - q0[0].denominator).abs()).fold(0.0, f64::max);
    let pass = sum_gap < 1e-8 && ideal_sum_gap < 1e-8 && ratio > 1.0 + 1e-3 && ideal_den < 1e-8;
    outcome(
        pass,
        format!("max |sum - 1| {sum_gap:.1e} (ideal {ideal_sum_gap:.1e}); E=5 denominator max/min {ratio:.5}; ideal denominator spread {ideal_den:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let clock = ClockModel::discrete(10.0, 32).unwrap();
    let psi0 = CVector::basis(2, 0);
    let (tau, tau_prime) = (1.0, 1.0 + clock.orthogonal_step());
    let naive = kuchar_naive_two_time(&clock, &COperator::zeros(2), &psi0, &pauli::plus(), tau, &psi0, tau_prime).unwrap();
    // H_S = 0: |⟨0|+⟩|²·|⟨+|0⟩|².
    let born = pauli::plus().inner(&psi0).norm_sqr().powi(2);
    let pass = naive.abs() < 1e-12 && (born - 0.25).abs() < 1e-12;
    outcome(pass, format!("naive {naive:.1e} vs Born {born:.6}: discrepancy {:.6} reported", (born - naive).abs()))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let steps = (0..64).map(|_| random::unitary(4, &mut rng)).collect();
    let evo = DiscreteEvolution::new(steps, Boundary::OpenLine).unwrap();
    let sol = discrete_solve(&evo, &random::state(4, &mut rng)).unwrap();
    let norm_gap = sol.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max);
    let residual = discrete_constraint_residual(&evo, &sol.states).unwrap();

    let e = 4.0;
    let step = PI / e;
    let h_s = pauli::y().scale_real(0.9);
    let schedule = InteractionSchedule::new(h_s, vec![2]).unwrap();
    let copy = embed_on_ancilla(&projective_copy(&[pauli::plus(), pauli::minus()]), &schedule.dims(), 0).unwrap();
    let count = 10;
    let lattice = DiscreteEvolution::from_lattice(&schedule.free_extended(), e, &[(4, copy.clone())], count, Boundary::OpenLine).unwrap();
    let psi0 = ready_state(&CVector::basis(2, 0), &[2]);
    let discrete = discrete_solve(&lattice, &psi0).unwrap().states;
    let grid = TimeGrid::from_step(0.0, step, count + 1).unwrap();
    let pm = pm_ideal_history(&schedule, &[MeasurementEvent { time: 4.0 * step, unitary: copy }], &psi0, &grid).unwrap();
    let lattice_gap = discrete.iter().zip(pm.states()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let pass = norm_gap < 1e-12 && residual < 1e-12 && lattice_gap < 1e-8;
    outcome(pass, format!("max |norm-1| {norm_gap:.1e}, constraint residual {residual:.1e}, lattice gap {lattice_gap:.1e}"))
}

fn criterion_11() -> Outcome {
    let clock = ClockModel::periodic(3.0, 16).unwrap();
    let copy = projective_copy(&[CVector::basis(2, 0), CVector::basis(2, 1)]);
    let schedule = InteractionSchedule::empty(2, vec![2])
        .unwrap()
        .with_term(WindowFunction::unit_indicator(0.0, 1.0).unwrap(), 2.0, unitary_generator(&copy).unwrap())
        .unwrap();
    let ideal = pm_to_translation_check(&clock, &schedule, &pauli::plus(), 1, 7.0, &PeriodicOptions { ideal: true, ..Default::default() }).unwrap();
    let finite = pm_to_translation_check(&clock, &schedule, &pauli::plus(), 1, 7.0, &PeriodicOptions::default()).unwrap();
    let (di, df) = ((ideal.lhs - ideal.rhs).abs(), (finite.lhs - finite.rhs).abs());
    outcome(
        di < 1e-6 && df < 1e-3,
        format!("ideal {:.8} vs {:.8} ({di:.1e}); finite {:.8} vs {:.8} ({df:.1e})", ideal.lhs, ideal.rhs, finite.lhs, finite.rhs),
    )
}

fn criterion_12() -> Outcome {
    let run = |dir: &std::path::Path| {
        let cfg = ExperimentConfig::new("acceptance-suite", dir, 12);
        let manifest = run_experiment(&cfg).unwrap();
        let mut files: Vec<(String, String)> = manifest
            .outputs
            .iter()
            .filter(|o| o.path.ends_with(".csv"))
            .map(|o| {
                let bytes = std::fs::read(dir.join(&o.path)).unwrap();
                assert_eq!(timeless::experiments::sha256_hex(&bytes), o.sha256);
                (o.path.clone(), o.sha256.clone())
            })
            .collect();
        files.sort();
        (files, manifest.passed())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, suite_passed) = run(a.path());
    let (second, _) = run(b.path());
    let identical = !first.is_empty() && first == second;
    outcome(identical, format!("{} CSV files, hashes identical: {identical}; suite checks all passed: {suite_passed}", first.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("kernel exactness", criterion_1),
        ("kernel tail vs ideal step", criterion_2),
        ("convolution identities", criterion_3),
        ("ideal-clock equivalence", criterion_4),
        ("non-ideal evolution self-consistency", criterion_5),
        ("nonunitarity", criterion_6),
        ("indefinite temporal order", criterion_7),
        ("PM probability structure", criterion_8),
        ("naive double conditioning", criterion_9),
        ("discrete-time unitarity", criterion_10),
        ("PM to twirled translation", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!("{} criterion {:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
